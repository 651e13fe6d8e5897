//! Benchmark engine for instruction granularity in grid-world household
//! tasks: simulator, feature space, ranked rule sets, novelty-based width
//! computation, templated instructions, dataset generation and evaluation.

pub mod dataset;
pub mod features;
pub mod harness;
pub mod instructor;
pub mod pddl;
pub mod planner;
pub mod rules;
pub mod tasks;
pub mod world;
