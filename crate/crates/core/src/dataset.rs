//! Instance and episode generation, granularity binning, mixture sampling
//! and corpus statistics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, FeatureError, FeatureVector};
use crate::harness::{self, Agent, AgentContext, FailureMode};
use crate::instructor::{self, Ablation, InstructorError, InstructorState, Realizer, Template};
use crate::planner::{self, PlannerError, Subproblem};
use crate::rules::{RuleError, RuleSet};
use crate::tasks;
use crate::world::{self, Action, GoalSpec, ObservationGrid, WorldError, WorldState};

pub const EPISODE_SCHEMA_VERSION: u32 = 1;
/// One evaluation instance per this many generated instances (50 + 10).
pub const EVAL_EVERY: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("n must be at least 1")]
    EmptyRequest,
    #[error("class {0} has nonzero ratio but no episodes")]
    EmptyClass(GranClass),
    #[error("invalid mixture ratio: {0}")]
    InvalidRatio(String),
    #[error("could not find {wanted} distinct solvable instances of {task} in {tried} layouts")]
    TooFewInstances { task: String, wanted: usize, tried: usize },
    #[error("I/O: {0}")]
    Io(String),
    #[error("malformed episode line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Instructor(#[from] InstructorError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Instances
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSet {
    pub task_id: String,
    pub seed: u64,
    /// Training instances first, then evaluation instances.
    pub instances: Vec<WorldState>,
    pub n_train: usize,
}

impl InstanceSet {
    pub fn split_of(&self, i: usize) -> Split {
        if i < self.n_train {
            Split::Train
        } else {
            Split::Eval
        }
    }

    pub fn train(&self) -> &[WorldState] {
        &self.instances[..self.n_train]
    }

    pub fn eval(&self) -> &[WorldState] {
        &self.instances[self.n_train..]
    }
}

/// Whether BFWS reaches the goal from `state` within the default budget.
pub fn solvable(state: &WorldState) -> Result<bool, DatasetError> {
    let task = tasks::lookup(state.task_id)?;
    let sub = Subproblem::for_goal(state, &task.roster(state))?;
    match planner::bfws_solve(&sub) {
        Ok(p) => Ok(p.solved),
        Err(PlannerError::BudgetExceeded { .. }) => Ok(false),
        Err(e) => Err(e.into()),
    }
}

/// `n` distinct solvable instances, deterministic in `seed`. Layout seeds
/// and size parameters (uniform over the task's range) are drawn from a
/// ChaCha8 stream; the last `n / 6` instances form the evaluation split.
pub fn generate_instances(task_id: &str, n: usize, seed: u64) -> Result<InstanceSet, DatasetError> {
    if n == 0 {
        return Err(DatasetError::EmptyRequest);
    }
    let task = tasks::lookup(task_id)?;
    let param = task.size_param();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut tried = 0;
    let limit = 20 * n + 100;
    while out.len() < n {
        if tried >= limit {
            return Err(DatasetError::TooFewInstances { task: task_id.into(), wanted: n, tried });
        }
        // Draw a batch of candidates sequentially, then check them in parallel.
        let want = n - out.len();
        let mut batch = Vec::with_capacity(want);
        for _ in 0..want {
            tried += 1;
            // 53 bits keep seeds exact in any JSON reader.
            let layout_seed = rng.next_u64() >> 11;
            let size = rng.gen_range(param.min..=param.max);
            let state = task.init_instance(layout_seed, &tasks::size_params(task, size))?;
            if seen.insert(state.dynamic_key()) {
                batch.push(state);
            }
        }
        let ok = batch.par_iter().map(solvable).collect::<Result<Vec<_>, _>>()?;
        out.extend(batch.into_iter().zip(ok).filter(|(_, ok)| *ok).map(|(s, _)| s));
    }
    out.truncate(n);
    let n_train = n - n / EVAL_EVERY;
    Ok(InstanceSet { task_id: task_id.into(), seed, instances: out, n_train })
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Regression,
    Stagnation,
    Timeout,
}

impl From<FailureMode> for Outcome {
    fn from(m: FailureMode) -> Self {
        match m {
            FailureMode::Regression => Outcome::Regression,
            FailureMode::Stagnation => Outcome::Stagnation,
            FailureMode::TimeoutOther => Outcome::Timeout,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Success => "success",
            Outcome::Regression => "regression",
            Outcome::Stagnation => "stagnation",
            Outcome::Timeout => "timeout",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRef {
    pub task_id: String,
    pub layout_seed: u64,
    pub size_params: BTreeMap<String, u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl InstanceRef {
    pub fn of(state: &WorldState) -> Self {
        InstanceRef {
            task_id: state.task_id.to_string(),
            layout_seed: state.layout_seed,
            size_params: (*state.size_params).clone(),
            split: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub observation: ObservationGrid,
    /// Instruction shown at this step (empty under the `none` ablation).
    pub instruction: String,
    pub rule: Option<String>,
    pub action: Action,
    /// Feature vector before the action.
    pub vector: FeatureVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub v: u32,
    pub instance: InstanceRef,
    pub rank: u32,
    pub agent: String,
    pub ablation: Ablation,
    pub goal: GoalSpec,
    pub steps: Vec<EpisodeStep>,
    pub final_vector: FeatureVector,
    pub rule_calls: u32,
    pub outcome: Outcome,
    /// Rule width at each activation; null when it exceeds the search limits.
    pub widths_seen: Vec<Option<usize>>,
    /// Instruction text issued at each activation.
    pub instructions: Vec<String>,
    /// Set when the episode ended abnormally, e.g. the instructor was stuck.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect: Option<String>,
}

impl Episode {
    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOptions {
    pub max_steps: u32,
    pub ablation: Ablation,
    pub template: Template,
    /// Compute the rule width at every activation.
    pub record_widths: bool,
    pub width_k_max: usize,
    pub width_budget: usize,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        EpisodeOptions {
            max_steps: 300,
            ablation: Ablation::Full,
            template: Template::Step,
            record_widths: true,
            width_k_max: planner::DEFAULT_K_MAX,
            width_budget: 50_000,
        }
    }
}

/// Runs the instructor loop with `agent` choosing actions, logging each
/// step's observation, instruction and action. The instructor getting stuck
/// is recorded as a defect and the episode is labelled as a failure.
pub fn record_episode(
    instance: &WorldState,
    rs: &RuleSet,
    agent: &mut dyn Agent,
    opts: &EpisodeOptions,
) -> Result<Episode, DatasetError> {
    let task = tasks::lookup(instance.task_id)?;
    let roster = task.roster(instance);
    let realizer = Realizer::new(instance.task_id, rs.rank).with_template(opts.template);
    let mut state = instance.clone();
    let mut inst = InstructorState::default();
    let mut steps = Vec::new();
    let mut widths_seen = Vec::new();
    let mut instructions = Vec::new();
    let mut text = String::new();
    let mut defect = None;
    let mut success = false;
    loop {
        let v = roster.eval(&state)?;
        if features::goal_holds(&v, &state.goal.conjuncts)? {
            success = true;
            break;
        }
        if steps.len() as u32 >= opts.max_steps {
            break;
        }
        let prev_id = inst.activation_id;
        inst = match instructor::select_active(rs, &v, &inst, &state.goal) {
            Ok(i) => i,
            Err(InstructorError::Stuck { .. }) => {
                defect = Some(format!("no applicable rule at step {}", steps.len()));
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let rule = inst.active_rule.as_deref().and_then(|id| rs.rule(id));
        if let Some(rule) = rule.filter(|_| inst.activation_id != prev_id) {
            let instr = realizer.realize(rule, inst.activation_id)?;
            text = instructor::ablate(&instr, opts.ablation, task.goal_text()).text;
            instructions.push(text.clone());
            if opts.record_widths {
                let w = planner::rule_width_with_budget(rule, &state, &roster, opts.width_k_max, opts.width_budget).ok();
                widths_seen.push(w);
            }
        }
        let action = agent.act(&AgentContext { state: &state, roster: &roster, vector: &v, rule, instructor: &inst });
        steps.push(EpisodeStep {
            observation: world::render_observation(&state),
            instruction: text.clone(),
            rule: inst.active_rule.clone(),
            action,
            vector: v,
        });
        state = world::step(&state, action)?;
    }
    let mut ep = Episode {
        v: EPISODE_SCHEMA_VERSION,
        instance: InstanceRef::of(instance),
        rank: rs.rank,
        agent: agent.name(),
        ablation: opts.ablation,
        goal: (*state.goal).clone(),
        steps,
        final_vector: roster.eval(&state)?,
        rule_calls: inst.rule_calls,
        outcome: Outcome::Success,
        widths_seen,
        instructions,
        defect,
    };
    if !success {
        ep.outcome = harness::classify_failure(&ep).into();
    }
    Ok(ep)
}

/// Re-simulates an episode's actions and checks the logged observations.
pub fn replay_matches(instance: &WorldState, ep: &Episode) -> Result<bool, DatasetError> {
    let mut s = instance.clone();
    for step in &ep.steps {
        if world::render_observation(&s) != step.observation {
            return Ok(false);
        }
        s = world::step(&s, step.action)?;
    }
    Ok(true)
}

pub fn write_jsonl<W: Write>(mut w: W, episodes: &[Episode]) -> Result<(), DatasetError> {
    for ep in episodes {
        serde_json::to_writer(&mut w, ep).map_err(|e| DatasetError::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Episode>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ep = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed { line: i + 1, reason: e.to_string() })?;
        out.push(ep);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Granularity classes
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GranClass {
    F,
    M,
    C,
}

impl GranClass {
    pub const ALL: [GranClass; 3] = [GranClass::F, GranClass::M, GranClass::C];
}

impl fmt::Display for GranClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GranularityBinning {
    pub task_id: String,
    pub class_of: BTreeMap<u32, GranClass>,
    pub widths: BTreeMap<u32, usize>,
    /// Widths each class draws from. With fewer than three distinct widths
    /// a class may share its widths with another.
    pub members: BTreeMap<GranClass, Vec<usize>>,
    pub degenerate: bool,
}

impl GranularityBinning {
    /// Ranks whose width belongs to `class`'s members.
    pub fn ranks_of(&self, class: GranClass) -> Vec<u32> {
        let m = &self.members[&class];
        self.widths.iter().filter(|(_, w)| m.contains(w)).map(|(r, _)| *r).collect()
    }
}

/// Tercile split of the distinct widths: the i-th of d sorted widths goes
/// to group ⌊3i/d⌋. Fewer than three distinct widths use priority-fill:
/// F takes the minimum, C the maximum, and M duplicates C (or everything
/// is one class when all widths agree); the result is flagged degenerate.
pub fn bin_granularity(task_id: &str, widths_by_rank: &BTreeMap<u32, usize>) -> GranularityBinning {
    let distinct: Vec<usize> = widths_by_rank.values().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let d = distinct.len();
    let mut members: BTreeMap<GranClass, Vec<usize>> = GranClass::ALL.iter().map(|c| (*c, Vec::new())).collect();
    let mut class_of_width = BTreeMap::new();
    match d {
        0 => {}
        1 => {
            for c in GranClass::ALL {
                members.get_mut(&c).unwrap().push(distinct[0]);
            }
            class_of_width.insert(distinct[0], GranClass::F);
        }
        2 => {
            members.get_mut(&GranClass::F).unwrap().push(distinct[0]);
            members.get_mut(&GranClass::M).unwrap().push(distinct[1]);
            members.get_mut(&GranClass::C).unwrap().push(distinct[1]);
            class_of_width.insert(distinct[0], GranClass::F);
            class_of_width.insert(distinct[1], GranClass::C);
        }
        _ => {
            for (i, &w) in distinct.iter().enumerate() {
                let c = GranClass::ALL[3 * i / d];
                members.get_mut(&c).unwrap().push(w);
                class_of_width.insert(w, c);
            }
        }
    }
    GranularityBinning {
        task_id: task_id.into(),
        class_of: widths_by_rank.iter().map(|(r, w)| (*r, class_of_width[w])).collect(),
        widths: widths_by_rank.clone(),
        members,
        degenerate: d < 3,
    }
}

// ---------------------------------------------------------------------------
// Mixtures
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MixtureRatio {
    pub f: u32,
    pub m: u32,
    pub c: u32,
}

impl MixtureRatio {
    pub const PURE_F: MixtureRatio = MixtureRatio { f: 1, m: 0, c: 0 };
    pub const CENTROID: MixtureRatio = MixtureRatio { f: 1, m: 1, c: 1 };
    pub const AXIAL_F: MixtureRatio = MixtureRatio { f: 3, m: 1, c: 1 };

    pub fn window(&self) -> u32 {
        self.f + self.m + self.c
    }

    pub fn weight(&self, class: GranClass) -> u32 {
        match class {
            GranClass::F => self.f,
            GranClass::M => self.m,
            GranClass::C => self.c,
        }
    }
}

impl FromStr for MixtureRatio {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::InvalidRatio(format!("expected f:m:c, got `{s}`"));
        let parts: Vec<u32> = s.split(':').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
        let [f, m, c] = parts[..] else { return Err(bad()) };
        let r = MixtureRatio { f, m, c };
        if r.window() == 0 {
            return Err(DatasetError::InvalidRatio("all weights are zero".into()));
        }
        Ok(r)
    }
}

impl fmt::Display for MixtureRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.f, self.m, self.c)
    }
}

/// One draw of a mixture: the class and an index into that class's pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureDraw {
    pub class: GranClass,
    pub index: usize,
}

/// Deterministic stratified sampling. Every window of f+m+c draws holds
/// exactly f, m and c draws of each class in shuffled order; within a
/// class, pool items are drawn without replacement and reshuffled once a
/// pass is exhausted.
pub fn sample_mixture(
    pool_sizes: &BTreeMap<GranClass, usize>,
    ratio: MixtureRatio,
    draws: usize,
    seed: u64,
) -> Result<Vec<MixtureDraw>, DatasetError> {
    if ratio.window() == 0 {
        return Err(DatasetError::InvalidRatio("all weights are zero".into()));
    }
    for c in GranClass::ALL {
        if ratio.weight(c) > 0 && pool_sizes.get(&c).copied().unwrap_or(0) == 0 {
            return Err(DatasetError::EmptyClass(c));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passes: BTreeMap<GranClass, Vec<usize>> = BTreeMap::new();
    let mut out = Vec::with_capacity(draws);
    let mut window: Vec<GranClass> = Vec::new();
    while out.len() < draws {
        window.clear();
        for c in GranClass::ALL {
            window.extend(std::iter::repeat_n(c, ratio.weight(c) as usize));
        }
        window.shuffle(&mut rng);
        for &class in &window {
            if out.len() == draws {
                break;
            }
            let pass = passes.entry(class).or_default();
            if pass.is_empty() {
                pass.extend(0..pool_sizes[&class]);
                pass.shuffle(&mut rng);
                pass.reverse();
            }
            out.push(MixtureDraw { class, index: pass.pop().expect("refilled") });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub rank: u32,
    pub n_instructions: usize,
    pub len_mean: f64,
    pub len_sd: f64,
    pub unique_tokens: usize,
    pub plan_mean: f64,
    pub plan_sd: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub rows: Vec<StatsRow>,
}

/// Mean and population standard deviation; values are sorted first so the
/// result does not depend on input order.
fn mean_sd(mut xs: Vec<f64>) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / n).sqrt())
}

/// Per-rank instruction and plan statistics: instruction count, token
/// length, vocabulary size and episode length.
pub fn dataset_stats(episodes: &[Episode]) -> StatsTable {
    let mut by_rank: BTreeMap<u32, Vec<&Episode>> = BTreeMap::new();
    for ep in episodes {
        by_rank.entry(ep.rank).or_default().push(ep);
    }
    let rows = by_rank
        .into_iter()
        .map(|(rank, eps)| {
            let mut lens = Vec::new();
            let mut vocab = BTreeSet::new();
            for text in eps.iter().flat_map(|e| &e.instructions) {
                lens.push(text.split_whitespace().count() as f64);
                vocab.extend(instructor::normalized_tokens(text).filter(|t| !t.is_empty()));
            }
            let n_instructions = lens.len();
            let (len_mean, len_sd) = mean_sd(lens);
            let (plan_mean, plan_sd) = mean_sd(eps.iter().map(|e| e.steps.len() as f64).collect());
            StatsRow { rank, n_instructions, len_mean, len_sd, unique_tokens: vocab.len(), plan_mean, plan_sd }
        })
        .collect();
    StatsTable { rows }
}

impl StatsTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,n_instructions,len_mean,len_sd,unique_tokens,plan_mean,plan_sd\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.3},{:.3},{},{:.3},{:.3}\n",
                r.rank, r.n_instructions, r.len_mean, r.len_sd, r.unique_tokens, r.plan_mean, r.plan_sd
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Whole-corpus generation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub tasks: Vec<String>,
    /// Restrict to one rank; all ranks otherwise.
    pub rank: Option<u32>,
    pub n_instances: usize,
    pub seed: u64,
    pub agent: String,
    pub episode: EpisodeOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub instances: Vec<InstanceSet>,
    /// Sorted by (task, instance index, rank).
    pub episodes: Vec<Episode>,
    pub binnings: Vec<GranularityBinning>,
}

/// Most common value, smallest on ties.
fn mode(xs: &[usize]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &x in xs {
        *counts.entry(x).or_default() += 1;
    }
    counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(x, _)| x)
}

/// Instances, one episode per (instance, rank), and a granularity binning
/// per task whose rank widths are the modal instruction width of that
/// rank's episodes. Episodes run in parallel with seeds derived from the
/// corpus seed and the episode's position; output order is fixed.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus, harness::HarnessError> {
    let mut instances = Vec::new();
    let mut jobs = Vec::new();
    for task_id in &cfg.tasks {
        let task = tasks::lookup(task_id).map_err(DatasetError::from)?;
        let set = generate_instances(task_id, cfg.n_instances, cfg.seed)?;
        let ranks: Vec<RuleSet> =
            task.rule_sets().into_iter().filter(|rs| cfg.rank.is_none_or(|r| r == rs.rank)).collect();
        for i in 0..set.instances.len() {
            for rs in &ranks {
                jobs.push((instances.len(), i, rs.clone()));
            }
        }
        instances.push(set);
    }
    harness::make_agent(&cfg.agent, 0)?;
    let episodes = jobs
        .par_iter()
        .enumerate()
        .map(|(j, (t, i, rs))| {
            let set = &instances[*t];
            let mut agent = harness::make_agent(&cfg.agent, harness::episode_seed(cfg.seed, j as u64))?;
            let mut ep = record_episode(&set.instances[*i], rs, agent.as_mut(), &cfg.episode)?;
            ep.instance.split = Some(set.split_of(*i));
            Ok(ep)
        })
        .collect::<Result<Vec<_>, harness::HarnessError>>()?;
    let mut binnings = Vec::new();
    for set in &instances {
        let mut per_rank: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for ep in episodes.iter().filter(|e| e.instance.task_id == set.task_id) {
            if let Some(w) = ep.widths_seen.iter().flatten().max() {
                per_rank.entry(ep.rank).or_default().push(*w);
            }
        }
        let widths: BTreeMap<u32, usize> = per_rank.iter().filter_map(|(r, ws)| mode(ws).map(|m| (*r, m))).collect();
        if !widths.is_empty() {
            binnings.push(bin_granularity(&set.task_id, &widths));
        }
    }
    Ok(Corpus { instances, episodes, binnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn widths(pairs: &[(u32, usize)]) -> BTreeMap<u32, usize> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn even_terciles() {
        let b = bin_granularity("t", &widths(&[(0, 0), (1, 1), (2, 2), (3, 3), (4, 4), (5, 5)]));
        assert_eq!(b.members[&GranClass::F], vec![0, 1]);
        assert_eq!(b.members[&GranClass::M], vec![2, 3]);
        assert_eq!(b.members[&GranClass::C], vec![4, 5]);
        assert!(!b.degenerate);
    }

    #[test]
    fn priority_fill_two_widths() {
        let b = bin_granularity("t", &widths(&[(0, 0), (1, 1)]));
        assert_eq!(b.members[&GranClass::F], vec![0]);
        assert_eq!(b.members[&GranClass::M], vec![1]);
        assert_eq!(b.members[&GranClass::C], vec![1]);
        assert_eq!(b.class_of[&1], GranClass::C);
        assert!(b.degenerate);
    }

    #[test]
    fn single_width_is_degenerate() {
        let b = bin_granularity("t", &widths(&[(0, 2), (1, 2)]));
        for c in GranClass::ALL {
            assert_eq!(b.members[&c], vec![2]);
        }
        assert!(b.degenerate);
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("3:1:1".parse::<MixtureRatio>().unwrap(), MixtureRatio::AXIAL_F);
        assert!("0:0:0".parse::<MixtureRatio>().is_err());
        assert!("1:1".parse::<MixtureRatio>().is_err());
    }

    #[test]
    fn empty_class_is_rejected() {
        let pools: BTreeMap<_, _> = [(GranClass::F, 3), (GranClass::M, 0), (GranClass::C, 2)].into_iter().collect();
        assert_eq!(sample_mixture(&pools, MixtureRatio::CENTROID, 9, 1), Err(DatasetError::EmptyClass(GranClass::M)));
        assert!(sample_mixture(&pools, MixtureRatio::PURE_F, 9, 1).is_ok());
    }

    #[test]
    fn mode_prefers_smaller_on_ties() {
        assert_eq!(mode(&[3, 2, 3, 2]), Some(2));
        assert_eq!(mode(&[]), None);
    }
}
