//! Scripted agents, evaluation runs, failure classification and the
//! statistics used to relate instruction metrics to success.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use once_cell::sync::Lazy;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::beta::beta_reg;
use statrs::function::factorial::ln_binomial;
use thiserror::Error;

use crate::dataset::{self, Episode, EpisodeOptions, Outcome};
use crate::features::{FeatureVector, Roster};
use crate::instructor::InstructorState;
use crate::planner::{self, Target};
use crate::rules::{ConstraintOp, Rule, RuleSet};
use crate::world::{self, Action, GoalSpec, WorldState};

/// Steps of an unchanged feature vector that count as stagnation.
pub const T_STALL: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("invalid agent parameter: {0}")]
    InvalidAgentParam(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
}

// ---------------------------------------------------------------------------
// Agents
// ---------------------------------------------------------------------------

/// What an agent sees before choosing an action.
pub struct AgentContext<'a> {
    pub state: &'a WorldState,
    pub roster: &'a Roster,
    pub vector: &'a FeatureVector,
    pub rule: Option<&'a Rule>,
    pub instructor: &'a InstructorState,
}

pub trait Agent: Send {
    fn name(&self) -> String;
    /// Must return an action legal in `ctx.state`.
    fn act(&mut self, ctx: &AgentContext<'_>) -> Action;
}

fn random_action(state: &WorldState, rng: &mut ChaCha8Rng) -> Action {
    *world::legal_actions(state).choose(rng).expect("turning is always legal")
}

/// Follows BFWS plans for each activated rule, replanning whenever the
/// activation changes or the world diverges from the plan.
pub struct OracleAgent {
    plan: Vec<Action>,
    activation_id: Option<u32>,
    expected: Option<Vec<u32>>,
    rng: ChaCha8Rng,
}

impl OracleAgent {
    pub fn new(seed: u64) -> Self {
        OracleAgent { plan: Vec::new(), activation_id: None, expected: None, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Agent for OracleAgent {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn act(&mut self, ctx: &AgentContext<'_>) -> Action {
        let key = ctx.state.dynamic_key();
        let stale = self.activation_id != Some(ctx.instructor.activation_id)
            || self.expected.as_ref() != Some(&key)
            || self.plan.is_empty();
        if stale {
            self.activation_id = Some(ctx.instructor.activation_id);
            self.plan = match ctx.rule {
                Some(rule) => planner::plan_for_rule(ctx.state, rule, ctx.roster, planner::DEFAULT_BUDGET)
                    .ok()
                    .filter(|p| p.solved)
                    .map(|p| p.actions)
                    .unwrap_or_default(),
                None => Vec::new(),
            };
            self.plan.reverse();
        }
        // No plan: wander rather than stall forever.
        let action = self.plan.pop().unwrap_or_else(|| random_action(ctx.state, &mut self.rng));
        self.expected = world::step(ctx.state, action).ok().map(|s| s.dynamic_key());
        action
    }
}

/// One-step lookahead on the active rule's effect: maximise satisfied
/// effect atoms, then minimise the sum of features the effect decreases.
/// Ties are broken at random.
pub struct RuleGreedyAgent {
    rng: ChaCha8Rng,
}

impl RuleGreedyAgent {
    pub fn new(seed: u64) -> Self {
        RuleGreedyAgent { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Agent for RuleGreedyAgent {
    fn name(&self) -> String {
        "rule_greedy".into()
    }

    fn act(&mut self, ctx: &AgentContext<'_>) -> Action {
        let (Some(rule), Some(act)) = (ctx.rule, ctx.instructor.activation_vector.as_ref()) else {
            return random_action(ctx.state, &mut self.rng);
        };
        let Ok(target) = Target::effect(rule, act) else {
            return random_action(ctx.state, &mut self.rng);
        };
        let mut best: Vec<Action> = Vec::new();
        let mut best_score = (usize::MAX, u64::MAX);
        for a in world::legal_actions(ctx.state) {
            let Ok(next) = world::step(ctx.state, a) else { continue };
            let Ok(v) = ctx.roster.eval(&next) else { continue };
            let unsatisfied = target.unsatisfied(&v.values);
            let residual = target
                .atoms
                .iter()
                .filter_map(|t| match *t {
                    planner::TargetAtom::Effect { index, op: crate::rules::EffectOp::Decrease, .. } => {
                        Some(v.values[index].as_num().unwrap_or(u64::MAX / 64))
                    }
                    _ => None,
                })
                .sum::<u64>();
            let score = (unsatisfied, residual);
            if score < best_score {
                best_score = score;
                best.clear();
            }
            if score == best_score {
                best.push(a);
            }
        }
        best.choose(&mut self.rng).copied().unwrap_or_else(|| random_action(ctx.state, &mut self.rng))
    }
}

/// Oracle that takes a uniformly random legal action with probability ε.
pub struct NoisyAgent {
    epsilon: f64,
    oracle: OracleAgent,
    rng: ChaCha8Rng,
}

impl NoisyAgent {
    pub fn new(epsilon: f64, seed: u64) -> Result<Self, HarnessError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(HarnessError::InvalidAgentParam(format!("epsilon {epsilon} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let oracle = OracleAgent::new(rng.next_u64());
        Ok(NoisyAgent { epsilon, oracle, rng })
    }
}

impl Agent for NoisyAgent {
    fn name(&self) -> String {
        format!("noisy:{}", self.epsilon)
    }

    fn act(&mut self, ctx: &AgentContext<'_>) -> Action {
        if self.rng.gen_bool(self.epsilon) {
            random_action(ctx.state, &mut self.rng)
        } else {
            self.oracle.act(ctx)
        }
    }
}

pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        RandomAgent { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> String {
        "random".into()
    }

    fn act(&mut self, ctx: &AgentContext<'_>) -> Action {
        random_action(ctx.state, &mut self.rng)
    }
}

type AgentFactory = fn(Option<&str>, u64) -> Result<Box<dyn Agent>, HarnessError>;

fn no_param(name: &str, param: Option<&str>) -> Result<(), HarnessError> {
    match param {
        None => Ok(()),
        Some(p) => Err(HarnessError::InvalidAgentParam(format!("`{name}` takes no parameter, got `{p}`"))),
    }
}

static AGENTS: Lazy<BTreeMap<&'static str, AgentFactory>> = Lazy::new(|| {
    let mut m: BTreeMap<&'static str, AgentFactory> = BTreeMap::new();
    m.insert("oracle", |p, seed| {
        no_param("oracle", p)?;
        Ok(Box::new(OracleAgent::new(seed)))
    });
    m.insert("rule_greedy", |p, seed| {
        no_param("rule_greedy", p)?;
        Ok(Box::new(RuleGreedyAgent::new(seed)))
    });
    m.insert("noisy", |p, seed| {
        let p = p.ok_or_else(|| HarnessError::InvalidAgentParam("`noisy` needs ε, e.g. noisy:0.3".into()))?;
        let eps: f64 = p.parse().map_err(|_| HarnessError::InvalidAgentParam(format!("bad ε `{p}`")))?;
        Ok(Box::new(NoisyAgent::new(eps, seed)?))
    });
    m.insert("random", |p, seed| {
        no_param("random", p)?;
        Ok(Box::new(RandomAgent::new(seed)))
    });
    m
});

pub fn agent_names() -> impl Iterator<Item = &'static str> {
    AGENTS.keys().copied()
}

/// Builds an agent from a spec such as `oracle` or `noisy:0.3`.
pub fn make_agent(spec: &str, seed: u64) -> Result<Box<dyn Agent>, HarnessError> {
    let (name, param) = match spec.split_once(':') {
        Some((n, p)) => (n, Some(p)),
        None => (spec, None),
    };
    let factory = AGENTS.get(name).ok_or_else(|| HarnessError::UnknownAgent(spec.to_string()))?;
    factory(param, seed)
}

/// Seed of the `index`-th episode of a sweep: the first word of ChaCha8
/// stream `index` under the root seed.
pub fn episode_seed(root: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(index);
    rng.next_u64()
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HorizonBin {
    #[serde(rename = "1-5")]
    UpTo5,
    #[serde(rename = "6-10")]
    UpTo10,
    #[serde(rename = "11-20")]
    UpTo20,
    #[serde(rename = "21+")]
    Over20,
}

impl HorizonBin {
    pub const ALL: [HorizonBin; 4] = [HorizonBin::UpTo5, HorizonBin::UpTo10, HorizonBin::UpTo20, HorizonBin::Over20];

    pub fn of(rule_calls: u32) -> Self {
        match rule_calls {
            0..=5 => HorizonBin::UpTo5,
            6..=10 => HorizonBin::UpTo10,
            11..=20 => HorizonBin::UpTo20,
            _ => HorizonBin::Over20,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            HorizonBin::UpTo5 => "1-5",
            HorizonBin::UpTo10 => "6-10",
            HorizonBin::UpTo20 => "11-20",
            HorizonBin::Over20 => "21+",
        }
    }
}

impl fmt::Display for HorizonBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-episode metric values: means of the surface metrics over the
/// episode's instructions, max of the widths seen.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub tokens: f64,
    pub entities: f64,
    pub verbs: f64,
    pub width: Option<f64>,
}

impl MetricValues {
    pub const NAMES: [&'static str; 4] = ["tokens", "entities", "verbs", "width"];

    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "tokens" => Some(self.tokens),
            "entities" => Some(self.entities),
            "verbs" => Some(self.verbs),
            "width" => self.width,
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub layout_seed: u64,
    pub rank: u32,
    pub agent: String,
    pub success: bool,
    pub outcome: Outcome,
    pub rule_calls: u32,
    pub horizon_bin: HorizonBin,
    pub metric_values: MetricValues,
}

impl EvalRecord {
    pub fn from_episode(ep: &Episode) -> Self {
        let n = ep.instructions.len().max(1) as f64;
        let mut m = MetricValues::default();
        for text in &ep.instructions {
            let s = crate::instructor::surface_metrics_of(text, crate::instructor::Lexicon::bundled());
            m.tokens += s.tokens as f64;
            m.entities += s.entities as f64;
            m.verbs += s.verbs as f64;
        }
        m.tokens /= n;
        m.entities /= n;
        m.verbs /= n;
        m.width = ep.widths_seen.iter().flatten().max().map(|&w| w as f64);
        EvalRecord {
            task_id: ep.instance.task_id.clone(),
            layout_seed: ep.instance.layout_seed,
            rank: ep.rank,
            agent: ep.agent.clone(),
            success: ep.outcome == Outcome::Success,
            outcome: ep.outcome,
            rule_calls: ep.rule_calls,
            horizon_bin: HorizonBin::of(ep.rule_calls),
            metric_values: m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sr: f64,
    pub records: Vec<EvalRecord>,
    pub episodes: Vec<Episode>,
}

/// Runs one episode per instance with a fresh agent seeded by
/// [`episode_seed`]`(root_seed, i)`. Episodes run in parallel; results keep
/// instance order.
pub fn run_eval(
    agent: &str,
    instances: &[WorldState],
    rs: &RuleSet,
    opts: &EpisodeOptions,
    root_seed: u64,
) -> Result<EvalReport, HarnessError> {
    if opts.max_steps == 0 {
        return Err(HarnessError::InvalidArgument("max_steps must be at least 1".into()));
    }
    make_agent(agent, 0)?;
    let episodes = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut a = make_agent(agent, episode_seed(root_seed, i as u64))?;
            Ok(dataset::record_episode(inst, rs, a.as_mut(), opts)?)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let records: Vec<EvalRecord> = episodes.iter().map(EvalRecord::from_episode).collect();
    let sr = if records.is_empty() {
        0.0
    } else {
        records.iter().filter(|r| r.success).count() as f64 / records.len() as f64
    };
    Ok(EvalReport { sr, records, episodes })
}

// ---------------------------------------------------------------------------
// Failure taxonomy
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    Regression,
    Stagnation,
    TimeoutOther,
}

impl fmt::Display for FailureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureMode::Regression => "regression",
            FailureMode::Stagnation => "stagnation",
            FailureMode::TimeoutOther => "timeout_other",
        })
    }
}

/// Classifies a failed trace of feature vectors against the goal.
///
/// Regression: a boolean goal atom that held later fails, or a count the goal
/// drives to zero rises above its running minimum. Stagnation: the last
/// `t_stall` vectors are identical. Anything else is a timeout.
pub fn classify_trace(vectors: &[FeatureVector], goal: &GoalSpec, t_stall: usize) -> FailureMode {
    for c in &goal.conjuncts {
        let mut held = false;
        let mut low: Option<u64> = None;
        for v in vectors {
            let Some(x) = v.get(&c.feature) else { continue };
            match c.op {
                ConstraintOp::EqZero => {
                    let n = x.as_num().unwrap_or(u64::MAX);
                    if low.is_some_and(|l| n > l) {
                        return FailureMode::Regression;
                    }
                    low = Some(low.map_or(n, |l| l.min(n)));
                }
                _ => {
                    let ok = c.holds(x);
                    if held && !ok {
                        return FailureMode::Regression;
                    }
                    held |= ok;
                }
            }
        }
    }
    if t_stall > 0 && vectors.len() >= t_stall && vectors[vectors.len() - t_stall..].windows(2).all(|w| w[0] == w[1]) {
        return FailureMode::Stagnation;
    }
    FailureMode::TimeoutOther
}

/// Failure mode of an unsuccessful episode (see [`classify_trace`]), over
/// the per-step vectors followed by the final vector.
pub fn classify_failure(ep: &Episode) -> FailureMode {
    let mut vectors: Vec<FeatureVector> = ep.steps.iter().map(|s| s.vector.clone()).collect();
    vectors.push(ep.final_vector.clone());
    classify_trace(&vectors, &ep.goal, T_STALL)
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Sample Pearson correlation, clamped to [-1, 1].
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, HarnessError> {
    if xs.len() != ys.len() {
        return Err(HarnessError::DegenerateInput("series differ in length"));
    }
    if xs.len() < 2 {
        return Err(HarnessError::DegenerateInput("fewer than two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(HarnessError::DegenerateInput("constant series"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-sided p-value of the t-test for a Pearson r over n points.
pub fn pearson_p_value(r: f64, n: usize) -> f64 {
    if n < 3 {
        return 1.0;
    }
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinCorrelation {
    pub r: f64,
    pub n: usize,
    pub p: f64,
}

/// Pearson r between `metric` and success within each horizon bin. Bins
/// whose series are constant (or too short) are absent. Records lacking
/// the metric are skipped.
pub fn horizon_binned_correlation(
    records: &[EvalRecord],
    metric: &str,
) -> Result<BTreeMap<HorizonBin, BinCorrelation>, HarnessError> {
    if !MetricValues::NAMES.contains(&metric) {
        return Err(HarnessError::InvalidArgument(format!("unknown metric `{metric}`")));
    }
    let mut bins: BTreeMap<HorizonBin, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        if let Some(x) = r.metric_values.get(metric) {
            let e = bins.entry(r.horizon_bin).or_default();
            e.0.push(x);
            e.1.push(if r.success { 1.0 } else { 0.0 });
        }
    }
    let mut out = BTreeMap::new();
    for (bin, (xs, ys)) in bins {
        if let Ok(r) = pearson(&xs, &ys) {
            out.insert(bin, BinCorrelation { r, n: xs.len(), p: pearson_p_value(r, xs.len()) });
        }
    }
    Ok(out)
}

/// Exact upper tail P(X ≥ k) for X ~ Binomial(n, p0).
pub fn binomial_test_one_sided(k: u64, n: u64, p0: f64) -> Result<f64, HarnessError> {
    if k > n {
        return Err(HarnessError::InvalidArgument(format!("k = {k} exceeds n = {n}")));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(HarnessError::InvalidArgument(format!("p0 = {p0} outside (0, 1)")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let (lp, lq) = (p0.ln(), (1.0 - p0).ln());
    let tail: f64 = (k..=n).map(|i| (ln_binomial(n, i) + i as f64 * lp + (n - i) as f64 * lq).exp()).sum();
    Ok(tail.min(1.0))
}

/// x with I_x(a, b) = q, by bisection.
fn beta_quantile(q: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Exact two-sided (1 − alpha) Clopper-Pearson interval for k of n.
pub fn clopper_pearson(k: u64, n: u64, alpha: f64) -> Result<(f64, f64), HarnessError> {
    if n == 0 || k > n {
        return Err(HarnessError::InvalidArgument(format!("need 0 ≤ k ≤ n and n ≥ 1, got {k}/{n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HarnessError::InvalidArgument(format!("alpha = {alpha} outside (0, 1)")));
    }
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 { 0.0 } else { beta_quantile(alpha / 2.0, kf, nf - kf + 1.0) };
    let hi = if k == n { 1.0 } else { beta_quantile(1.0 - alpha / 2.0, kf + 1.0, nf - kf) };
    Ok((lo, hi))
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Width columns of the success-rate grid.
pub const WIDTH_COLUMNS: [&str; 5] = ["Width 0", "Width 1", "Width 2", "Width 3", "Width >=4"];

fn width_column(w: Option<f64>) -> Option<usize> {
    w.map(|w| (w as usize).min(4))
}

/// Success-rate grid: one row per labelled record set, one column per
/// width class. Empty cells are left blank.
pub fn sr_grid_csv(rows: &[(String, Vec<EvalRecord>)]) -> String {
    let mut out = format!("setup,{}\n", WIDTH_COLUMNS.join(","));
    for (label, records) in rows {
        let mut cells = [(0usize, 0usize); 5];
        for r in records {
            if let Some(c) = width_column(r.metric_values.width) {
                cells[c].0 += usize::from(r.success);
                cells[c].1 += 1;
            }
        }
        let cols: Vec<String> =
            cells.iter().map(|&(s, n)| if n == 0 { String::new() } else { format!("{:.3}", s as f64 / n as f64) }).collect();
        out.push_str(&format!("{label},{}\n", cols.join(",")));
    }
    out
}

pub fn correlation_csv(metric: &str, bins: &BTreeMap<HorizonBin, BinCorrelation>) -> String {
    let mut out = String::from("metric,bin,r,n,p\n");
    for (bin, c) in bins {
        out.push_str(&format!("{metric},{bin},{:.6},{},{:.6}\n", c.r, c.n, c.p));
    }
    out
}

/// Failure counts per episode width.
pub fn failure_csv(records: &[EvalRecord]) -> String {
    let mut by_width: BTreeMap<Option<usize>, [usize; 3]> = BTreeMap::new();
    for r in records {
        let idx = match r.outcome {
            Outcome::Success => continue,
            Outcome::Regression => 0,
            Outcome::Stagnation => 1,
            Outcome::Timeout => 2,
        };
        by_width.entry(r.metric_values.width.map(|w| w as usize)).or_default()[idx] += 1;
    }
    let mut out = String::from("width,regression,stagnation,timeout_other\n");
    for (w, c) in by_width {
        let w = w.map_or_else(|| "unknown".to_string(), |w| w.to_string());
        out.push_str(&format!("{w},{},{},{}\n", c[0], c[1], c[2]));
    }
    out
}

impl FromStr for HorizonBin {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HorizonBin::ALL.into_iter().find(|b| b.label() == s).ok_or_else(|| format!("unknown horizon bin `{s}`"))
    }
}
