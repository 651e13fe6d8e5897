//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet, VecDeque};

use granbench::dataset::{Episode, EpisodeStep, InstanceRef, Outcome};
use granbench::features::{FeatureVector, Roster, Value};
use granbench::harness::{EvalRecord, FailureMode, HorizonBin, MetricValues};
use granbench::instructor::Ablation;
use granbench::rules::{self, Constraint, ConstraintOp, EffectAtom, EffectOp, Rule};
use granbench::tasks;
use granbench::pddl;
use granbench::world::{self, Action, Cell, Dir, Flag, GoalSpec, WorldState};

/// Number of states reachable from `start`, or `None` beyond `cap`.
pub fn reachable_states(start: &WorldState, cap: usize) -> Option<usize> {
    let mut seen = HashSet::from([start.dynamic_key()]);
    let mut queue = VecDeque::from([start.clone()]);
    while let Some(s) = queue.pop_front() {
        for a in world::legal_actions(&s) {
            let next = world::step(&s, a).expect("legal action steps");
            if seen.insert(next.dynamic_key()) {
                if seen.len() > cap {
                    return None;
                }
                queue.push_back(next);
            }
        }
    }
    Some(seen.len())
}

/// Length of a shortest action sequence from `start` to a goal state.
pub fn shortest_goal_plan(start: &WorldState, cap: usize) -> Option<usize> {
    let mut seen = HashSet::from([start.dynamic_key()]);
    let mut queue = VecDeque::from([(start.clone(), 0usize)]);
    while let Some((s, d)) = queue.pop_front() {
        if world::is_goal(&s) {
            return Some(d);
        }
        for a in world::legal_actions(&s) {
            let next = world::step(&s, a).expect("legal action steps");
            if seen.insert(next.dynamic_key()) {
                if seen.len() > cap {
                    return None;
                }
                queue.push_back((next, d + 1));
            }
        }
    }
    None
}

type Atom = (usize, i64);

fn code(v: Value) -> i64 {
    match v {
        Value::Bool(b) => b as i64,
        Value::Num(n) => n as i64 + 1,
        Value::Inf => -1,
    }
}

fn atoms_of(values: &[Value]) -> Vec<Atom> {
    values.iter().enumerate().map(|(i, v)| (i, code(*v))).collect()
}

/// Every subset of `free` of size `m`, each extended by `pinned`.
fn tuples(pinned: &[Atom], free: &[Atom], m: usize, out: &mut Vec<Vec<Atom>>) {
    fn rec(free: &[Atom], m: usize, start: usize, cur: &mut Vec<Atom>, out: &mut Vec<Vec<Atom>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..free.len() {
            cur.push(free[i]);
            rec(free, m, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut subsets = Vec::new();
    rec(free, m, 0, &mut Vec::new(), &mut subsets);
    for mut s in subsets {
        s.extend_from_slice(pinned);
        s.sort_unstable();
        out.push(s);
    }
}

/// All tuples of size at most `k` that contain every pinned atom, or
/// `None` when the vector lacks a pinned atom.
fn node_tuples(values: &[Value], pinned: &BTreeSet<Atom>, k: usize) -> Option<Vec<Vec<Atom>>> {
    let atoms = atoms_of(values);
    if !pinned.iter().all(|p| atoms.contains(p)) {
        return None;
    }
    let free: Vec<Atom> = atoms.into_iter().filter(|a| !pinned.contains(a)).collect();
    let pinned: Vec<Atom> = pinned.iter().copied().collect();
    let mut out = Vec::new();
    for size in pinned.len().max(1)..=k {
        if size >= pinned.len() && size - pinned.len() <= free.len() {
            tuples(&pinned, &free, size - pinned.len(), &mut out);
        }
    }
    Some(out)
}

struct Node {
    state: WorldState,
    values: Vec<Value>,
    /// Vectors held before each change along the path, latest last.
    undo: Vec<Vec<Value>>,
}

/// Exhaustively explores the IW(k) search space of `rule` from `start`
/// (no early exit) and reports whether a counted node reaches the effect.
/// Children with the parent's vector, or undoing the path's latest change,
/// skip the novelty test and are deduplicated on concrete state instead.
fn iw_reaches(rule: &Rule, start: &WorldState, roster: &Roster, pinned: &BTreeSet<Atom>, k: usize) -> bool {
    let v0 = roster.eval(start).unwrap();
    let mut seen: BTreeSet<Vec<Atom>> = BTreeSet::new();
    if let Some(ts) = node_tuples(&v0.values, pinned, k) {
        seen.extend(ts);
    }
    let mut visited = HashSet::from([start.dynamic_key()]);
    let mut queue = VecDeque::from([Node { state: start.clone(), values: v0.values.clone(), undo: Vec::new() }]);
    let mut reached = false;
    let mut expanded = 0usize;
    while let Some(node) = queue.pop_front() {
        expanded += 1;
        assert!(expanded < 2_000_000, "oracle search space too large");
        for a in world::legal_actions(&node.state) {
            let state = world::step(&node.state, a).unwrap();
            let v = roster.eval(&state).unwrap().values;
            let mut undo = node.undo.clone();
            if v == node.values {
                if !visited.insert(state.dynamic_key()) {
                    continue;
                }
            } else if node.undo.last() == Some(&v) {
                if !visited.insert(state.dynamic_key()) {
                    continue;
                }
                undo.pop();
            } else {
                let Some(ts) = node_tuples(&v, pinned, k) else { continue };
                let fresh: Vec<Vec<Atom>> = ts.into_iter().filter(|t| !seen.contains(t)).collect();
                if fresh.is_empty() {
                    continue;
                }
                seen.extend(fresh);
                visited.insert(state.dynamic_key());
                if rules::is_fulfilled(rule, &v0, &FeatureVector { values: v.clone(), ..v0.clone() }).unwrap() {
                    reached = true;
                }
                undo.push(node.values.clone());
            }
            queue.push_back(Node { state, values: v, undo });
        }
    }
    reached
}

/// Reference rule width: 0 when the effect holds now or after one action,
/// else the least k ≤ `k_max` whose IW(k) space contains a node achieving
/// the effect; `None` beyond `k_max`.
pub fn brute_force_width(rule: &Rule, start: &WorldState, roster: &Roster, k_max: usize) -> Option<usize> {
    let v0 = roster.eval(start).unwrap();
    if rules::is_fulfilled(rule, &v0, &v0).unwrap() {
        return Some(0);
    }
    for a in world::legal_actions(start) {
        let next = world::step(start, a).unwrap();
        if rules::is_fulfilled(rule, &v0, &roster.eval(&next).unwrap()).unwrap() {
            return Some(0);
        }
    }
    let index = |f: &str| v0.index(f).unwrap();
    let mut pinned = BTreeSet::new();
    for c in &rule.condition {
        if c.op == ConstraintOp::IsTrue && !rule.mentions_in_effect(&c.feature) {
            pinned.insert((index(&c.feature), 1));
        }
    }
    for c in &start.goal.conjuncts {
        let v = v0.get(&c.feature).unwrap();
        let kept = matches!(c.op, ConstraintOp::IsTrue | ConstraintOp::IsFalse | ConstraintOp::EqZero);
        if kept && c.holds(v) && !rule.mentions_in_effect(&c.feature) {
            pinned.insert((index(&c.feature), code(v)));
        }
    }
    (1..=k_max).find(|&k| iw_reaches(rule, start, roster, &pinned, k))
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

fn choose(n: u64, k: u64) -> f64 {
    // Exact in u128 for every n this suite uses.
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c as f64
}

/// P(X = i) for X ~ Binomial(n, p), by direct multiplication.
pub fn binomial_pmf(i: u64, n: u64, p: f64) -> f64 {
    choose(n, i) * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32)
}

/// P(X ≥ k).
pub fn binomial_upper(k: u64, n: u64, p: f64) -> f64 {
    (k..=n).map(|i| binomial_pmf(i, n, p)).sum()
}

/// P(X ≤ k).
pub fn binomial_lower(k: u64, n: u64, p: f64) -> f64 {
    (0..=k).map(|i| binomial_pmf(i, n, p)).sum()
}

/// Pearson r by the raw-moment formula.
pub fn pearson_raw(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

/// Widths of one horizon bin in the synthetic correlation fixture: mostly
/// 1s and 2s with a single 0 and 3.
pub const FIXTURE_WIDTHS: [usize; 40] = {
    let mut w = [1usize; 40];
    w[0] = 0;
    let mut i = 20;
    while i < 39 {
        w[i] = 2;
        i += 1;
    }
    w[39] = 3;
    w
};

/// Evaluation records for every horizon bin where success = 1 iff the
/// episode's width is at most 1.
pub fn width_threshold_records() -> Vec<EvalRecord> {
    let mut out = Vec::new();
    for (b, rule_calls) in [3u32, 8, 15, 30].into_iter().enumerate() {
        for (i, &w) in FIXTURE_WIDTHS.iter().enumerate() {
            let success = w <= 1;
            out.push(EvalRecord {
                task_id: "cleaning_shoes".into(),
                layout_seed: (b * 100 + i) as u64,
                rank: 0,
                agent: "fixture".into(),
                success,
                outcome: if success { Outcome::Success } else { Outcome::Timeout },
                rule_calls,
                horizon_bin: HorizonBin::of(rule_calls),
                metric_values: MetricValues { tokens: 10.0, entities: 2.0, verbs: 1.0, width: Some(w as f64) },
            });
        }
    }
    out
}

pub fn trace_vector(holding: bool, n: u32) -> FeatureVector {
    FeatureVector::from_pairs(&[("H", Value::Bool(holding)), ("N", Value::Num(n))])
}

/// A failed throwing_away_leftovers episode whose per-step vectors are
/// `vectors` (the last one is the final vector).
pub fn episode_from_trace(vectors: Vec<FeatureVector>) -> Episode {
    let t = tasks::lookup("throwing_away_leftovers").unwrap();
    let s = t.init_instance(0, &tasks::size_params(t, 2)).unwrap();
    let observation = world::render_observation(&s);
    let (last, init) = vectors.split_last().expect("non-empty trace");
    Episode {
        v: granbench::dataset::EPISODE_SCHEMA_VERSION,
        instance: InstanceRef::of(&s),
        rank: 0,
        agent: "fixture".into(),
        ablation: Ablation::Full,
        goal: GoalSpec { conjuncts: vec![Constraint::new("N", ConstraintOp::EqZero)] },
        steps: init
            .iter()
            .map(|v| EpisodeStep {
                observation: observation.clone(),
                instruction: String::new(),
                rule: None,
                action: Action::FORWARD,
                vector: v.clone(),
            })
            .collect(),
        final_vector: last.clone(),
        rule_calls: 1,
        outcome: Outcome::Timeout,
        widths_seen: Vec::new(),
        instructions: Vec::new(),
        defect: None,
    }
}

/// Constructed failure traces with their expected classification:
/// a goal count that rises again, a tail of ten identical vectors, and
/// steady progress cut off by the step budget.
pub fn failure_fixtures() -> Vec<(&'static str, Episode, FailureMode)> {
    let regression = vec![trace_vector(false, 2), trace_vector(true, 2), trace_vector(false, 1), trace_vector(true, 1), trace_vector(false, 2)];
    let mut stagnation = vec![trace_vector(false, 3), trace_vector(true, 3), trace_vector(false, 2)];
    stagnation.extend(std::iter::repeat_n(trace_vector(false, 2), 10));
    let timeout: Vec<FeatureVector> = (0..12).rev().map(|i| trace_vector(i % 2 == 0, 6 + i / 2)).collect();
    vec![
        ("goal-atom re-violation", episode_from_trace(regression), FailureMode::Regression),
        ("frozen tail of 10 vectors", episode_from_trace(stagnation), FailureMode::Stagnation),
        ("steady progress past budget", episode_from_trace(timeout), FailureMode::TimeoutOther),
    ]
}

// ---------------------------------------------------------------------------
// Golden sentences
// ---------------------------------------------------------------------------

pub const SOAK_GOLDEN: &str = "If you are holding the rag but the rag is not yet soaked, soak the rag.";

pub const HAMBURGER_GOLDEN: &str =
    "At step 2: When the count of hamburger not inside ashcan is above 0, please reduce the count of hamburger not inside ashcan.";

/// {H_r, ¬S_r} ↦ {S_r} over the cleaning_shoes features.
pub fn soak_rule() -> Rule {
    Rule::new(
        "soak",
        "soak",
        vec![Constraint::new("H_r", ConstraintOp::IsTrue), Constraint::new("S_r", ConstraintOp::IsFalse)],
        vec![EffectAtom::new("S_r", EffectOp::SetTrue)],
    )
}

/// The single macro rule of throwing_away_leftovers' coarsest rank.
pub fn hamburger_macro() -> (u32, Rule) {
    let rs = tasks::lookup("throwing_away_leftovers").unwrap().rule_sets().pop().unwrap();
    assert_eq!(rs.rules.len(), 1);
    (rs.rank, rs.rules[0].clone())
}

// ---------------------------------------------------------------------------
// PDDL
// ---------------------------------------------------------------------------

fn pddl_cell(c: Cell) -> String {
    format!("c{}_{}", c.0, c.1)
}

/// Checks that the parsed problem exported from `state` has the state's
/// boolean projection as its model: the same fluents hold for every object
/// and the goal atoms all hold exactly when the task goal does.
pub fn pddl_roundtrip_equivalent(state: &WorldState) -> Result<(), String> {
    let files = pddl::export_pddl(state).map_err(|e| e.to_string())?;
    let m = pddl::parse_problem(&files.problem).map_err(|e| e.to_string())?;
    let holds = |parts: &[&str]| m.init.contains(&parts.iter().map(|p| p.to_string()).collect::<Vec<_>>());
    let mismatch = |what: String| Err(format!("{}-{}: {what}", state.task_id, state.layout_seed));
    let heading = match state.agent_dir {
        Dir::N => "north",
        Dir::E => "east",
        Dir::S => "south",
        Dir::W => "west",
    };
    if !holds(&["agent-at", &pddl_cell(state.agent_pos)]) || !holds(&["facing", heading]) {
        return mismatch("agent pose".into());
    }
    if holds(&["hand-empty"]) != state.carried.is_none() {
        return mismatch("hand-empty".into());
    }
    for o in &state.objects {
        let id = o.id.to_string();
        if m.objects.get(&id).map(String::as_str) != Some(o.kind().name()) {
            return mismatch(format!("type of {id}"));
        }
        let carried = state.carried == Some(o.id);
        if holds(&["holding", &id]) != carried || holds(&["at", &id, &pddl_cell(o.pos)]) == carried {
            return mismatch(format!("placement of {id}"));
        }
        for f in Flag::ALL {
            if holds(&[f.name(), &id]) != o.flag(f) {
                return mismatch(format!("{} {id}", f.name()));
            }
        }
    }
    for row in 0..state.height {
        for col in 0..state.width {
            let c = Cell(col, row);
            if holds(&["free", &pddl_cell(c)]) != state.is_free(c) {
                return mismatch(format!("free {c:?}"));
            }
        }
    }
    let fluents = m.init.iter().filter(|f| !matches!(f[0].as_str(), "adjacent" | "left-of")).count();
    let expected = 2
        + usize::from(state.carried.is_none())
        + state.objects.len()
        + state.objects.iter().filter(|o| o.container.is_some()).count()
        + state.objects.iter().map(|o| Flag::ALL.iter().filter(|f| o.flag(**f)).count()).sum::<usize>()
        + (0..state.height).flat_map(|r| (0..state.width).map(move |c| Cell(c, r))).filter(|c| state.is_free(*c)).count();
    if fluents != expected {
        return mismatch(format!("{fluents} fluents, expected {expected}"));
    }
    let task = tasks::lookup(state.task_id).unwrap();
    let goal_holds = granbench::features::goal_satisfied(state, &task.roster(state), &state.goal).unwrap();
    if m.goal.is_subset(&m.init) != goal_holds {
        return mismatch(format!("goal truth (task goal holds: {goal_holds})"));
    }
    Ok(())
}

/// Twenty layouts of `task` cycling through its size range.
pub fn roundtrip_instances(task: &dyn tasks::Task) -> Vec<WorldState> {
    let sp = task.size_param();
    (0..20u64)
        .map(|i| {
            let size = sp.min + (i as u32) % (sp.max - sp.min + 1);
            task.init_instance(1000 + i, &tasks::size_params(task, size)).unwrap()
        })
        .collect()
}

/// Whether the task's goal has a ground-conjunction PDDL form.
pub fn pddl_supported(task: &dyn tasks::Task) -> bool {
    let s = task.init_instance(0, &Default::default()).unwrap();
    match pddl::export_pddl(&s) {
        Ok(_) => true,
        Err(pddl::PddlError::UnsupportedConstruct(_)) => false,
        Err(e) => panic!("{}: {e}", task.id()),
    }
}

// ---------------------------------------------------------------------------
// Mixtures
// ---------------------------------------------------------------------------

/// Largest deviation, over consecutive windows of f+m+c draws (a trailing
/// partial window is scaled down), between a class's count and its weight.
pub fn mixture_window_deviation(draws: &[granbench::dataset::MixtureDraw], ratio: granbench::dataset::MixtureRatio) -> f64 {
    use granbench::dataset::GranClass;
    let w = ratio.window() as usize;
    let mut worst = 0.0f64;
    for chunk in draws.chunks(w) {
        let scale = chunk.len() as f64 / w as f64;
        for class in GranClass::ALL {
            let got = chunk.iter().filter(|d| d.class == class).count() as f64;
            let want = ratio.weight(class) as f64 * scale;
            worst = worst.max((got - want).abs());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Width oracle sweep
// ---------------------------------------------------------------------------

pub const SPACE_CAP: usize = 100_000;

/// Instances with at most `SPACE_CAP` reachable states: every size of every
/// task on a few layouts.
pub fn small_instances() -> Vec<WorldState> {
    let mut out = Vec::new();
    for task in tasks::all() {
        let sp = task.size_param();
        for size in sp.min..=sp.max {
            for seed in 0..3 {
                let s = task.init_instance(seed, &tasks::size_params(task, size)).unwrap();
                if reachable_states(&s, SPACE_CAP).is_some() {
                    out.push(s);
                }
            }
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct SweepReport {
    pub instances: usize,
    pub activations: usize,
    pub positive: usize,
    /// (task, rank) pairs with at least one compared activation.
    pub covered: BTreeSet<(String, u32)>,
    pub mismatches: Vec<String>,
}

/// Compares `rule_width` with [`brute_force_width`] at every activation of
/// every shipped rule set on [`small_instances`].
pub fn width_oracle_sweep() -> SweepReport {
    use granbench::planner;
    let mut rep = SweepReport::default();
    let instances = small_instances();
    rep.instances = instances.len();
    for s in &instances {
        let task = tasks::lookup(s.task_id).unwrap();
        for rs in task.rule_sets() {
            let mut hook = |state: &WorldState, rule: &Rule, roster: &Roster| {
                let fast = planner::rule_width(rule, state, roster, planner::DEFAULT_K_MAX).ok();
                let slow = brute_force_width(rule, state, roster, planner::DEFAULT_K_MAX);
                rep.activations += 1;
                rep.positive += usize::from(slow.is_some_and(|w| w > 0));
                rep.covered.insert((s.task_id.to_string(), rs.rank));
                if fast != slow {
                    rep.mismatches.push(format!("{} rank {} seed {} {}: {fast:?} vs {slow:?}", s.task_id, rs.rank, s.layout_seed, rule.id));
                }
                true
            };
            let report = rules::validate_ruleset_with(&rs, s, rules::DEFAULT_VALIDATION_BUDGET, &mut hook).unwrap();
            assert!(report.passed(), "{} rank {} seed {}", s.task_id, rs.rank, s.layout_seed);
        }
    }
    rep
}
