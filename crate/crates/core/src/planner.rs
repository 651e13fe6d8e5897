//! Novelty-based search: IW(k), BFWS, and planning-width computation.
//!
//! Novelty atoms are (feature index, exact value) pairs, with INF a value of
//! its own. Width search may *pin* atoms: a tuple only counts toward novelty
//! if it contains every pinned atom, so nodes that lose a pinned atom are
//! never novel. Pinning is how a rule's maintained context (held objects,
//! already achieved goal atoms) enters the width of its subproblem.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureVector, Roster, Value};
use crate::rules::{self, ConstraintOp, EffectOp, Rule, RuleError, RuleSet};
use crate::world::{self, Action, GoalSpec, WorldError, WorldState};

pub const DEFAULT_BUDGET: usize = 200_000;
pub const DEFAULT_K_MAX: usize = 5;
/// BFWS tracks novelty up to this tuple size.
pub const BFWS_K: usize = 2;
/// Largest tuple size a novelty table supports.
pub const MAX_TUPLE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("search budget of {budget} nodes exceeded")]
    BudgetExceeded { budget: usize },
    #[error("width exceeds k_max = {k_max}")]
    WidthExceeded { k_max: usize },
    #[error("rule `{0}` is not applicable in the start state")]
    NotApplicable(String),
    #[error("rule set failed validation: {0}")]
    ValidationRequired(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

/// Novelty atom: feature index in the high half, value code in the low half.
pub type Atom = u32;

pub fn atom(index: usize, value: Value) -> Atom {
    ((index as u32) << 16) | value.code() as u32
}

pub fn atoms(values: &[Value]) -> Vec<Atom> {
    values.iter().enumerate().map(|(i, v)| atom(i, *v)).collect()
}

type Tuple = [Atom; MAX_TUPLE];

/// Set of atom tuples seen so far, restricted to tuples containing `pinned`.
#[derive(Clone, Debug, Default)]
pub struct NoveltyTable {
    k: usize,
    pinned: Vec<Atom>,
    seen: HashSet<Tuple>,
}

impl NoveltyTable {
    pub fn new(k: usize) -> Self {
        Self::pinned(k, Vec::new())
    }

    pub fn pinned(k: usize, mut pinned: Vec<Atom>) -> Self {
        assert!((1..=MAX_TUPLE).contains(&k), "novelty arity out of range");
        pinned.sort_unstable();
        pinned.dedup();
        NoveltyTable { k, pinned, seen: HashSet::new() }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    fn free_atoms(&self, atoms: &[Atom]) -> Option<Vec<Atom>> {
        if !self.pinned.iter().all(|p| atoms.contains(p)) {
            return None;
        }
        Some(atoms.iter().copied().filter(|a| !self.pinned.contains(a)).collect())
    }

    /// Calls `f` on every tuple of size `m` that contains the pinned atoms.
    fn for_each_tuple(&self, free: &[Atom], m: usize, f: &mut dyn FnMut(Tuple) -> bool) -> bool {
        let extra = m - self.pinned.len();
        if extra > free.len() {
            return true;
        }
        let mut idx: Vec<usize> = (0..extra).collect();
        loop {
            let mut t = [Atom::MAX; MAX_TUPLE];
            let mut n = 0;
            for p in &self.pinned {
                t[n] = *p;
                n += 1;
            }
            for &i in &idx {
                t[n] = free[i];
                n += 1;
            }
            t[..n].sort_unstable();
            if !f(t) {
                return false;
            }
            // advance the combination
            let mut i = extra;
            loop {
                if i == 0 {
                    return true;
                }
                i -= 1;
                if idx[i] < free.len() - extra + i {
                    idx[i] += 1;
                    for j in i + 1..extra {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    fn min_size(&self) -> usize {
        self.pinned.len().max(1)
    }

    /// Smallest m ≤ k such that some m-tuple of `atoms` (containing the
    /// pinned atoms) is unseen; k+1 when there is none.
    pub fn novelty(&self, atoms: &[Atom]) -> usize {
        let Some(free) = self.free_atoms(atoms) else {
            return self.k + 1;
        };
        for m in self.min_size()..=self.k {
            let mut novel = false;
            self.for_each_tuple(&free, m, &mut |t| {
                novel = !self.seen.contains(&t);
                !novel
            });
            if novel {
                return m;
            }
        }
        self.k + 1
    }

    pub fn insert(&mut self, atoms: &[Atom]) {
        let Some(free) = self.free_atoms(atoms) else {
            return;
        };
        let mut fresh = Vec::new();
        for m in self.min_size()..=self.k {
            self.for_each_tuple(&free, m, &mut |t| {
                fresh.push(t);
                true
            });
        }
        self.seen.extend(fresh);
    }

    /// Novelty followed by insertion of the node's tuples.
    pub fn evaluate(&mut self, atoms: &[Atom]) -> usize {
        let n = self.novelty(atoms);
        if n <= self.k {
            self.insert(atoms);
        }
        n
    }
}

/// Novelty of a feature vector against a table (see [`NoveltyTable::novelty`]).
pub fn novelty(v: &FeatureVector, seen: &NoveltyTable) -> usize {
    seen.novelty(&atoms(&v.values))
}

// ---------------------------------------------------------------------------
// Targets
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetAtom {
    Effect { index: usize, op: EffectOp, activation: Value },
    Holds { index: usize, op: ConstraintOp },
    /// The value may not grow past its activation value.
    NoIncrease { index: usize, activation: Value },
}

impl TargetAtom {
    pub fn satisfied(&self, now: &[Value]) -> bool {
        match *self {
            TargetAtom::Effect { index, op, activation } => op.satisfied(activation, now[index]),
            TargetAtom::Holds { index, op } => op.holds(now[index]),
            TargetAtom::NoIncrease { index, activation } => now[index].as_num() <= activation.as_num(),
        }
    }
}

/// Conjunctive target test over roster-indexed vectors.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Target {
    pub atoms: Vec<TargetAtom>,
}

impl Target {
    /// The rule's non-vacuous effect atoms relative to `activation`.
    pub fn effect(rule: &Rule, activation: &FeatureVector) -> Result<Self, PlannerError> {
        let mut atoms = Vec::new();
        for e in rule.effect.iter().filter(|e| !e.op.is_vacuous()) {
            let index = activation
                .index(&e.feature)
                .ok_or_else(|| RuleError::UnknownFeature(e.feature.clone()))?;
            atoms.push(TargetAtom::Effect { index, op: e.op, activation: activation.values[index] });
        }
        Ok(Target { atoms })
    }

    /// Effect plus the rule's boolean condition atoms on features the effect
    /// leaves alone, so that plans keep e.g. a held object in hand.
    pub fn effect_keeping_context(rule: &Rule, activation: &FeatureVector) -> Result<Self, PlannerError> {
        let mut t = Self::effect(rule, activation)?;
        for c in rule.condition.iter().filter(|c| c.op.is_boolean() && !rule.mentions_in_effect(&c.feature)) {
            let index = activation
                .index(&c.feature)
                .ok_or_else(|| RuleError::UnknownFeature(c.feature.clone()))?;
            t.atoms.push(TargetAtom::Holds { index, op: c.op });
        }
        Ok(t)
    }

    /// Adds frame atoms so the plan does not undo goal progress on features
    /// the rule's effect leaves alone: satisfied boolean goal atoms must
    /// still hold, and counts the goal drives to zero may not grow.
    pub fn keeping_goal_progress(mut self, rule: &Rule, activation: &FeatureVector, goal: &GoalSpec) -> Self {
        for c in goal.conjuncts.iter().filter(|c| !rule.mentions_in_effect(&c.feature)) {
            let (Some(index), Some(v)) = (activation.index(&c.feature), activation.get(&c.feature)) else {
                continue;
            };
            match c.op {
                ConstraintOp::EqZero => self.atoms.push(TargetAtom::NoIncrease { index, activation: v }),
                op if c.holds(v) => self.atoms.push(TargetAtom::Holds { index, op }),
                _ => {}
            }
        }
        self
    }

    /// The rule's condition as a conjunction of constraints.
    pub fn condition(rule: &Rule, v: &FeatureVector) -> Result<Self, PlannerError> {
        let atoms = rule
            .condition
            .iter()
            .map(|c| {
                v.index(&c.feature)
                    .map(|index| TargetAtom::Holds { index, op: c.op })
                    .ok_or_else(|| PlannerError::Rule(RuleError::UnknownFeature(c.feature.clone())))
            })
            .collect::<Result<_, _>>()?;
        Ok(Target { atoms })
    }

    pub fn goal(goal: &GoalSpec, roster: &Roster) -> Result<Self, PlannerError> {
        let atoms = goal
            .conjuncts
            .iter()
            .map(|c| {
                roster
                    .index(&c.feature)
                    .map(|index| TargetAtom::Holds { index, op: c.op })
                    .ok_or_else(|| PlannerError::Feature(FeatureError::UnknownFeature(c.feature.clone())))
            })
            .collect::<Result<_, _>>()?;
        Ok(Target { atoms })
    }

    pub fn satisfied(&self, now: &[Value]) -> bool {
        self.atoms.iter().all(|a| a.satisfied(now))
    }

    pub fn unsatisfied(&self, now: &[Value]) -> usize {
        self.atoms.iter().filter(|a| !a.satisfied(now)).count()
    }
}

/// Number of target atoms not yet satisfied in `v_now`. The activation
/// vector is baked into effect atoms when the target is built.
pub fn goal_count_heuristic(_v_activation: &FeatureVector, v_now: &FeatureVector, target: &Target) -> usize {
    target.unsatisfied(&v_now.values)
}

#[derive(Clone, Debug)]
pub struct Subproblem {
    pub start: WorldState,
    pub activation_vector: FeatureVector,
    pub target: Target,
    pub roster: Roster,
    pub budget: usize,
    /// Atoms every counted novelty tuple must contain.
    pub pinned: Vec<Atom>,
    /// Constraints every intermediate (non-target) node must satisfy.
    pub invariant: Target,
}

impl Subproblem {
    pub fn new(start: &WorldState, roster: &Roster, target: Target) -> Result<Self, PlannerError> {
        Ok(Subproblem {
            activation_vector: roster.eval(start)?,
            start: start.clone(),
            target,
            roster: roster.clone(),
            budget: DEFAULT_BUDGET,
            pinned: Vec::new(),
            invariant: Target::default(),
        })
    }

    pub fn for_goal(start: &WorldState, roster: &Roster) -> Result<Self, PlannerError> {
        Self::new(start, roster, Target::goal(&start.goal, roster)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub expanded: usize,
    pub generated: usize,
    pub max_novelty: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub actions: Vec<Action>,
    pub length: usize,
    pub solved: bool,
    pub stats: SearchStats,
}

impl Plan {
    fn unsolved(stats: SearchStats) -> Self {
        Plan { actions: Vec::new(), length: 0, solved: false, stats }
    }
}

/// On-disk plan record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanFile {
    pub instance_ref: String,
    pub actions: Vec<Action>,
    pub length: usize,
    pub solved: bool,
    pub stats: SearchStats,
}

struct Node {
    state: WorldState,
    values: Vec<Value>,
    parent: Option<usize>,
    action: Option<Action>,
    g: usize,
}

fn extract(nodes: &[Node], mut i: usize) -> Vec<Action> {
    let mut out = Vec::new();
    while let (Some(a), Some(p)) = (nodes[i].action, nodes[i].parent) {
        out.push(a);
        i = p;
    }
    out.reverse();
    out
}

fn finish(sub: &Subproblem, actions: Vec<Action>, stats: SearchStats) -> Result<Plan, PlannerError> {
    let end = world::replay(&sub.start, &actions)?;
    let v = sub.roster.eval(&end)?;
    debug_assert!(sub.target.satisfied(&v.values), "plan does not reach its target");
    if !sub.target.satisfied(&v.values) {
        return Err(PlannerError::InvalidArgument("internal: plan replay missed the target".into()));
    }
    Ok(Plan { length: actions.len(), actions, solved: true, stats })
}

/// Breadth-first search pruning every node whose novelty exceeds `k`.
/// Two kinds of children carry no novelty information and are kept unless
/// their concrete state was already generated: *neutral* children with the
/// parent's exact feature vector (turning in place), and *compensating*
/// children that restore the vector held before the parent's last change
/// (stepping back onto an old distance after a sidestep). Compensation
/// unwinds the path's history of vectors one change at a time, so a detour
/// of several sidesteps can be walked back but never ping-pong. Only the
/// remaining children are novelty-checked and tested against the target.
pub fn iw_search(sub: &Subproblem, k: usize) -> Result<Plan, PlannerError> {
    if k == 0 || k > MAX_TUPLE {
        return Err(PlannerError::InvalidArgument(format!("k must be in 1..={MAX_TUPLE}")));
    }
    if sub.budget == 0 {
        return Err(PlannerError::InvalidArgument("budget must be positive".into()));
    }
    let mut stats = SearchStats::default();
    let root_values = sub.roster.eval(&sub.start)?.values;
    if sub.target.satisfied(&root_values) {
        return finish(sub, Vec::new(), stats);
    }
    let mut table = NoveltyTable::pinned(k, sub.pinned.clone());
    stats.max_novelty = table.evaluate(&atoms(&root_values));
    let mut visited = HashSet::new();
    visited.insert(sub.start.dynamic_key());
    let mut nodes = vec![Node { state: sub.start.clone(), values: root_values, parent: None, action: None, g: 0 }];
    // history[j]: the node holding the vector j's path had before its
    // latest change, i.e. the vector a compensating child would restore.
    let mut history: Vec<Option<usize>> = vec![None];
    let mut open = VecDeque::from([0usize]);
    while let Some(i) = open.pop_front() {
        stats.expanded += 1;
        for action in world::legal_actions(&nodes[i].state) {
            stats.generated += 1;
            if stats.generated > sub.budget {
                return Err(PlannerError::BudgetExceeded { budget: sub.budget });
            }
            let state = world::step(&nodes[i].state, action)?;
            let values = sub.roster.eval(&state)?.values;
            if !sub.invariant.satisfied(&values) && !sub.target.satisfied(&values) {
                continue;
            }
            let neutral = values == nodes[i].values;
            let compensating = !neutral && history[i].is_some_and(|h| nodes[h].values == values);
            if neutral || compensating {
                if !visited.insert(state.dynamic_key()) {
                    continue;
                }
            } else {
                let n = table.novelty(&atoms(&values));
                if n > k {
                    continue;
                }
                stats.max_novelty = stats.max_novelty.max(n);
                table.insert(&atoms(&values));
                visited.insert(state.dynamic_key());
            }
            let g = nodes[i].g + 1;
            nodes.push(Node { state, values, parent: Some(i), action: Some(action), g });
            let j = nodes.len() - 1;
            history.push(match (neutral, compensating) {
                (true, _) => history[i],
                (_, true) => history[i].and_then(|h| history[h]),
                _ => Some(i),
            });
            if !neutral && !compensating && sub.target.satisfied(&nodes[j].values) {
                let plan = extract(&nodes, j);
                return finish(sub, plan, stats);
            }
            open.push_back(j);
        }
    }
    Ok(Plan::unsolved(stats))
}

/// Best-first width search ordered by (novelty, goal count, g) with FIFO
/// tie-breaking. Novelty is measured with arity [`BFWS_K`] in a table per
/// goal-count value; non-novel nodes are deprioritised, not pruned, so the
/// search is complete on finite spaces.
pub fn bfws_solve(sub: &Subproblem) -> Result<Plan, PlannerError> {
    if sub.budget == 0 {
        return Err(PlannerError::InvalidArgument("budget must be positive".into()));
    }
    let mut stats = SearchStats::default();
    let root_values = sub.roster.eval(&sub.start)?.values;
    if sub.target.satisfied(&root_values) {
        return finish(sub, Vec::new(), stats);
    }
    // Novelty is measured separately per (goal count, number of true
    // boolean features); without the second key, subgoals that flip no
    // goal atom (pick the rag, soak it) sink into breadth-first search.
    let mut tables: HashMap<(usize, usize), NoveltyTable> = HashMap::new();
    let mut evaluate = |values: &[Value], h: usize| {
        let r = values.iter().filter(|v| **v == Value::Bool(true)).count();
        tables.entry((h, r)).or_insert_with(|| NoveltyTable::new(BFWS_K)).evaluate(&atoms(values))
    };
    let h0 = sub.target.unsatisfied(&root_values);
    let n0 = evaluate(&root_values, h0);
    let mut visited = HashSet::new();
    visited.insert(sub.start.dynamic_key());
    let mut nodes = vec![Node { state: sub.start.clone(), values: root_values, parent: None, action: None, g: 0 }];
    let mut open = BinaryHeap::new();
    let mut seq = 0usize;
    open.push(Reverse((n0, h0, 0usize, seq, 0usize)));
    while let Some(Reverse((pn, _, _, _, i))) = open.pop() {
        stats.expanded += 1;
        for action in world::legal_actions(&nodes[i].state) {
            let state = world::step(&nodes[i].state, action)?;
            if !visited.insert(state.dynamic_key()) {
                continue;
            }
            stats.generated += 1;
            if stats.generated > sub.budget {
                return Err(PlannerError::BudgetExceeded { budget: sub.budget });
            }
            let values = sub.roster.eval(&state)?.values;
            let g = nodes[i].g + 1;
            let done = sub.target.satisfied(&values);
            if !done && !sub.invariant.satisfied(&values) {
                continue;
            }
            let h = sub.target.unsatisfied(&values);
            // Neutral moves (turns, detours that change no feature) inherit
            // the parent's novelty instead of sinking to the back.
            let n = if values == nodes[i].values { pn } else { evaluate(&values, h) };
            stats.max_novelty = stats.max_novelty.max(n.min(BFWS_K));
            nodes.push(Node { state, values, parent: Some(i), action: Some(action), g });
            let j = nodes.len() - 1;
            if done {
                let plan = extract(&nodes, j);
                return finish(sub, plan, stats);
            }
            seq += 1;
            open.push(Reverse((n, h, g, seq, j)));
        }
    }
    Ok(Plan::unsolved(stats))
}

/// Plans the rule's effect from `state`, keeping its boolean context at the
/// end and its whole condition on the way, so that a sticky instructor keeps
/// the rule active until the plan completes. Counts the goal drives to zero
/// may not grow at any point. When an off-policy state (a dropped tool, an
/// achieved goal atom in the way) makes that unsolvable, the frame
/// constraints are dropped: first the goal-progress ones, then all but the
/// bare effect.
pub fn plan_for_rule(state: &WorldState, rule: &Rule, roster: &Roster, budget: usize) -> Result<Plan, PlannerError> {
    let activation = roster.eval(state)?;
    let condition = Target::condition(rule, &activation)?;
    let mut strict = Subproblem::new(state, roster, {
        Target::effect_keeping_context(rule, &activation)?.keeping_goal_progress(rule, &activation, &state.goal)
    })?;
    strict.budget = budget;
    strict.invariant = condition.clone();
    // Never undo goal progress on the way, even on features the rule changes.
    for c in state.goal.conjuncts.iter().filter(|c| c.op == ConstraintOp::EqZero) {
        if let (Some(index), Some(v)) = (activation.index(&c.feature), activation.get(&c.feature)) {
            strict.invariant.atoms.push(TargetAtom::NoIncrease { index, activation: v });
        }
    }
    let mut context = Subproblem::new(state, roster, Target::effect_keeping_context(rule, &activation)?)?;
    context.budget = budget;
    context.invariant = condition;
    let mut bare = Subproblem::new(state, roster, Target::effect(rule, &activation)?)?;
    bare.budget = budget;
    let mut last = None;
    for sub in [strict, context, bare] {
        match bfws_solve(&sub) {
            Ok(p) if p.solved => return Ok(p),
            other => last = Some(other),
        }
    }
    last.expect("three attempts")
}

/// Atoms a rule's width search keeps fixed: its positive boolean conditions
/// and the goal atoms already achieved, on features its effect leaves alone.
pub fn pinned_atoms(rule: &Rule, start: &FeatureVector, goal: &GoalSpec) -> Vec<Atom> {
    let mut out = Vec::new();
    for c in &rule.condition {
        if c.op == ConstraintOp::IsTrue && !rule.mentions_in_effect(&c.feature) {
            if let Some(i) = start.index(&c.feature) {
                out.push(atom(i, Value::Bool(true)));
            }
        }
    }
    for c in &goal.conjuncts {
        if rule.mentions_in_effect(&c.feature) {
            continue;
        }
        let (Some(i), Some(v)) = (start.index(&c.feature), start.get(&c.feature)) else {
            continue;
        };
        if !c.holds(v) {
            continue;
        }
        match c.op {
            ConstraintOp::IsTrue | ConstraintOp::IsFalse | ConstraintOp::EqZero => out.push(atom(i, v)),
            ConstraintOp::GtZero => {}
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Planning width of a rule from `start`: 0 when the effect already holds
/// or one action achieves it, else the least k ≤ `k_max` for which IW(k)
/// solves the rule's subproblem.
pub fn rule_width(rule: &Rule, start: &WorldState, roster: &Roster, k_max: usize) -> Result<usize, PlannerError> {
    rule_width_with_budget(rule, start, roster, k_max, DEFAULT_BUDGET)
}

pub fn rule_width_with_budget(
    rule: &Rule,
    start: &WorldState,
    roster: &Roster,
    k_max: usize,
    budget: usize,
) -> Result<usize, PlannerError> {
    if k_max == 0 || k_max > MAX_TUPLE {
        return Err(PlannerError::InvalidArgument(format!("k_max must be in 1..={MAX_TUPLE}")));
    }
    let v0 = roster.eval(start)?;
    if !rules::is_applicable(rule, &v0)? {
        return Err(PlannerError::NotApplicable(rule.id.clone()));
    }
    let target = Target::effect(rule, &v0)?;
    if target.satisfied(&v0.values) {
        return Ok(0);
    }
    for action in world::legal_actions(start) {
        let next = world::step(start, action)?;
        if target.satisfied(&roster.eval(&next)?.values) {
            return Ok(0);
        }
    }
    let mut sub = Subproblem::new(start, roster, target)?;
    sub.budget = budget;
    sub.pinned = pinned_atoms(rule, &v0, &start.goal);
    for k in 1..=k_max {
        if iw_search(&sub, k)?.solved {
            return Ok(k);
        }
    }
    Err(PlannerError::WidthExceeded { k_max })
}

/// Width observed at one rule activation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationWidth {
    pub step: u32,
    pub rule: String,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionWidth {
    pub width: usize,
    pub activations: Vec<ActivationWidth>,
}

/// Maximum rule width over every activation of the validated instructor
/// run on `instance`.
pub fn instruction_width(rs: &RuleSet, instance: &WorldState, k_max: usize) -> Result<InstructionWidth, PlannerError> {
    let mut activations = Vec::new();
    let mut error = None;
    let mut hook = |state: &WorldState, rule: &Rule, roster: &Roster| match rule_width(rule, state, roster, k_max) {
        Ok(w) => {
            activations.push(ActivationWidth { step: state.step, rule: rule.id.clone(), width: w });
            true
        }
        Err(e) => {
            error = Some(e);
            false
        }
    };
    let report = rules::validate_ruleset_with(rs, instance, rules::DEFAULT_VALIDATION_BUDGET, &mut hook)?;
    if let Some(e) = error {
        return Err(e);
    }
    if !report.passed() {
        let why = report.failure.map_or_else(|| "unknown".to_string(), |f| f.reason);
        return Err(PlannerError::ValidationRequired(why));
    }
    let width = activations.iter().map(|a| a.width).max().unwrap_or(0);
    Ok(InstructionWidth { width, activations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_node_has_novelty_one() {
        let mut t = NoveltyTable::new(2);
        let a = atoms(&[Value::Bool(false), Value::Num(3)]);
        assert_eq!(t.evaluate(&a), 1);
        assert_eq!(t.novelty(&a), 3);
    }

    #[test]
    fn pairs_are_tracked_at_k2() {
        let mut t = NoveltyTable::new(2);
        t.evaluate(&atoms(&[Value::Bool(false), Value::Num(1)]));
        t.evaluate(&atoms(&[Value::Bool(true), Value::Num(2)]));
        // both atoms seen individually, but not together
        assert_eq!(t.novelty(&atoms(&[Value::Bool(true), Value::Num(1)])), 2);
    }

    #[test]
    fn pinned_atoms_must_be_present() {
        let pin = atom(0, Value::Bool(true));
        let mut t = NoveltyTable::pinned(3, vec![pin]);
        assert_eq!(t.evaluate(&atoms(&[Value::Bool(true), Value::Num(4)])), 1);
        assert_eq!(t.novelty(&atoms(&[Value::Bool(true), Value::Num(3)])), 2);
        assert_eq!(t.novelty(&atoms(&[Value::Bool(false), Value::Num(9)])), 4);
    }

    #[test]
    fn combinations_cover_all_tuples() {
        let t = NoveltyTable::new(3);
        let free: Vec<Atom> = (0..5).collect();
        let mut n = 0;
        t.for_each_tuple(&free, 3, &mut |_| {
            n += 1;
            true
        });
        assert_eq!(n, 10);
    }
}
