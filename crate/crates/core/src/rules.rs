//! Condition→effect rules, ranked rule sets, macro-rule merging and
//! rule-set validation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureVector, Roster, Value};
use crate::instructor::{self, InstructorError, InstructorState};
use crate::planner::{self, PlannerError};
use crate::tasks;
use crate::world::{self, WorldError, WorldState};

pub const RULESET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("segment {0:?} is not contiguous in the parent rule order")]
    NonContiguousSegment(Vec<String>),
    #[error("interface of `{rule}` references unknown feature `{feature}`")]
    InterfaceReferencesUnknownFeature { rule: String, feature: String },
    #[error("malformed rule set: {0}")]
    Malformed(String),
    #[error("planner timeout inside a subgoal: {0}")]
    PlannerTimeout(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintOp {
    IsTrue,
    IsFalse,
    EqZero,
    GtZero,
}

impl ConstraintOp {
    pub fn is_boolean(self) -> bool {
        matches!(self, ConstraintOp::IsTrue | ConstraintOp::IsFalse)
    }

    /// Numeric constraints are false against INF; kind mismatches are false.
    pub fn holds(self, value: Value) -> bool {
        match (self, value) {
            (ConstraintOp::IsTrue, Value::Bool(b)) => b,
            (ConstraintOp::IsFalse, Value::Bool(b)) => !b,
            (ConstraintOp::EqZero, Value::Num(n)) => n == 0,
            (ConstraintOp::GtZero, Value::Num(n)) => n > 0,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Constraint {
    pub feature: String,
    pub op: ConstraintOp,
}

impl Constraint {
    pub fn new(feature: &str, op: ConstraintOp) -> Self {
        Constraint { feature: feature.to_string(), op }
    }

    pub fn holds(&self, value: Value) -> bool {
        self.op.holds(value)
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op {
            ConstraintOp::IsTrue => write!(f, "{}", self.feature),
            ConstraintOp::IsFalse => write!(f, "¬{}", self.feature),
            ConstraintOp::EqZero => write!(f, "{}=0", self.feature),
            ConstraintOp::GtZero => write!(f, "{}>0", self.feature),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectOp {
    SetTrue,
    SetFalse,
    Any,
    Decrease,
    Increase,
    AnyChange,
}

impl EffectOp {
    pub fn is_boolean(self) -> bool {
        matches!(self, EffectOp::SetTrue | EffectOp::SetFalse | EffectOp::Any)
    }

    /// `any`/`any_change` only document that a feature may move.
    pub fn is_vacuous(self) -> bool {
        matches!(self, EffectOp::Any | EffectOp::AnyChange)
    }

    /// Booleans are judged on `now` alone; numerics strictly against the
    /// activation value with INF as +∞.
    pub fn satisfied(self, at_activation: Value, now: Value) -> bool {
        let num = |v: Value| v.as_num();
        match self {
            EffectOp::SetTrue => now == Value::Bool(true),
            EffectOp::SetFalse => now == Value::Bool(false),
            EffectOp::Any | EffectOp::AnyChange => true,
            EffectOp::Decrease => matches!((num(at_activation), num(now)), (Some(a), Some(b)) if b < a),
            EffectOp::Increase => matches!((num(at_activation), num(now)), (Some(a), Some(b)) if b > a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EffectAtom {
    pub feature: String,
    pub op: EffectOp,
}

impl EffectAtom {
    pub fn new(feature: &str, op: EffectOp) -> Self {
        EffectAtom { feature: feature.to_string(), op }
    }
}

impl fmt::Display for EffectAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sym = match self.op {
            EffectOp::SetTrue => "",
            EffectOp::SetFalse => "¬",
            _ => "",
        };
        let suffix = match self.op {
            EffectOp::Any | EffectOp::AnyChange => "?",
            EffectOp::Decrease => "↓",
            EffectOp::Increase => "↑",
            _ => "",
        };
        write!(f, "{sym}{}{suffix}", self.feature)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub condition: Vec<Constraint>,
    pub effect: Vec<EffectAtom>,
    pub template_hint: String,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |items: Vec<String>| items.join(", ");
        write!(
            f,
            "{}: {{{}}} ↦ {{{}}}",
            self.id,
            join(self.condition.iter().map(ToString::to_string).collect()),
            join(self.effect.iter().map(ToString::to_string).collect())
        )
    }
}

impl Rule {
    pub fn new(id: &str, hint: &str, condition: Vec<Constraint>, effect: Vec<EffectAtom>) -> Self {
        Rule { id: id.into(), condition, effect, template_hint: hint.into() }
    }

    pub fn mentions_in_effect(&self, feature: &str) -> bool {
        self.effect.iter().any(|e| e.feature == feature)
    }

    /// Checks structural invariants, and op/kind agreement against a roster.
    pub fn check(&self, roster: Option<&Roster>) -> Result<(), RuleError> {
        let bad = |m: String| Err(RuleError::Malformed(format!("rule {}: {m}", self.id)));
        if self.effect.is_empty() {
            return bad("empty effect".into());
        }
        for (i, c) in self.condition.iter().enumerate() {
            if self.condition[..i].iter().any(|o| o.feature == c.feature) {
                return bad(format!("feature {} twice in condition", c.feature));
            }
        }
        for (i, e) in self.effect.iter().enumerate() {
            if self.effect[..i].iter().any(|o| o.feature == e.feature) {
                return bad(format!("feature {} twice in effect", e.feature));
            }
        }
        if let Some(roster) = roster {
            for c in &self.condition {
                let spec = roster.get(&c.feature).ok_or_else(|| RuleError::UnknownFeature(c.feature.clone()))?;
                if spec.is_boolean() != c.op.is_boolean() {
                    return bad(format!("op {:?} does not match feature {}", c.op, c.feature));
                }
            }
            for e in &self.effect {
                let spec = roster.get(&e.feature).ok_or_else(|| RuleError::UnknownFeature(e.feature.clone()))?;
                if spec.is_boolean() != e.op.is_boolean() {
                    return bad(format!("op {:?} does not match feature {}", e.op, e.feature));
                }
            }
        }
        Ok(())
    }
}

/// Constituents of one rule at the finer rank.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub rule: String,
    pub from: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    #[serde(default = "schema_version")]
    pub v: u32,
    pub task_id: String,
    pub rank: u32,
    pub rules: Vec<Rule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage: Option<Vec<Lineage>>,
}

fn schema_version() -> u32 {
    RULESET_SCHEMA_VERSION
}

impl RuleSet {
    pub fn new(task_id: &str, rank: u32, rules: Vec<Rule>) -> Self {
        RuleSet { v: RULESET_SCHEMA_VERSION, task_id: task_id.into(), rank, rules, lineage: None }
    }

    pub fn rule(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn check(&self, roster: Option<&Roster>) -> Result<(), RuleError> {
        for (i, r) in self.rules.iter().enumerate() {
            r.check(roster)?;
            if self.rules[..i].iter().any(|o| o.id == r.id) {
                return Err(RuleError::Malformed(format!("duplicate rule id {}", r.id)));
            }
        }
        Ok(())
    }
}

fn value_of(v: &FeatureVector, feature: &str) -> Result<Value, RuleError> {
    v.get(feature).ok_or_else(|| RuleError::UnknownFeature(feature.to_string()))
}

pub fn is_applicable(rule: &Rule, v: &FeatureVector) -> Result<bool, RuleError> {
    for c in &rule.condition {
        if !c.holds(value_of(v, &c.feature)?) {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn is_fulfilled(rule: &Rule, v_activation: &FeatureVector, v_now: &FeatureVector) -> Result<bool, RuleError> {
    for e in &rule.effect {
        if !e.op.satisfied(value_of(v_activation, &e.feature)?, value_of(v_now, &e.feature)?) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Declared net interface of one macro-rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interface {
    pub id: String,
    pub condition: Vec<Constraint>,
    pub effect: Vec<EffectAtom>,
    pub template_hint: String,
}

impl Interface {
    pub fn new(id: &str, hint: &str, condition: Vec<Constraint>, effect: Vec<EffectAtom>) -> Self {
        Interface { id: id.into(), condition, effect, template_hint: hint.into() }
    }
}

/// Builds the next rank by replacing each contiguous segment of parent rules
/// with its macro-rule. Rules outside every segment pass through unchanged.
pub fn merge_rules(
    parent: &RuleSet,
    segmentation: &[Vec<String>],
    interfaces: &[Interface],
    roster: &Roster,
) -> Result<RuleSet, RuleError> {
    if segmentation.len() != interfaces.len() {
        return Err(RuleError::Malformed("one interface per segment is required".into()));
    }
    let position = |id: &str| parent.rules.iter().position(|r| r.id == id);
    let mut starts = BTreeMap::new();
    let mut covered = vec![false; parent.rules.len()];
    for (g, seg) in segmentation.iter().enumerate() {
        let idx: Vec<usize> = seg
            .iter()
            .map(|id| position(id).ok_or_else(|| RuleError::NonContiguousSegment(seg.clone())))
            .collect::<Result<_, _>>()?;
        let contiguous = !idx.is_empty() && idx.windows(2).all(|w| w[1] == w[0] + 1);
        if !contiguous || idx.iter().any(|&i| covered[i]) {
            return Err(RuleError::NonContiguousSegment(seg.clone()));
        }
        for &i in &idx {
            covered[i] = true;
        }
        starts.insert(idx[0], g);
    }
    for iface in interfaces {
        let features = iface
            .condition
            .iter()
            .map(|c| &c.feature)
            .chain(iface.effect.iter().map(|e| &e.feature));
        for f in features {
            if roster.index(f).is_none() {
                return Err(RuleError::InterfaceReferencesUnknownFeature {
                    rule: iface.id.clone(),
                    feature: f.clone(),
                });
            }
        }
    }
    let mut rules = Vec::new();
    let mut lineage = Vec::new();
    for (i, r) in parent.rules.iter().enumerate() {
        if let Some(&g) = starts.get(&i) {
            let iface = &interfaces[g];
            rules.push(Rule::new(&iface.id, &iface.template_hint, iface.condition.clone(), iface.effect.clone()));
            lineage.push(Lineage { rule: iface.id.clone(), from: segmentation[g].clone() });
        } else if !covered[i] {
            rules.push(r.clone());
            lineage.push(Lineage { rule: r.id.clone(), from: vec![r.id.clone()] });
        }
    }
    let merged = RuleSet {
        v: RULESET_SCHEMA_VERSION,
        task_id: parent.task_id.clone(),
        rank: parent.rank + 1,
        rules,
        lineage: Some(lineage),
    };
    merged.check(Some(roster))?;
    Ok(merged)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationFailure {
    pub step: u32,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    pub vector: FeatureVector,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub task_id: String,
    pub rank: u32,
    pub layout_seed: u64,
    pub reachable: bool,
    pub terminating: bool,
    pub steps: u32,
    pub rule_calls: u32,
    /// Activations (including renewals) per rule id.
    pub activations: BTreeMap<String, u32>,
    /// No rule is applicable once the goal holds.
    pub quiescent_at_goal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<ValidationFailure>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.reachable && self.terminating && self.quiescent_at_goal
    }
}

pub const DEFAULT_VALIDATION_BUDGET: u32 = 1000;

/// Drives the instructor with the planner as executor: each (re)activation is
/// solved as a subgoal and its plan executed until the instructor changes
/// its selection.
pub fn validate_ruleset(rs: &RuleSet, instance: &WorldState, budget: u32) -> Result<ValidationReport, RuleError> {
    validate_ruleset_with(rs, instance, budget, &mut |_, _, _| true)
}

/// Callback run at every (re)activation with the activation state; returning
/// false aborts the run.
pub type ActivationHook<'a> = dyn FnMut(&WorldState, &Rule, &Roster) -> bool + 'a;

pub fn validate_ruleset_with(
    rs: &RuleSet,
    instance: &WorldState,
    budget: u32,
    hook: &mut ActivationHook<'_>,
) -> Result<ValidationReport, RuleError> {
    let task = tasks::lookup(&rs.task_id)?;
    let roster = task.roster(instance);
    rs.check(Some(&roster))?;
    let mut report = ValidationReport {
        task_id: rs.task_id.clone(),
        rank: rs.rank,
        layout_seed: instance.layout_seed,
        reachable: true,
        terminating: false,
        steps: 0,
        rule_calls: 0,
        activations: rs.rules.iter().map(|r| (r.id.clone(), 0)).collect(),
        quiescent_at_goal: false,
        failure: None,
    };
    let mut state = instance.clone();
    let mut inst = InstructorState::default();
    let mut plan: std::collections::VecDeque<world::Action> = Default::default();
    let mut last_activation = 0;
    let fail = |report: &mut ValidationReport, step, reason: String, rule: Option<String>, v: FeatureVector| {
        report.failure = Some(ValidationFailure { step, reason, rule, vector: v });
    };
    loop {
        let v = roster.eval(&state)?;
        let steps = state.step - instance.step;
        report.steps = steps;
        if crate::features::goal_holds(&v, &state.goal.conjuncts)? {
            report.terminating = true;
            report.quiescent_at_goal = instructor::applicable_rules(rs, &v)?.is_empty();
            if !report.quiescent_at_goal {
                fail(&mut report, steps, "rules remain applicable at the goal".into(), None, v);
            }
            break;
        }
        if steps >= budget {
            fail(&mut report, steps, format!("goal not reached within {budget} steps"), inst.active_rule.clone(), v);
            break;
        }
        inst = match instructor::select_active(rs, &v, &inst, &state.goal) {
            Ok(next) => next,
            Err(InstructorError::Stuck { .. }) => {
                report.reachable = false;
                fail(&mut report, steps, "no applicable rule before the goal".into(), None, v);
                break;
            }
            Err(e) => return Err(RuleError::Malformed(e.to_string())),
        };
        report.rule_calls = inst.rule_calls;
        let rule_id = inst.active_rule.clone().expect("active rule after selection");
        if inst.activation_id != last_activation {
            last_activation = inst.activation_id;
            *report.activations.entry(rule_id.clone()).or_default() += 1;
            let rule = rs.rule(&rule_id).expect("selected rule exists");
            if !hook(&state, rule, &roster) {
                fail(&mut report, steps, "aborted at activation".into(), Some(rule_id), v);
                break;
            }
            let p = match planner::plan_for_rule(&state, rule, &roster, planner::DEFAULT_BUDGET) {
                Ok(p) => p,
                Err(PlannerError::BudgetExceeded { .. }) => {
                    return Err(RuleError::PlannerTimeout(format!(
                        "rule {rule_id} at step {steps} of {} seed {}",
                        rs.task_id, instance.layout_seed
                    )))
                }
                Err(e) => return Err(RuleError::Malformed(e.to_string())),
            };
            if !p.solved || p.actions.is_empty() {
                fail(&mut report, steps, "subgoal has no plan".into(), Some(rule_id), v);
                break;
            }
            plan = p.actions.into();
        }
        let Some(action) = plan.pop_front() else {
            fail(&mut report, steps, "plan exhausted without fulfilling the rule".into(), Some(rule_id), v);
            break;
        };
        state = world::step(&state, action)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op_rules() -> (Rule, Rule) {
        let r1 = Rule::new(
            "r1",
            "move toward",
            vec![Constraint::new("N", ConstraintOp::GtZero), Constraint::new("p", ConstraintOp::GtZero)],
            vec![EffectAtom::new("p", EffectOp::Decrease)],
        );
        let r2 = Rule::new(
            "r2",
            "open",
            vec![Constraint::new("N", ConstraintOp::GtZero), Constraint::new("p", ConstraintOp::EqZero)],
            vec![EffectAtom::new("N", EffectOp::Decrease)],
        );
        (r1, r2)
    }

    fn vec2(n: Value, p: Value) -> FeatureVector {
        FeatureVector::from_pairs(&[("p", p), ("N", n)])
    }

    #[test]
    fn applicability_follows_guards() {
        let (r1, _) = op_rules();
        assert!(is_applicable(&r1, &vec2(Value::Num(2), Value::Num(3))).unwrap());
        assert!(!is_applicable(&r1, &vec2(Value::Num(0), Value::Num(3))).unwrap());
        assert!(!is_applicable(&r1, &vec2(Value::Num(2), Value::Inf)).unwrap());
        let missing = FeatureVector::from_pairs(&[("p", Value::Num(1))]);
        assert!(matches!(is_applicable(&r1, &missing), Err(RuleError::UnknownFeature(_))));
    }

    #[test]
    fn condition_order_is_irrelevant() {
        let (mut r1, _) = op_rules();
        let v = vec2(Value::Num(2), Value::Num(3));
        let before = is_applicable(&r1, &v).unwrap();
        r1.condition.reverse();
        assert_eq!(is_applicable(&r1, &v).unwrap(), before);
    }

    #[test]
    fn fulfillment_compares_against_activation() {
        let (r1, r2) = op_rules();
        let act = vec2(Value::Num(2), Value::Num(3));
        assert!(is_fulfilled(&r1, &act, &vec2(Value::Num(2), Value::Num(2))).unwrap());
        assert!(!is_fulfilled(&r2, &act, &act).unwrap());
        assert!(is_fulfilled(&r1, &vec2(Value::Num(1), Value::Inf), &vec2(Value::Num(1), Value::Num(9))).unwrap());
        let soak = Rule::new("soak", "soak", vec![], vec![EffectAtom::new("S_r", EffectOp::SetTrue)]);
        let on = FeatureVector::from_pairs(&[("S_r", Value::Bool(true))]);
        assert!(is_fulfilled(&soak, &on, &on).unwrap());
    }

    #[test]
    fn non_contiguous_segments_are_rejected() {
        let (r1, r2) = op_rules();
        let r3 = Rule::new("r3", "x", vec![], vec![EffectAtom::new("N", EffectOp::Decrease)]);
        let rs = RuleSet::new("opening_packages", 0, vec![r1, r2, r3]);
        let roster = crate::tasks::lookup("opening_packages")
            .unwrap()
            .roster(&crate::world::init_instance("opening_packages", 1, &Default::default()).unwrap());
        let iface = Interface::new("m", "x", vec![], vec![EffectAtom::new("N", EffectOp::Decrease)]);
        let err = merge_rules(&rs, &[vec!["r1".into(), "r3".into()]], std::slice::from_ref(&iface), &roster).unwrap_err();
        assert!(matches!(err, RuleError::NonContiguousSegment(_)));
        let bad = Interface::new("m", "x", vec![], vec![EffectAtom::new("Q", EffectOp::Decrease)]);
        let err = merge_rules(&rs, &[vec!["r1".into()]], &[bad], &roster).unwrap_err();
        assert!(matches!(err, RuleError::InterfaceReferencesUnknownFeature { .. }));
    }

    #[test]
    fn rule_set_json_round_trips() {
        let (r1, r2) = op_rules();
        let rs = RuleSet::new("opening_packages", 0, vec![r1, r2]);
        let text = serde_json::to_string(&rs).unwrap();
        assert!(text.contains(r#""op":"gt_zero""#));
        let back: RuleSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rs);
    }
}
