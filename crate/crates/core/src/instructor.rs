//! The dynamic instructor: rule selection per timestep, template
//! realization, surface metrics and language ablations.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, FeatureVector};
use crate::rules::{self, Constraint, EffectAtom, Rule, RuleError, RuleSet};
use crate::world::GoalSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstructorError {
    #[error("no applicable rule in a non-goal state")]
    Stuck { vector: FeatureVector },
    #[error("no phrase for `{feature}` / {op} in task {task}")]
    MissingPhrase { task: String, feature: String, op: String },
    #[error(transparent)]
    Rule(#[from] RuleError),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructorState {
    pub active_rule: Option<String>,
    pub activation_vector: Option<FeatureVector>,
    /// Distinct rule activations so far; renewing the active rule after it
    /// was fulfilled does not count.
    pub rule_calls: u32,
    /// Bumped on every activation including renewals; executors replan when
    /// it changes.
    pub activation_id: u32,
}

pub fn applicable_rules<'a>(rs: &'a RuleSet, v: &FeatureVector) -> Result<Vec<&'a Rule>, RuleError> {
    let mut out = Vec::new();
    for r in &rs.rules {
        if rules::is_applicable(r, v)? {
            out.push(r);
        }
    }
    Ok(out)
}

/// Sticky first-applicable selection. The active rule is kept while it is
/// applicable and unfulfilled; otherwise the first applicable rule whose
/// effect does not already hold is activated against `v`.
pub fn select_active(
    rs: &RuleSet,
    v: &FeatureVector,
    prev: &InstructorState,
    goal: &GoalSpec,
) -> Result<InstructorState, InstructorError> {
    if let (Some(id), Some(act)) = (&prev.active_rule, &prev.activation_vector) {
        if let Some(rule) = rs.rule(id) {
            if rules::is_applicable(rule, v)? && !rules::is_fulfilled(rule, act, v)? {
                return Ok(prev.clone());
            }
        }
    }
    for rule in applicable_rules(rs, v)? {
        if rules::is_fulfilled(rule, v, v)? {
            continue;
        }
        let renewed = prev.active_rule.as_deref() == Some(rule.id.as_str());
        return Ok(InstructorState {
            active_rule: Some(rule.id.clone()),
            activation_vector: Some(v.clone()),
            rule_calls: prev.rule_calls + u32::from(!renewed),
            activation_id: prev.activation_id + 1,
        });
    }
    if features::goal_holds(v, &goal.conjuncts).map_err(RuleError::from)? {
        return Ok(InstructorState {
            active_rule: None,
            activation_vector: None,
            rule_calls: prev.rule_calls,
            activation_id: prev.activation_id,
        });
    }
    Err(InstructorError::Stuck { vector: v.clone() })
}

// ---------------------------------------------------------------------------
// Language
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    GoalOnly,
    None,
}

impl FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Ablation::Full),
            "goal" | "goal_only" => Ok(Ablation::GoalOnly),
            "none" => Ok(Ablation::None),
            other => Err(format!("unknown ablation `{other}` (expected full, goal or none)")),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::GoalOnly => "goal_only",
            Ablation::None => "none",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub rule_id: String,
    pub step_index: u32,
    pub rank: u32,
    pub ablation: Ablation,
}

/// Surface form of a realized instruction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// "At step N: When ..., please ...."
    #[default]
    Step,
    /// "If you are ... but ..., ...."
    If,
}

#[derive(Clone, Debug, Deserialize)]
pub struct Lexicon {
    pub v: u32,
    /// task → feature → op → phrase
    pub tasks: BTreeMap<String, BTreeMap<String, BTreeMap<String, String>>>,
    pub entities: Vec<String>,
    pub verbs: Vec<String>,
}

static LEXICON: Lazy<Lexicon> =
    Lazy::new(|| serde_json::from_str(include_str!("../data/lexicon.json")).expect("bundled lexicon parses"));

impl Lexicon {
    pub fn bundled() -> &'static Lexicon {
        &LEXICON
    }

    pub fn phrase(&self, task: &str, feature: &str, op: &str) -> Result<&str, InstructorError> {
        self.tasks
            .get(task)
            .and_then(|t| t.get(feature))
            .and_then(|f| f.get(op))
            .map(String::as_str)
            .ok_or_else(|| InstructorError::MissingPhrase {
                task: task.to_string(),
                feature: feature.to_string(),
                op: op.to_string(),
            })
    }
}

fn op_name<T: Serialize>(op: T) -> String {
    serde_json::to_value(op).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn join_last(items: &[&str], sep: &str, last: &str) -> String {
    match items {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., tail] => format!("{}{last}{tail}", init.join(sep)),
    }
}

/// Deterministic template realization of rules for one task.
#[derive(Clone, Debug)]
pub struct Realizer<'a> {
    pub lexicon: &'a Lexicon,
    pub task: String,
    pub rank: u32,
    pub template: Template,
    /// Include the "At step N:" prefix of the step template.
    pub step_prefix: bool,
}

impl<'a> Realizer<'a> {
    pub fn new(task: &str, rank: u32) -> Realizer<'static> {
        Realizer { lexicon: Lexicon::bundled(), task: task.to_string(), rank, template: Template::Step, step_prefix: true }
    }

    pub fn with_template(mut self, template: Template) -> Self {
        self.template = template;
        self
    }

    fn conditions(&self, conds: &[Constraint]) -> Result<Vec<&'a str>, InstructorError> {
        conds.iter().map(|c| self.lexicon.phrase(&self.task, &c.feature, &op_name(c.op))).collect()
    }

    fn effects(&self, effects: &[EffectAtom]) -> Result<Vec<&'a str>, InstructorError> {
        effects
            .iter()
            .filter(|e| !e.op.is_vacuous())
            .map(|e| self.lexicon.phrase(&self.task, &e.feature, &op_name(e.op)))
            .collect()
    }

    pub fn text(&self, rule: &Rule, step_index: u32) -> Result<String, InstructorError> {
        let conds = self.conditions(&rule.condition)?;
        let effects = self.effects(&rule.effect)?.join(", then ");
        let text = match self.template {
            Template::Step => {
                let body = if conds.is_empty() {
                    format!("Please {effects}.")
                } else {
                    format!("When {}, please {effects}.", join_last(&conds, ", ", " and "))
                };
                if self.step_prefix {
                    format!("At step {step_index}: {body}")
                } else {
                    body
                }
            }
            Template::If => {
                if conds.is_empty() {
                    let mut s = format!("{effects}.");
                    s[..1].make_ascii_uppercase();
                    s
                } else {
                    format!("If you are {}, {effects}.", join_last(&conds, ", ", " but "))
                }
            }
        };
        Ok(text)
    }

    pub fn realize(&self, rule: &Rule, step_index: u32) -> Result<Instruction, InstructorError> {
        Ok(Instruction {
            text: self.text(rule, step_index)?,
            rule_id: rule.id.clone(),
            step_index,
            rank: self.rank,
            ablation: Ablation::Full,
        })
    }
}

/// Realizes with the default step template and bundled lexicon.
pub fn realize(task: &str, rank: u32, rule: &Rule, step_index: u32) -> Result<Instruction, InstructorError> {
    Realizer::new(task, rank).realize(rule, step_index)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceMetrics {
    pub tokens: usize,
    pub entities: usize,
    pub verbs: usize,
}

fn normalize(token: &str) -> String {
    token.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Whitespace tokens, lowercased with surrounding punctuation stripped.
pub fn normalized_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(normalize)
}

pub fn surface_metrics(instr: &Instruction) -> SurfaceMetrics {
    surface_metrics_of(&instr.text, Lexicon::bundled())
}

pub fn surface_metrics_of(text: &str, lexicon: &Lexicon) -> SurfaceMetrics {
    let entities: HashSet<&str> = lexicon.entities.iter().map(String::as_str).collect();
    let verbs: HashSet<&str> = lexicon.verbs.iter().map(String::as_str).collect();
    let mut m = SurfaceMetrics::default();
    for token in text.split_whitespace() {
        m.tokens += 1;
        let w = normalize(token);
        m.entities += usize::from(entities.contains(w.as_str()));
        m.verbs += usize::from(verbs.contains(w.as_str()));
    }
    m
}

pub fn ablate(instr: &Instruction, mode: Ablation, task_goal_text: &str) -> Instruction {
    let mut out = instr.clone();
    match mode {
        Ablation::Full => return out,
        Ablation::GoalOnly => out.text = task_goal_text.to_string(),
        Ablation::None => out.text.clear(),
    }
    out.ablation = mode;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Value;
    use crate::tasks;

    fn op_rules() -> RuleSet {
        tasks::lookup("opening_packages").unwrap().rule_set(0).unwrap()
    }

    fn v(n: u32, p: u32) -> FeatureVector {
        FeatureVector::from_pairs(&[("p", Value::Num(p)), ("N", Value::Num(n))])
    }

    fn goal() -> GoalSpec {
        tasks::lookup("opening_packages").unwrap().goal(2)
    }

    #[test]
    fn guards_select_exactly_one_rule() {
        let rs = op_rules();
        let ids = |v: &FeatureVector| applicable_rules(&rs, v).unwrap().iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&v(2, 3)), ["approach_package"]);
        assert_eq!(ids(&v(2, 0)), ["open_package"]);
        assert!(ids(&v(0, 0)).is_empty());
    }

    #[test]
    fn selection_is_sticky_and_counts_calls() {
        let rs = op_rules();
        let s1 = select_active(&rs, &v(2, 3), &InstructorState::default(), &goal()).unwrap();
        assert_eq!((s1.active_rule.as_deref(), s1.rule_calls), (Some("approach_package"), 1));
        let s2 = select_active(&rs, &v(2, 0), &s1, &goal()).unwrap();
        assert_eq!((s2.active_rule.as_deref(), s2.rule_calls), (Some("open_package"), 2));
        assert_eq!(select_active(&rs, &v(2, 0), &s2, &goal()).unwrap(), s2);
        assert!(matches!(
            select_active(&RuleSet::new("opening_packages", 0, vec![]), &v(1, 1), &s2, &goal()),
            Err(InstructorError::Stuck { .. })
        ));
    }

    #[test]
    fn renewal_does_not_count_as_a_call() {
        let rs = op_rules();
        let s1 = select_active(&rs, &v(2, 3), &InstructorState::default(), &goal()).unwrap();
        let s2 = select_active(&rs, &v(2, 2), &s1, &goal()).unwrap();
        assert_eq!(s2.rule_calls, 1);
        assert_eq!(s2.activation_id, 2);
    }

    #[test]
    fn goal_only_ablation_is_idempotent() {
        let rs = op_rules();
        let i = realize("opening_packages", 0, &rs.rules[0], 1).unwrap();
        let g = ablate(&i, Ablation::GoalOnly, "Open every package.");
        assert_eq!(g.text, "Open every package.");
        assert_eq!(ablate(&g, Ablation::GoalOnly, "Open every package."), g);
        let none = ablate(&i, Ablation::None, "");
        assert_eq!(none.text, "");
        assert_eq!(surface_metrics(&none), SurfaceMetrics::default());
    }

    #[test]
    fn missing_phrase_is_reported() {
        let r = Rule::new("x", "x", vec![], vec![crate::rules::EffectAtom::new("Z", crate::rules::EffectOp::Decrease)]);
        assert!(matches!(realize("opening_packages", 0, &r, 1), Err(InstructorError::MissingPhrase { .. })));
    }

    #[test]
    fn rules_realize_to_distinct_texts() {
        for task in tasks::all() {
            for rs in task.rule_sets() {
                let texts: HashSet<String> =
                    rs.rules.iter().map(|r| realize(task.id(), rs.rank, r, 1).unwrap().text).collect();
                assert_eq!(texts.len(), rs.rules.len(), "{} rank {}", task.id(), rs.rank);
            }
        }
    }
}
