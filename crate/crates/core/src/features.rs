//! The shared feature space: boolean predicates, distances and counts
//! evaluated over a [`WorldState`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rules::{Constraint, ConstraintOp};
use crate::world::{Flag, GoalSpec, ObjectInstance, ObjectRef, ObjectType, WorldState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureError {
    #[error("unknown count function `{0}`")]
    UnknownCountFunction(String),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{0}` is malformed: {1}")]
    MalformedSpec(String, &'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    BooleanPredicate,
    DistanceToNearest,
    Count,
}

/// Which instances a distance feature considers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectFilter {
    #[default]
    Any,
    NotCleaned,
    NotOpened,
    NotSoaked,
    NotToggled,
    /// No same-type object on a four-neighbour cell.
    Isolated,
    /// Not inside/on an instance of the spec's `target` type.
    NotInside,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub object_type: ObjectType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<ObjectFilter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_fn: Option<String>,
    /// Reference type for `not_inside`-style filters and count functions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ObjectType>,
    /// Binds a boolean predicate to one specific instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<ObjectRef>,
    /// Distance features: how far away (Manhattan) counts as arrived.
    /// Defaults to 1, i.e. adjacent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reach: Option<u32>,
}

impl FeatureSpec {
    pub fn boolean(name: &str, object_type: ObjectType, predicate: &str) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::BooleanPredicate,
            object_type,
            predicate: Some(predicate.into()),
            filter: None,
            count_fn: None,
            target: None,
            instance: None,
            reach: None,
        }
    }

    pub fn distance(name: &str, object_type: ObjectType, filter: ObjectFilter) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::DistanceToNearest,
            object_type,
            predicate: None,
            filter: Some(filter),
            count_fn: None,
            target: None,
            instance: None,
            reach: None,
        }
    }

    pub fn count(name: &str, object_type: ObjectType, count_fn: &str) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Count,
            object_type,
            predicate: None,
            filter: None,
            count_fn: Some(count_fn.into()),
            target: None,
            instance: None,
            reach: None,
        }
    }

    pub fn with_target(mut self, target: ObjectType) -> Self {
        self.target = Some(target);
        self
    }

    pub fn with_reach(mut self, reach: u32) -> Self {
        self.reach = Some(reach);
        self
    }

    pub fn with_instance(mut self, instance: ObjectRef) -> Self {
        self.instance = Some(instance);
        self
    }

    pub fn is_boolean(&self) -> bool {
        self.kind == FeatureKind::BooleanPredicate
    }

    /// Checks that kind-specific fields are present exactly when required.
    pub fn check(&self) -> Result<(), FeatureError> {
        let bad = |why| Err(FeatureError::MalformedSpec(self.name.clone(), why));
        let (p, f, c) = (self.predicate.is_some(), self.filter.is_some(), self.count_fn.is_some());
        match self.kind {
            FeatureKind::BooleanPredicate if !p || f || c => bad("boolean features need exactly a predicate"),
            FeatureKind::DistanceToNearest if p || !f || c => bad("distance features need exactly a filter"),
            FeatureKind::Count if p || f || !c => bad("count features need exactly a count function"),
            FeatureKind::BooleanPredicate | FeatureKind::Count if self.reach.is_some() => bad("only distance features take a reach"),
            FeatureKind::DistanceToNearest if self.reach == Some(0) => bad("reach must be at least 1"),
            _ => {
                if let Some(name) = &self.predicate {
                    if name != "holding" && Flag::from_name(name).is_none() {
                        return Err(FeatureError::UnknownPredicate(name.clone()));
                    }
                }
                if let Some(name) = &self.count_fn {
                    count_function(name)?;
                }
                if self.filter == Some(ObjectFilter::NotInside) && self.target.is_none() {
                    return bad("not_inside filter needs a target");
                }
                Ok(())
            }
        }
    }
}

/// A feature value. Numeric features with no qualifying object yield `Inf`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Bool(bool),
    Num(u32),
    Inf,
}

impl Value {
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(b),
            _ => None,
        }
    }

    /// Numeric view with INF as `u64::MAX`.
    pub fn as_num(self) -> Option<u64> {
        match self {
            Value::Num(n) => Some(n as u64),
            Value::Inf => Some(u64::MAX),
            Value::Bool(_) => None,
        }
    }

    /// Dense code used for novelty atoms.
    pub fn code(self) -> u16 {
        match self {
            Value::Bool(false) => 0,
            Value::Bool(true) => 1,
            Value::Num(n) => (n + 2).min(0xFFFE) as u16,
            Value::Inf => 0xFFFF,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Num(n) => write!(f, "{n}"),
            Value::Inf => f.write_str("INF"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Bool(b) => s.serialize_bool(*b),
            Value::Num(n) => s.serialize_u32(*n),
            Value::Inf => s.serialize_str("INF"),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Bool(b) => Ok(Value::Bool(b)),
            serde_json::Value::Number(n) => n
                .as_u64()
                .and_then(|n| u32::try_from(n).ok())
                .map(Value::Num)
                .ok_or_else(|| serde::de::Error::custom("feature value out of range")),
            serde_json::Value::String(s) if s == "INF" => Ok(Value::Inf),
            other => Err(serde::de::Error::custom(format!("bad feature value {other}"))),
        }
    }
}

/// Ordered feature roster of one task instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FeatureSpec>", into = "Vec<FeatureSpec>")]
pub struct Roster {
    specs: Vec<FeatureSpec>,
    names: Arc<[String]>,
}

impl TryFrom<Vec<FeatureSpec>> for Roster {
    type Error = FeatureError;
    fn try_from(specs: Vec<FeatureSpec>) -> Result<Self, Self::Error> {
        Roster::new(specs)
    }
}

impl From<Roster> for Vec<FeatureSpec> {
    fn from(r: Roster) -> Self {
        r.specs
    }
}

impl Roster {
    pub fn new(specs: Vec<FeatureSpec>) -> Result<Self, FeatureError> {
        if specs.is_empty() {
            return Err(FeatureError::MalformedSpec("roster".into(), "roster is empty"));
        }
        for (i, s) in specs.iter().enumerate() {
            s.check()?;
            if specs[..i].iter().any(|o| o.name == s.name) {
                return Err(FeatureError::MalformedSpec(s.name.clone(), "duplicate feature name"));
            }
        }
        let names = specs.iter().map(|s| s.name.clone()).collect();
        Ok(Roster { specs, names })
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn names(&self) -> &Arc<[String]> {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&FeatureSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn eval(&self, state: &WorldState) -> Result<FeatureVector, FeatureError> {
        eval_vector(state, self)
    }
}

/// φ(s): one value per roster feature, in roster order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    pub names: Arc<[String]>,
    pub values: Vec<Value>,
}

impl FeatureVector {
    pub fn from_pairs(pairs: &[(&str, Value)]) -> Self {
        FeatureVector {
            names: pairs.iter().map(|(n, _)| n.to_string()).collect(),
            values: pairs.iter().map(|(_, v)| *v).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<Value> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Value)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().copied())
    }

    pub fn to_map(&self) -> BTreeMap<String, Value> {
        self.iter().map(|(n, v)| (n.to_string(), v)).collect()
    }
}

impl Serialize for FeatureVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(self.values.len()))?;
        for (n, v) in self.iter() {
            m.serialize_entry(n, &v)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    /// Keeps the document's key order, which is the roster order on write.
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct Entries;
        impl<'de> serde::de::Visitor<'de> for Entries {
            type Value = FeatureVector;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map from feature name to value")
            }
            fn visit_map<A: serde::de::MapAccess<'de>>(self, mut map: A) -> Result<FeatureVector, A::Error> {
                let (mut names, mut values) = (Vec::new(), Vec::new());
                while let Some((n, v)) = map.next_entry::<String, Value>()? {
                    if names.contains(&n) {
                        return Err(serde::de::Error::custom(format!("duplicate feature `{n}`")));
                    }
                    names.push(n);
                    values.push(v);
                }
                Ok(FeatureVector { names: names.into(), values })
            }
        }
        d.deserialize_map(Entries)
    }
}

// ---------------------------------------------------------------------------
// Count functions
// ---------------------------------------------------------------------------

/// A named counting rule over instances of one object type.
pub trait CountFunction: Send + Sync {
    fn name(&self) -> &'static str;
    fn count(&self, state: &WorldState, object_type: ObjectType, target: Option<ObjectType>) -> u32;
}

struct FlagUnset(&'static str, Flag);

impl CountFunction for FlagUnset {
    fn name(&self) -> &'static str {
        self.0
    }
    fn count(&self, state: &WorldState, object_type: ObjectType, _: Option<ObjectType>) -> u32 {
        state.objects_of(object_type).filter(|o| !o.flag(self.1)).count() as u32
    }
}

struct Isolated;

impl CountFunction for Isolated {
    fn name(&self) -> &'static str {
        "count_isolated"
    }
    fn count(&self, state: &WorldState, object_type: ObjectType, _: Option<ObjectType>) -> u32 {
        state.objects_of(object_type).filter(|o| is_isolated(state, o)).count() as u32
    }
}

/// `count_not_inside_target` and `count_not_ontop` share semantics; the
/// latter defaults its target to tables.
struct NotInside(&'static str, ObjectType);

impl CountFunction for NotInside {
    fn name(&self) -> &'static str {
        self.0
    }
    fn count(&self, state: &WorldState, object_type: ObjectType, target: Option<ObjectType>) -> u32 {
        let target = target.unwrap_or(self.1);
        state.objects_of(object_type).filter(|o| !inside(o, target)).count() as u32
    }
}

struct NotNear;

impl CountFunction for NotNear {
    fn name(&self) -> &'static str {
        "count_not_near_target"
    }
    fn count(&self, state: &WorldState, object_type: ObjectType, target: Option<ObjectType>) -> u32 {
        let target = target.unwrap_or(ObjectType::Table);
        state
            .objects_of(object_type)
            .filter(|o| {
                state.is_carried(o.id)
                    || !state.objects_of(target).any(|t| t.pos.manhattan(o.pos) <= 1)
            })
            .count() as u32
    }
}

/// Containers of `target` type lacking a sliced `object_type` item.
struct IncompleteSalad;

impl CountFunction for IncompleteSalad {
    fn name(&self) -> &'static str {
        "count_incomplete_salad"
    }
    fn count(&self, state: &WorldState, object_type: ObjectType, target: Option<ObjectType>) -> u32 {
        let target = target.unwrap_or(ObjectType::Plate);
        state
            .objects_of(target)
            .filter(|c| {
                !state
                    .objects_of(object_type)
                    .any(|o| o.container == Some(c.id) && o.flag(Flag::Sliced))
            })
            .count() as u32
    }
}

/// Tables (`object_type`) holding no `target` item.
struct IncompleteTables;

impl CountFunction for IncompleteTables {
    fn name(&self) -> &'static str {
        "count_not_complete_tables"
    }
    fn count(&self, state: &WorldState, object_type: ObjectType, target: Option<ObjectType>) -> u32 {
        let target = target.unwrap_or(ObjectType::Plate);
        state
            .objects_of(object_type)
            .filter(|t| !state.objects_of(target).any(|o| o.container == Some(t.id)))
            .count() as u32
    }
}

type Registry = BTreeMap<&'static str, Box<dyn CountFunction>>;

static COUNT_FUNCTIONS: Lazy<Registry> = Lazy::new(|| {
    let fns: Vec<Box<dyn CountFunction>> = vec![
        Box::new(FlagUnset("count_not_cleaned", Flag::Cleaned)),
        Box::new(FlagUnset("count_not_soaked", Flag::Soaked)),
        Box::new(FlagUnset("count_not_toggled", Flag::Toggled)),
        Box::new(FlagUnset("count_closed", Flag::Opened)),
        Box::new(FlagUnset("count_not_sliced", Flag::Sliced)),
        Box::new(FlagUnset("count_not_onfloor", Flag::OnFloor)),
        Box::new(Isolated),
        Box::new(NotInside("count_not_inside_target", ObjectType::Box)),
        Box::new(NotInside("count_not_ontop", ObjectType::Table)),
        Box::new(NotNear),
        Box::new(IncompleteSalad),
        Box::new(IncompleteTables),
    ];
    fns.into_iter().map(|f| (f.name(), f)).collect()
});

pub fn count_function(name: &str) -> Result<&'static dyn CountFunction, FeatureError> {
    COUNT_FUNCTIONS
        .get(name)
        .map(|b| b.as_ref())
        .ok_or_else(|| FeatureError::UnknownCountFunction(name.to_string()))
}

pub fn count_function_names() -> impl Iterator<Item = &'static str> {
    COUNT_FUNCTIONS.keys().copied()
}

pub fn count(
    state: &WorldState,
    object_type: ObjectType,
    count_fn: &str,
    target: Option<ObjectType>,
) -> Result<u32, FeatureError> {
    Ok(count_function(count_fn)?.count(state, object_type, target))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

fn inside(o: &ObjectInstance, target: ObjectType) -> bool {
    o.container.is_some_and(|c| c.kind == target)
}

/// A carried item counts as isolated; neighbours must stand on the floor.
pub fn is_isolated(state: &WorldState, o: &ObjectInstance) -> bool {
    if state.is_carried(o.id) {
        return true;
    }
    !state.objects_of(o.kind()).any(|n| {
        n.id != o.id && !state.is_carried(n.id) && n.container.is_none() && n.pos.manhattan(o.pos) == 1
    })
}

fn passes(state: &WorldState, o: &ObjectInstance, filter: ObjectFilter, target: Option<ObjectType>) -> bool {
    match filter {
        ObjectFilter::Any => true,
        ObjectFilter::NotCleaned => !o.flag(Flag::Cleaned),
        ObjectFilter::NotOpened => !o.flag(Flag::Opened),
        ObjectFilter::NotSoaked => !o.flag(Flag::Soaked),
        ObjectFilter::NotToggled => !o.flag(Flag::Toggled),
        ObjectFilter::Isolated => is_isolated(state, o),
        ObjectFilter::NotInside => !inside(o, target.unwrap_or(ObjectType::Box)),
    }
}

/// Steps-to-adjacency to the nearest qualifying, non-carried instance.
pub fn distance_to_nearest(
    state: &WorldState,
    object_type: ObjectType,
    filter: ObjectFilter,
    target: Option<ObjectType>,
) -> Value {
    state
        .objects_of(object_type)
        .filter(|o| !state.is_carried(o.id) && passes(state, o, filter, target))
        .map(|o| o.pos.manhattan(state.agent_pos).saturating_sub(1))
        .min()
        .map_or(Value::Inf, Value::Num)
}

/// Instance a boolean feature refers to: the explicit instance, else the
/// carried instance of the type, else the nearest one (ties by id).
fn bind<'a>(state: &'a WorldState, spec: &FeatureSpec) -> Option<&'a ObjectInstance> {
    if let Some(id) = spec.instance {
        return state.object(id);
    }
    if let Some(c) = state.carried_object().filter(|c| c.kind() == spec.object_type) {
        return Some(c);
    }
    state
        .objects_of(spec.object_type)
        .min_by_key(|o| (o.pos.manhattan(state.agent_pos), o.id))
}

pub fn eval_feature(state: &WorldState, spec: &FeatureSpec) -> Result<Value, FeatureError> {
    match spec.kind {
        FeatureKind::BooleanPredicate => {
            let pred = spec
                .predicate
                .as_deref()
                .ok_or_else(|| FeatureError::MalformedSpec(spec.name.clone(), "missing predicate"))?;
            if pred == "holding" {
                let held = match spec.instance {
                    Some(id) => state.carried == Some(id),
                    None => state.carried.is_some_and(|c| c.kind == spec.object_type),
                };
                return Ok(Value::Bool(held));
            }
            let flag = Flag::from_name(pred).ok_or_else(|| FeatureError::UnknownPredicate(pred.to_string()))?;
            Ok(Value::Bool(bind(state, spec).is_some_and(|o| o.flag(flag))))
        }
        FeatureKind::DistanceToNearest => {
            let d = distance_to_nearest(state, spec.object_type, spec.filter.unwrap_or_default(), spec.target);
            Ok(match (d, spec.reach) {
                (Value::Num(n), Some(r)) => Value::Num(n.saturating_sub(r - 1)),
                _ => d,
            })
        }
        FeatureKind::Count => {
            let name = spec
                .count_fn
                .as_deref()
                .ok_or_else(|| FeatureError::MalformedSpec(spec.name.clone(), "missing count function"))?;
            count(state, spec.object_type, name, spec.target).map(Value::Num)
        }
    }
}

pub fn eval_vector(state: &WorldState, roster: &Roster) -> Result<FeatureVector, FeatureError> {
    let values = roster
        .specs()
        .iter()
        .map(|s| eval_feature(state, s))
        .collect::<Result<_, _>>()?;
    Ok(FeatureVector { names: roster.names().clone(), values })
}

pub fn goal_satisfied(state: &WorldState, roster: &Roster, goal: &GoalSpec) -> Result<bool, FeatureError> {
    let v = eval_vector(state, roster)?;
    goal_holds(&v, &goal.conjuncts)
}

pub fn goal_holds(v: &FeatureVector, conjuncts: &[Constraint]) -> Result<bool, FeatureError> {
    for c in conjuncts {
        let value = v.get(&c.feature).ok_or_else(|| FeatureError::UnknownFeature(c.feature.clone()))?;
        if !c.holds(value) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Constraint-op helper for goal construction.
pub fn eq_zero(feature: &str) -> Constraint {
    Constraint::new(feature, ConstraintOp::EqZero)
}
