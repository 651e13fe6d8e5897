//! Task registry. Each task provides its instance sampler, feature roster,
//! goal and the authored rule sets for every granularity rank.

use std::collections::BTreeMap;
use std::sync::Arc;

use once_cell::sync::Lazy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::Roster;
use crate::rules::{Constraint, ConstraintOp, EffectAtom, EffectOp, RuleSet};
use crate::world::{GoalSpec, LayoutSampler, ObjectInstance, ObjectRef, ObjectType, WorldError, WorldState, DEFAULT_GRID};

mod cleaning_shoes;
mod laying_wood_floors;
mod opening_packages;
mod putting_away_dishes;
mod throwing_away_leftovers;

/// The size knob of a task, e.g. the number of shoes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SizeParam {
    pub name: &'static str,
    pub min: u32,
    pub max: u32,
    pub default: u32,
}

pub trait Task: Send + Sync {
    fn id(&self) -> &'static str;
    fn size_param(&self) -> SizeParam;
    /// Places objects for one instance; the caller fills goal and metadata.
    fn populate(&self, size: u32, layout: &mut LayoutSampler<'_>) -> Result<Vec<ObjectInstance>, WorldError>;
    fn roster(&self, state: &WorldState) -> Roster;
    fn goal(&self, size: u32) -> GoalSpec;
    /// Static goal description used by the goal-only ablation.
    fn goal_text(&self) -> &'static str;
    /// Rule sets ordered by rank, starting at rank 0.
    fn rule_sets(&self) -> Vec<RuleSet>;

    fn init_instance(&self, layout_seed: u64, size_params: &BTreeMap<String, u32>) -> Result<WorldState, WorldError> {
        let sp = self.size_param();
        let mut params = BTreeMap::new();
        for (k, &v) in size_params {
            if k == sp.name {
                if v < sp.min || v > sp.max {
                    return Err(WorldError::InvalidSizeParam(format!(
                        "{k}={v} outside {}..={} for {}",
                        sp.min,
                        sp.max,
                        self.id()
                    )));
                }
            } else if k == "grid" {
                if !(6..=32).contains(&v) {
                    return Err(WorldError::InvalidSizeParam(format!("grid={v} outside 6..=32")));
                }
            } else {
                return Err(WorldError::InvalidSizeParam(format!("unknown parameter `{k}` for {}", self.id())));
            }
            params.insert(k.clone(), v);
        }
        let size = *params.entry(sp.name.to_string()).or_insert(sp.default);
        let grid = params.get("grid").copied().map_or(DEFAULT_GRID, |g| g as i32);
        let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);
        let mut layout = LayoutSampler::new(&mut rng, grid, grid, self.id(), layout_seed);
        let mut objects = self.populate(size, &mut layout)?;
        let agent_pos = layout.agent_cell()?;
        let agent_dir = layout.direction();
        objects.sort_by_key(|o| o.id);
        Ok(WorldState {
            width: grid,
            height: grid,
            objects,
            agent_pos,
            agent_dir,
            carried: None,
            step: 0,
            task_id: self.id(),
            layout_seed,
            size_params: Arc::new(params),
            goal: Arc::new(self.goal(size)),
        })
    }

    fn rule_set(&self, rank: u32) -> Option<RuleSet> {
        self.rule_sets().into_iter().find(|rs| rs.rank == rank)
    }
}

static TASKS: Lazy<Vec<Box<dyn Task>>> = Lazy::new(|| {
    vec![
        Box::new(opening_packages::OpeningPackages),
        Box::new(cleaning_shoes::CleaningShoes),
        Box::new(laying_wood_floors::LayingWoodFloors),
        Box::new(throwing_away_leftovers::ThrowingAwayLeftovers),
        Box::new(putting_away_dishes::PuttingAwayDishes),
    ]
});

pub fn lookup(id: &str) -> Result<&'static dyn Task, WorldError> {
    TASKS
        .iter()
        .find(|t| t.id() == id)
        .map(|t| t.as_ref())
        .ok_or_else(|| WorldError::UnknownTask(id.to_string()))
}

pub fn task_ids() -> Vec<&'static str> {
    TASKS.iter().map(|t| t.id()).collect()
}

pub fn all() -> impl Iterator<Item = &'static dyn Task> {
    TASKS.iter().map(|t| t.as_ref())
}

/// Size parameters with only the task's primary knob set.
pub fn size_params(task: &dyn Task, size: u32) -> BTreeMap<String, u32> {
    [(task.size_param().name.to_string(), size)].into_iter().collect()
}

// Small constructors keeping the rule tables readable.

pub(crate) fn is(f: &str) -> Constraint {
    Constraint::new(f, ConstraintOp::IsTrue)
}
pub(crate) fn not(f: &str) -> Constraint {
    Constraint::new(f, ConstraintOp::IsFalse)
}
pub(crate) fn zero(f: &str) -> Constraint {
    Constraint::new(f, ConstraintOp::EqZero)
}
pub(crate) fn pos(f: &str) -> Constraint {
    Constraint::new(f, ConstraintOp::GtZero)
}
pub(crate) fn set(f: &str) -> EffectAtom {
    EffectAtom::new(f, EffectOp::SetTrue)
}
pub(crate) fn unset(f: &str) -> EffectAtom {
    EffectAtom::new(f, EffectOp::SetFalse)
}
pub(crate) fn down(f: &str) -> EffectAtom {
    EffectAtom::new(f, EffectOp::Decrease)
}
pub(crate) fn any(f: &str) -> EffectAtom {
    EffectAtom::new(f, EffectOp::Any)
}
pub(crate) fn change(f: &str) -> EffectAtom {
    EffectAtom::new(f, EffectOp::AnyChange)
}

pub(crate) fn place(layout: &mut LayoutSampler<'_>, kind: ObjectType, count: u32) -> Result<Vec<ObjectInstance>, WorldError> {
    (0..count)
        .map(|i| Ok(ObjectInstance::new(ObjectRef::new(kind, i as u8), layout.object_cell()?)))
        .collect()
}

/// Builds ranks 1.. by merging from the authored rank 0.
pub(crate) fn build_ranks(
    rank0: RuleSet,
    roster: &Roster,
    merges: Vec<(Vec<Vec<&str>>, Vec<crate::rules::Interface>)>,
) -> Vec<RuleSet> {
    let mut out = vec![rank0];
    for (segments, interfaces) in merges {
        let segments: Vec<Vec<String>> =
            segments.into_iter().map(|s| s.into_iter().map(String::from).collect()).collect();
        let next = crate::rules::merge_rules(out.last().unwrap(), &segments, &interfaces, roster)
            .expect("authored merge is well-formed");
        out.push(next);
    }
    out
}
