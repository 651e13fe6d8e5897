//! Deterministic grid-world simulator.
//!
//! States are plain values: [`step`] never mutates its input and returns a
//! fresh [`WorldState`]. Objects are identified by an [`ObjectRef`] (type plus
//! per-type index) whose textual form (`rag0`, `pkg1`, ...) is used in every
//! file format.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rules::Constraint;
use crate::tasks;

pub const DEFAULT_GRID: i32 = 10;
pub const INSTANCE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("infeasible layout for task `{task}` (seed {seed}): {reason}")]
    InfeasibleLayout { task: String, seed: u64, reason: String },
    #[error("invalid size parameter: {0}")]
    InvalidSizeParam(String),
    #[error("illegal action {action}: {reason}")]
    IllegalAction { action: Action, reason: &'static str },
    #[error("malformed instance: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectType {
    Rag,
    Sink,
    Shoe,
    Package,
    Book,
    Box,
    Cabinet,
    Table,
    Plate,
    Plywood,
    Hamburger,
    Ashcan,
}

impl ObjectType {
    pub const ALL: [ObjectType; 12] = [
        ObjectType::Rag,
        ObjectType::Sink,
        ObjectType::Shoe,
        ObjectType::Package,
        ObjectType::Book,
        ObjectType::Box,
        ObjectType::Cabinet,
        ObjectType::Table,
        ObjectType::Plate,
        ObjectType::Plywood,
        ObjectType::Hamburger,
        ObjectType::Ashcan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectType::Rag => "rag",
            ObjectType::Sink => "sink",
            ObjectType::Shoe => "shoe",
            ObjectType::Package => "package",
            ObjectType::Book => "book",
            ObjectType::Box => "box",
            ObjectType::Cabinet => "cabinet",
            ObjectType::Table => "table",
            ObjectType::Plate => "plate",
            ObjectType::Plywood => "plywood",
            ObjectType::Hamburger => "hamburger",
            ObjectType::Ashcan => "ashcan",
        }
    }

    /// Prefix used to build object ids.
    pub fn id_prefix(self) -> &'static str {
        match self {
            ObjectType::Package => "pkg",
            other => other.name(),
        }
    }

    /// Observation channel-0 code; 0 is reserved for empty cells.
    pub fn type_id(self) -> u16 {
        Self::ALL.iter().position(|&t| t == self).unwrap() as u16 + 1
    }

    pub fn from_name(name: &str) -> Option<ObjectType> {
        Self::ALL.iter().copied().find(|t| t.name() == name)
    }

    /// Furniture never moves and owns its cell.
    pub fn is_furniture(self) -> bool {
        matches!(
            self,
            ObjectType::Sink
                | ObjectType::Package
                | ObjectType::Box
                | ObjectType::Cabinet
                | ObjectType::Table
                | ObjectType::Ashcan
        )
    }

    pub fn is_pickable(self) -> bool {
        !self.is_furniture()
    }

    /// Furniture that other objects can be placed in or on.
    pub fn is_container(self) -> bool {
        matches!(
            self,
            ObjectType::Box | ObjectType::Cabinet | ObjectType::Table | ObjectType::Ashcan
        )
    }

    pub fn applicable_flags(self) -> FlagSet {
        use Flag::*;
        let flags: &[Flag] = match self {
            ObjectType::Rag => &[Soaked, OnFloor],
            ObjectType::Sink => &[Toggled],
            ObjectType::Shoe => &[Cleaned, OnFloor],
            ObjectType::Package => &[Opened],
            ObjectType::Book => &[OnFloor],
            ObjectType::Box => &[],
            ObjectType::Cabinet => &[Opened, DustFree],
            ObjectType::Table => &[DustFree],
            ObjectType::Plate => &[Cleaned, OnFloor],
            ObjectType::Plywood => &[OnFloor],
            ObjectType::Hamburger => &[OnFloor],
            ObjectType::Ashcan => &[],
        };
        flags.iter().fold(FlagSet::EMPTY, |acc, &f| acc.with(f, true))
    }
}

impl fmt::Display for ObjectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Opened,
    Toggled,
    Soaked,
    Cleaned,
    #[serde(rename = "dustfree")]
    DustFree,
    Sliced,
    #[serde(rename = "onfloor")]
    OnFloor,
}

impl Flag {
    pub const ALL: [Flag; 7] = [
        Flag::Opened,
        Flag::Toggled,
        Flag::Soaked,
        Flag::Cleaned,
        Flag::DustFree,
        Flag::Sliced,
        Flag::OnFloor,
    ];

    pub fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn name(self) -> &'static str {
        match self {
            Flag::Opened => "opened",
            Flag::Toggled => "toggled",
            Flag::Soaked => "soaked",
            Flag::Cleaned => "cleaned",
            Flag::DustFree => "dustfree",
            Flag::Sliced => "sliced",
            Flag::OnFloor => "onfloor",
        }
    }

    pub fn from_name(name: &str) -> Option<Flag> {
        Self::ALL.iter().copied().find(|f| f.name() == name)
    }
}

/// Bit set of [`Flag`]s.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct FlagSet(pub u8);

impl FlagSet {
    pub const EMPTY: FlagSet = FlagSet(0);

    pub fn get(self, flag: Flag) -> bool {
        self.0 & flag.bit() != 0
    }

    pub fn with(self, flag: Flag, value: bool) -> FlagSet {
        if value {
            FlagSet(self.0 | flag.bit())
        } else {
            FlagSet(self.0 & !flag.bit())
        }
    }

    pub fn iter(self) -> impl Iterator<Item = Flag> {
        Flag::ALL.into_iter().filter(move |f| self.get(*f))
    }
}

/// Stable object identity: type plus per-type index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectRef {
    pub kind: ObjectType,
    pub index: u8,
}

impl ObjectRef {
    pub fn new(kind: ObjectType, index: u8) -> Self {
        ObjectRef { kind, index }
    }
}

impl fmt::Display for ObjectRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.id_prefix(), self.index)
    }
}

impl FromStr for ObjectRef {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let split = s
            .find(|c: char| c.is_ascii_digit())
            .ok_or_else(|| WorldError::Malformed(format!("bad object id `{s}`")))?;
        let (prefix, digits) = s.split_at(split);
        let kind = ObjectType::ALL
            .iter()
            .copied()
            .find(|t| t.id_prefix() == prefix)
            .ok_or_else(|| WorldError::Malformed(format!("bad object id `{s}`")))?;
        let index = digits
            .parse()
            .map_err(|_| WorldError::Malformed(format!("bad object id `{s}`")))?;
        Ok(ObjectRef { kind, index })
    }
}

impl Serialize for ObjectRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ObjectRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Grid cell as (col, row).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell(pub i32, pub i32);

impl Cell {
    pub fn col(self) -> i32 {
        self.0
    }
    pub fn row(self) -> i32 {
        self.1
    }
    pub fn manhattan(self, other: Cell) -> u32 {
        ((self.0 - other.0).abs() + (self.1 - other.1).abs()) as u32
    }
    pub fn offset(self, dir: Dir) -> Cell {
        let (dc, dr) = dir.delta();
        Cell(self.0 + dc, self.1 + dr)
    }
    pub fn neighbors(self) -> [Cell; 4] {
        Dir::ALL.map(|d| self.offset(d))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dir {
    N,
    E,
    S,
    W,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::N, Dir::E, Dir::S, Dir::W];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::N => (0, -1),
            Dir::E => (1, 0),
            Dir::S => (0, 1),
            Dir::W => (-1, 0),
        }
    }
    pub fn left(self) -> Dir {
        Dir::ALL[(self as usize + 3) % 4]
    }
    pub fn right(self) -> Dir {
        Dir::ALL[(self as usize + 1) % 4]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ObjectInstance {
    pub id: ObjectRef,
    pub pos: Cell,
    pub flags: FlagSet,
    pub container: Option<ObjectRef>,
}

impl ObjectInstance {
    pub fn new(id: ObjectRef, pos: Cell) -> Self {
        ObjectInstance { id, pos, flags: FlagSet::EMPTY, container: None }
    }

    pub fn kind(&self) -> ObjectType {
        self.id.kind
    }

    pub fn flag(&self, flag: Flag) -> bool {
        self.flags.get(flag)
    }
}

/// Conjunction of feature constraints; the feature definitions come from the
/// task roster.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub conjuncts: Vec<Constraint>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldState {
    pub width: i32,
    pub height: i32,
    /// Sorted by id.
    pub objects: Vec<ObjectInstance>,
    pub agent_pos: Cell,
    pub agent_dir: Dir,
    pub carried: Option<ObjectRef>,
    pub step: u32,
    pub task_id: &'static str,
    pub layout_seed: u64,
    pub size_params: Arc<BTreeMap<String, u32>>,
    pub goal: Arc<GoalSpec>,
}

impl std::hash::Hash for WorldState {
    fn hash<H: std::hash::Hasher>(&self, h: &mut H) {
        self.dynamic_key().hash(h)
    }
}

impl WorldState {
    pub fn object(&self, id: ObjectRef) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.id == id)
    }

    fn object_mut(&mut self, id: ObjectRef) -> &mut ObjectInstance {
        self.objects.iter_mut().find(|o| o.id == id).expect("object id present")
    }

    pub fn objects_of(&self, kind: ObjectType) -> impl Iterator<Item = &ObjectInstance> {
        self.objects.iter().filter(move |o| o.kind() == kind)
    }

    pub fn is_carried(&self, id: ObjectRef) -> bool {
        self.carried == Some(id)
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.0 >= 0 && c.1 >= 0 && c.0 < self.width && c.1 < self.height
    }

    /// The object standing directly on a cell (furniture or a floor item).
    pub fn occupant(&self, c: Cell) -> Option<&ObjectInstance> {
        self.objects
            .iter()
            .find(|o| o.pos == c && o.container.is_none() && !self.is_carried(o.id))
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.occupant(c).is_none() && c != self.agent_pos
    }

    pub fn front(&self) -> Cell {
        self.agent_pos.offset(self.agent_dir)
    }

    /// Reachable for manipulation: not carried and four-adjacent to the agent.
    pub fn is_adjacent(&self, id: ObjectRef) -> bool {
        match self.object(id) {
            Some(o) => !self.is_carried(id) && o.pos.manhattan(self.agent_pos) == 1,
            None => false,
        }
    }

    pub fn carried_object(&self) -> Option<&ObjectInstance> {
        self.carried.and_then(|id| self.object(id))
    }

    /// Compact encoding of everything that can change between steps, used
    /// for duplicate detection in search. The step counter is excluded.
    pub fn dynamic_key(&self) -> Vec<u32> {
        let mut key = Vec::with_capacity(3 + self.objects.len() * 3);
        key.push(((self.agent_pos.0 as u32) << 16) | self.agent_pos.1 as u32);
        key.push(self.agent_dir as u32);
        key.push(self.carried.map_or(u32::MAX, ref_code));
        for o in &self.objects {
            key.push(((o.pos.0 as u32) << 16) | o.pos.1 as u32);
            key.push(o.flags.0 as u32);
            key.push(o.container.map_or(u32::MAX, ref_code));
        }
        key
    }
}

fn ref_code(r: ObjectRef) -> u32 {
    ((r.kind as u32) << 8) | r.index as u32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Forward,
    TurnLeft,
    TurnRight,
    Pickup,
    Drop,
    Toggle,
    Open,
    Close,
    Clean,
    Soak,
    Slice,
    Place,
}

impl ActionKind {
    pub const ALL: [ActionKind; 12] = [
        ActionKind::Forward,
        ActionKind::TurnLeft,
        ActionKind::TurnRight,
        ActionKind::Pickup,
        ActionKind::Drop,
        ActionKind::Toggle,
        ActionKind::Open,
        ActionKind::Close,
        ActionKind::Clean,
        ActionKind::Soak,
        ActionKind::Slice,
        ActionKind::Place,
    ];

    pub fn takes_target(self) -> bool {
        !matches!(
            self,
            ActionKind::Forward | ActionKind::TurnLeft | ActionKind::TurnRight | ActionKind::Drop
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ObjectRef>,
}

impl Action {
    pub const FORWARD: Action = Action { kind: ActionKind::Forward, target: None };
    pub const TURN_LEFT: Action = Action { kind: ActionKind::TurnLeft, target: None };
    pub const TURN_RIGHT: Action = Action { kind: ActionKind::TurnRight, target: None };
    pub const DROP: Action = Action { kind: ActionKind::Drop, target: None };

    pub fn on(kind: ActionKind, target: ObjectRef) -> Self {
        Action { kind, target: Some(target) }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = serde_json::to_value(self.kind).unwrap();
        match self.target {
            Some(t) => write!(f, "{}({t})", kind.as_str().unwrap()),
            None => f.write_str(kind.as_str().unwrap()),
        }
    }
}

/// What `step` does with an action whose preconditions fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StepMode {
    #[default]
    Strict,
    /// Illegal actions only advance the step counter.
    NoOp,
}

fn check(state: &WorldState, action: Action) -> Result<(), &'static str> {
    use ActionKind::*;
    if action.kind.takes_target() != action.target.is_some() {
        return Err("target arity mismatch");
    }
    let target = match action.target {
        Some(t) => Some(*state.object(t).ok_or("unknown target")?),
        None => None,
    };
    let adjacent = || {
        let t = target.unwrap();
        if state.is_adjacent(t.id) {
            Ok(t)
        } else {
            Err("target not adjacent")
        }
    };
    let carried = state.carried_object().copied();
    match action.kind {
        Forward => {
            if state.is_free(state.front()) {
                Ok(())
            } else {
                Err("front cell blocked")
            }
        }
        TurnLeft | TurnRight => Ok(()),
        Pickup => {
            let t = adjacent()?;
            if !t.kind().is_pickable() {
                return Err("not pickable");
            }
            if carried.is_some() {
                return Err("hands full");
            }
            if let Some(c) = t.container.and_then(|c| state.object(c)) {
                if c.kind().applicable_flags().get(Flag::Opened) && !c.flag(Flag::Opened) {
                    return Err("container closed");
                }
            }
            Ok(())
        }
        Drop => {
            if carried.is_none() {
                return Err("nothing carried");
            }
            if state.is_free(state.front()) {
                Ok(())
            } else {
                Err("front cell blocked")
            }
        }
        Place => {
            let t = adjacent()?;
            if carried.is_none() {
                return Err("nothing carried");
            }
            if !t.kind().is_container() {
                return Err("not a container");
            }
            if t.kind().applicable_flags().get(Flag::Opened) && !t.flag(Flag::Opened) {
                return Err("container closed");
            }
            Ok(())
        }
        Toggle => {
            let t = adjacent()?;
            if t.kind().applicable_flags().get(Flag::Toggled) {
                Ok(())
            } else {
                Err("not toggleable")
            }
        }
        Open => {
            let t = adjacent()?;
            if !t.kind().applicable_flags().get(Flag::Opened) {
                Err("not openable")
            } else if t.flag(Flag::Opened) {
                Err("already open")
            } else {
                Ok(())
            }
        }
        Close => {
            let t = adjacent()?;
            if t.kind() != ObjectType::Cabinet {
                Err("not closable")
            } else if !t.flag(Flag::Opened) {
                Err("already closed")
            } else {
                Ok(())
            }
        }
        Clean => {
            let t = adjacent()?;
            if !t.kind().applicable_flags().get(Flag::Cleaned) {
                return Err("not cleanable");
            }
            if t.flag(Flag::Cleaned) {
                return Err("already clean");
            }
            match carried {
                Some(r) if r.kind() == ObjectType::Rag && r.flag(Flag::Soaked) => Ok(()),
                _ => Err("needs a soaked rag in hand"),
            }
        }
        Soak => {
            let t = adjacent()?;
            if !t.kind().applicable_flags().get(Flag::Toggled) {
                return Err("not a water source");
            }
            if !t.flag(Flag::Toggled) {
                return Err("water source off");
            }
            match carried {
                Some(r) if r.kind() == ObjectType::Rag && !r.flag(Flag::Soaked) => Ok(()),
                _ => Err("needs a dry rag in hand"),
            }
        }
        Slice => {
            let t = adjacent()?;
            if !t.kind().applicable_flags().get(Flag::Sliced) {
                Err("not sliceable")
            } else if t.flag(Flag::Sliced) {
                Err("already sliced")
            } else {
                Ok(())
            }
        }
    }
}

fn apply(state: &WorldState, action: Action) -> WorldState {
    use ActionKind::*;
    let mut next = state.clone();
    next.step += 1;
    match action.kind {
        Forward => {
            next.agent_pos = state.front();
            if let Some(c) = next.carried {
                let pos = next.agent_pos;
                next.object_mut(c).pos = pos;
            }
        }
        TurnLeft => next.agent_dir = state.agent_dir.left(),
        TurnRight => next.agent_dir = state.agent_dir.right(),
        Pickup => {
            let id = action.target.unwrap();
            let pos = next.agent_pos;
            let o = next.object_mut(id);
            o.pos = pos;
            o.container = None;
            o.flags = o.flags.with(Flag::OnFloor, false);
            next.carried = Some(id);
        }
        Drop => {
            let id = next.carried.take().unwrap();
            let front = state.front();
            let o = next.object_mut(id);
            o.pos = front;
            if o.kind().applicable_flags().get(Flag::OnFloor) {
                o.flags = o.flags.with(Flag::OnFloor, true);
            }
        }
        Place => {
            let id = next.carried.take().unwrap();
            let target = action.target.unwrap();
            let tpos = state.object(target).unwrap().pos;
            let o = next.object_mut(id);
            o.pos = tpos;
            o.container = Some(target);
            o.flags = o.flags.with(Flag::OnFloor, false);
        }
        Toggle => {
            let o = next.object_mut(action.target.unwrap());
            o.flags = o.flags.with(Flag::Toggled, !o.flag(Flag::Toggled));
        }
        Open | Close => {
            let o = next.object_mut(action.target.unwrap());
            o.flags = o.flags.with(Flag::Opened, action.kind == Open);
        }
        Clean => {
            let o = next.object_mut(action.target.unwrap());
            o.flags = o.flags.with(Flag::Cleaned, true);
        }
        Soak => {
            let o = next.object_mut(state.carried.unwrap());
            o.flags = o.flags.with(Flag::Soaked, true);
        }
        Slice => {
            let o = next.object_mut(action.target.unwrap());
            o.flags = o.flags.with(Flag::Sliced, true);
        }
    }
    next
}

/// Apply one action; illegal actions are errors.
pub fn step(state: &WorldState, action: Action) -> Result<WorldState, WorldError> {
    step_with(state, action, StepMode::Strict)
}

pub fn step_with(state: &WorldState, action: Action, mode: StepMode) -> Result<WorldState, WorldError> {
    match check(state, action) {
        Ok(()) => Ok(apply(state, action)),
        Err(reason) => match mode {
            StepMode::Strict => Err(WorldError::IllegalAction { action, reason }),
            StepMode::NoOp => {
                let mut next = state.clone();
                next.step += 1;
                Ok(next)
            }
        },
    }
}

/// Every action `step` accepts, in canonical order: motion first, then
/// manipulation kinds in [`ActionKind::ALL`] order, targets by object order.
pub fn legal_actions(state: &WorldState) -> Vec<Action> {
    let mut out = Vec::new();
    for kind in ActionKind::ALL {
        if kind.takes_target() {
            for o in &state.objects {
                let a = Action::on(kind, o.id);
                if check(state, a).is_ok() {
                    out.push(a);
                }
            }
        } else {
            let a = Action { kind, target: None };
            if check(state, a).is_ok() {
                out.push(a);
            }
        }
    }
    out
}

/// Replays an action log, failing on the first illegal action.
pub fn replay(start: &WorldState, actions: &[Action]) -> Result<WorldState, WorldError> {
    actions.iter().try_fold(start.clone(), |s, a| step(&s, *a))
}

pub fn is_goal(state: &WorldState) -> bool {
    match tasks::lookup(state.task_id) {
        Ok(task) => {
            let roster = task.roster(state);
            crate::features::goal_satisfied(state, &roster, &state.goal)
                .unwrap_or(false)
        }
        Err(_) => false,
    }
}

pub fn init_instance(
    task_id: &str,
    layout_seed: u64,
    size_params: &BTreeMap<String, u32>,
) -> Result<WorldState, WorldError> {
    tasks::lookup(task_id)?.init_instance(layout_seed, size_params)
}

/// Symbolic stand-in for a visual observation: `height` rows of `width`
/// cells, three channels each.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationGrid {
    pub width: u16,
    pub height: u16,
    /// Row-major, three values per cell.
    pub data: Vec<u16>,
}

pub const CONTAINS_BIT: u16 = 128;

impl ObservationGrid {
    pub fn cell(&self, c: Cell) -> [u16; 3] {
        let i = (c.1 as usize * self.width as usize + c.0 as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Channel 0: type id of the object standing on the cell; channel 1: its flag
/// bits plus [`CONTAINS_BIT`] when items sit in or on it; channel 2: agent
/// direction + 1, with the carried object's type id in the bits above 3.
pub fn render_observation(state: &WorldState) -> ObservationGrid {
    let (w, h) = (state.width as usize, state.height as usize);
    let mut data = vec![0u16; w * h * 3];
    for o in &state.objects {
        let i = (o.pos.1 as usize * w + o.pos.0 as usize) * 3;
        if state.is_carried(o.id) {
            continue;
        }
        if o.container.is_some() {
            data[i + 1] |= CONTAINS_BIT;
        } else {
            data[i] = o.kind().type_id();
            data[i + 1] |= o.flags.0 as u16;
        }
    }
    let i = (state.agent_pos.1 as usize * w + state.agent_pos.0 as usize) * 3;
    let carried = state.carried.map_or(0, |c| c.kind.type_id());
    data[i + 2] = (state.agent_dir as u16 + 1) | (carried << 3);
    ObservationGrid { width: w as u16, height: h as u16, data }
}

/// Samples interior cells for new objects so that no two objects are
/// four-adjacent; this keeps every object approachable from all sides.
pub struct LayoutSampler<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub width: i32,
    pub height: i32,
    taken: Vec<Cell>,
    task: &'static str,
    seed: u64,
}

const PLACEMENT_RETRIES: usize = 1000;

impl<'a> LayoutSampler<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng, width: i32, height: i32, task: &'static str, seed: u64) -> Self {
        LayoutSampler { rng, width, height, taken: Vec::new(), task, seed }
    }

    pub fn object_cell(&mut self) -> Result<Cell, WorldError> {
        for _ in 0..PLACEMENT_RETRIES {
            let c = Cell(self.rng.gen_range(1..self.width - 1), self.rng.gen_range(1..self.height - 1));
            if self.taken.iter().all(|t| t.manhattan(c) > 1) {
                self.taken.push(c);
                return Ok(c);
            }
        }
        Err(self.infeasible("object placement"))
    }

    /// Any cell not used by an object.
    pub fn agent_cell(&mut self) -> Result<Cell, WorldError> {
        for _ in 0..PLACEMENT_RETRIES {
            let c = Cell(self.rng.gen_range(0..self.width), self.rng.gen_range(0..self.height));
            if !self.taken.contains(&c) {
                return Ok(c);
            }
        }
        Err(self.infeasible("agent placement"))
    }

    pub fn direction(&mut self) -> Dir {
        Dir::ALL[self.rng.gen_range(0..4)]
    }

    fn infeasible(&self, what: &str) -> WorldError {
        WorldError::InfeasibleLayout {
            task: self.task.to_string(),
            seed: self.seed,
            reason: format!("{what} exhausted {PLACEMENT_RETRIES} retries"),
        }
    }
}

// ---------------------------------------------------------------------------
// Instance file
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: ObjectRef,
    #[serde(rename = "type")]
    pub kind: ObjectType,
    pub pos: Cell,
    pub flags: BTreeMap<Flag, bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container: Option<ObjectRef>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentRecord {
    pub pos: Cell,
    pub dir: Dir,
    pub carried: Vec<ObjectRef>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceFile {
    pub v: u32,
    pub task_id: String,
    pub layout_seed: u64,
    pub size_params: BTreeMap<String, u32>,
    pub grid: (i32, i32),
    pub objects: Vec<ObjectRecord>,
    pub agent: AgentRecord,
    pub goal: GoalSpec,
    pub step: u32,
}

impl From<&WorldState> for InstanceFile {
    fn from(s: &WorldState) -> Self {
        InstanceFile {
            v: INSTANCE_SCHEMA_VERSION,
            task_id: s.task_id.to_string(),
            layout_seed: s.layout_seed,
            size_params: (*s.size_params).clone(),
            grid: (s.width, s.height),
            objects: s
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    id: o.id,
                    kind: o.kind(),
                    pos: o.pos,
                    flags: o.kind().applicable_flags().iter().map(|f| (f, o.flag(f))).collect(),
                    container: o.container,
                })
                .collect(),
            agent: AgentRecord { pos: s.agent_pos, dir: s.agent_dir, carried: s.carried.into_iter().collect() },
            goal: (*s.goal).clone(),
            step: s.step,
        }
    }
}

impl TryFrom<InstanceFile> for WorldState {
    type Error = WorldError;

    fn try_from(f: InstanceFile) -> Result<Self, Self::Error> {
        if f.v != INSTANCE_SCHEMA_VERSION {
            return Err(WorldError::Malformed(format!("unsupported schema version {}", f.v)));
        }
        let task = tasks::lookup(&f.task_id)?;
        if f.agent.carried.len() > 1 {
            return Err(WorldError::Malformed("agent carries more than one object".into()));
        }
        let mut objects = Vec::with_capacity(f.objects.len());
        for r in &f.objects {
            if r.id.kind != r.kind {
                return Err(WorldError::Malformed(format!("id {} does not match type {}", r.id, r.kind)));
            }
            let allowed = r.kind.applicable_flags();
            let mut flags = FlagSet::EMPTY;
            for (&flag, &value) in &r.flags {
                if !allowed.get(flag) {
                    return Err(WorldError::Malformed(format!("flag {} not applicable to {}", flag.name(), r.kind)));
                }
                flags = flags.with(flag, value);
            }
            objects.push(ObjectInstance { id: r.id, pos: r.pos, flags, container: r.container });
        }
        objects.sort_by_key(|o| o.id);
        let state = WorldState {
            width: f.grid.0,
            height: f.grid.1,
            objects,
            agent_pos: f.agent.pos,
            agent_dir: f.agent.dir,
            carried: f.agent.carried.first().copied(),
            step: f.step,
            task_id: task.id(),
            layout_seed: f.layout_seed,
            size_params: Arc::new(f.size_params),
            goal: Arc::new(f.goal),
        };
        validate_state(&state)?;
        Ok(state)
    }
}

impl Serialize for WorldState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        InstanceFile::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for WorldState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = InstanceFile::deserialize(d)?;
        WorldState::try_from(f).map_err(serde::de::Error::custom)
    }
}

/// Checks the structural invariants of a state.
pub fn validate_state(s: &WorldState) -> Result<(), WorldError> {
    let bad = |m: String| Err(WorldError::Malformed(m));
    if !s.in_bounds(s.agent_pos) {
        return bad("agent out of bounds".into());
    }
    for (i, o) in s.objects.iter().enumerate() {
        if !s.in_bounds(o.pos) {
            return bad(format!("{} out of bounds", o.id));
        }
        if o.flags.0 & !o.kind().applicable_flags().0 != 0 {
            return bad(format!("{} carries inapplicable flags", o.id));
        }
        if s.objects[..i].iter().any(|p| p.id == o.id) {
            return bad(format!("duplicate id {}", o.id));
        }
        if let Some(c) = o.container {
            match s.object(c) {
                Some(f) if f.kind().is_container() => {
                    if f.pos != o.pos {
                        return bad(format!("{} not at its container position", o.id));
                    }
                }
                _ => return bad(format!("{} has invalid container {c}", o.id)),
            }
        }
        if s.is_carried(o.id) && o.pos != s.agent_pos {
            return bad(format!("carried {} does not track the agent", o.id));
        }
    }
    let mut floor: Vec<Cell> = s
        .objects
        .iter()
        .filter(|o| o.container.is_none() && !s.is_carried(o.id))
        .map(|o| o.pos)
        .collect();
    floor.sort();
    if floor.windows(2).any(|w| w[0] == w[1]) {
        return bad("two objects share a floor cell".into());
    }
    if floor.contains(&s.agent_pos) {
        return bad("agent stands on an object".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn open_room() -> WorldState {
        let mut s = init_instance("opening_packages", 7, &params(&[("n_packages", 1)])).unwrap();
        s.objects.clear();
        s.agent_pos = Cell(2, 2);
        s.agent_dir = Dir::E;
        s
    }

    #[test]
    fn object_ids_round_trip() {
        for kind in ObjectType::ALL {
            let r = ObjectRef::new(kind, 3);
            assert_eq!(r.to_string().parse::<ObjectRef>().unwrap(), r);
        }
        assert_eq!(ObjectRef::new(ObjectType::Package, 0).to_string(), "pkg0");
        assert!("nothing".parse::<ObjectRef>().is_err());
    }

    #[test]
    fn forward_moves_one_cell() {
        let s = open_room();
        let next = step(&s, Action::FORWARD).unwrap();
        assert_eq!(next.agent_pos, Cell(3, 2));
        assert_eq!(next.step, s.step + 1);
    }

    #[test]
    fn facing_a_wall_forbids_forward() {
        let mut s = open_room();
        s.agent_pos = Cell(0, 4);
        s.agent_dir = Dir::W;
        assert!(!legal_actions(&s).contains(&Action::FORWARD));
        assert!(matches!(step(&s, Action::FORWARD), Err(WorldError::IllegalAction { .. })));
        let noop = step_with(&s, Action::FORWARD, StepMode::NoOp).unwrap();
        assert_eq!(noop.agent_pos, s.agent_pos);
        assert_eq!(noop.step, s.step + 1);
    }

    #[test]
    fn toggle_turns_sink_on() {
        let mut s = open_room();
        let sink = ObjectRef::new(ObjectType::Sink, 0);
        s.objects.push(ObjectInstance::new(sink, Cell(3, 2)));
        let next = step(&s, Action::on(ActionKind::Toggle, sink)).unwrap();
        assert!(next.object(sink).unwrap().flag(Flag::Toggled));
    }

    #[test]
    fn clean_requires_soaked_rag() {
        let mut s = open_room();
        let shoe = ObjectRef::new(ObjectType::Shoe, 0);
        let rag = ObjectRef::new(ObjectType::Rag, 0);
        s.objects.push(ObjectInstance::new(rag, s.agent_pos));
        s.objects.push(ObjectInstance::new(shoe, Cell(2, 3)));
        s.objects.sort_by_key(|o| o.id);
        s.carried = Some(rag);
        let clean = Action::on(ActionKind::Clean, shoe);
        assert!(step(&s, clean).is_err());
        let wet = s.objects.iter_mut().find(|o| o.id == rag).unwrap();
        wet.flags = wet.flags.with(Flag::Soaked, true);
        let next = step(&s, clean).unwrap();
        assert!(next.object(shoe).unwrap().flag(Flag::Cleaned));
    }

    #[test]
    fn adjacent_closed_package_can_be_opened() {
        let mut s = open_room();
        let pkg = ObjectRef::new(ObjectType::Package, 0);
        s.objects.push(ObjectInstance::new(pkg, Cell(2, 1)));
        assert!(legal_actions(&s).contains(&Action::on(ActionKind::Open, pkg)));
    }

    #[test]
    fn carried_objects_follow_the_agent() {
        let mut s = open_room();
        let rag = ObjectRef::new(ObjectType::Rag, 0);
        s.objects.push(ObjectInstance::new(rag, Cell(2, 3)));
        s.agent_dir = Dir::S;
        let s = step(&s, Action::on(ActionKind::Pickup, rag)).unwrap();
        let s = step(&s, Action::FORWARD).unwrap();
        assert_eq!(s.object(rag).unwrap().pos, s.agent_pos);
        validate_state(&s).unwrap();
        let s = step(&s, Action::DROP).unwrap();
        assert!(s.object(rag).unwrap().flag(Flag::OnFloor));
        assert_eq!(s.object(rag).unwrap().pos, Cell(2, 4));
    }

    #[test]
    fn render_encodes_cells() {
        let mut s = open_room();
        let pkg = ObjectRef::new(ObjectType::Package, 0);
        let mut o = ObjectInstance::new(pkg, Cell(5, 5));
        o.flags = o.flags.with(Flag::Opened, true);
        s.objects.push(o);
        let obs = render_observation(&s);
        assert_eq!(obs.cell(Cell(0, 0)), [0, 0, 0]);
        assert_eq!(obs.cell(Cell(5, 5)), [ObjectType::Package.type_id(), Flag::Opened.bit() as u16, 0]);
        assert_eq!(obs.cell(s.agent_pos)[2], Dir::E as u16 + 1);
    }

    #[test]
    fn instance_json_round_trips() {
        let s = init_instance("cleaning_shoes", 1, &params(&[("k", 2)])).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: WorldState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
        assert!(text.starts_with("{\"v\":1,"));
    }
}
