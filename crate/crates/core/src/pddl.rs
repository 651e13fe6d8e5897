//! PDDL export of the boolean fragment of an instance, and a parser for the
//! files we emit.
//!
//! The symbolic projection of a state is: typed objects (task objects,
//! grid cells, directions), object positions, the agent's cell and
//! heading, held and contained objects, true flags, and static cell
//! adjacency. Goals translate only when every conjunct is a conjunction of
//! ground atoms; counts such as "no isolated sheet" are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::features::{FeatureKind, FeatureSpec};
use crate::rules::{Constraint, ConstraintOp};
use crate::tasks;
use crate::world::{Cell, Dir, Flag, ObjectType, WorldError, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PddlError {
    #[error("not expressible in the STRIPS subset: {0}")]
    UnsupportedConstruct(String),
    #[error("PDDL syntax error: {0}")]
    Syntax(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Ground atom: predicate followed by its arguments.
pub type Fact = Vec<String>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PddlModel {
    pub problem: String,
    pub domain: String,
    /// Object name → type name.
    pub objects: BTreeMap<String, String>,
    pub init: BTreeSet<Fact>,
    pub goal: BTreeSet<Fact>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PddlFiles {
    pub domain: String,
    pub problem: String,
}

const DIRS: [(Dir, &str); 4] = [(Dir::N, "north"), (Dir::E, "east"), (Dir::S, "south"), (Dir::W, "west")];

fn dir_name(d: Dir) -> &'static str {
    DIRS.iter().find(|(x, _)| *x == d).map(|(_, n)| *n).expect("all directions named")
}

pub fn cell_name(c: Cell) -> String {
    format!("c{}_{}", c.col(), c.row())
}

fn fact(parts: &[&str]) -> Fact {
    parts.iter().map(|s| s.to_string()).collect()
}

pub fn domain_name(task_id: &str) -> String {
    format!("granbench-{}", task_id.replace('_', "-"))
}

fn problem_name(state: &WorldState) -> String {
    format!("{}-{}", state.task_id.replace('_', "-"), state.layout_seed)
}

fn unsupported<T>(why: String) -> Result<T, PddlError> {
    Err(PddlError::UnsupportedConstruct(why))
}

/// The single instance of `kind` in `state`, if there is exactly one.
fn only_instance(state: &WorldState, kind: ObjectType) -> Option<String> {
    let mut it = state.objects_of(kind);
    match (it.next(), it.next()) {
        (Some(o), None) => Some(o.id.to_string()),
        _ => None,
    }
}

fn translate(state: &WorldState, spec: &FeatureSpec, c: &Constraint) -> Result<Vec<Fact>, PddlError> {
    let name = &spec.name;
    match spec.kind {
        FeatureKind::BooleanPredicate => {
            if c.op != ConstraintOp::IsTrue {
                return unsupported(format!("negated goal atom `{c}` needs negative preconditions"));
            }
            let pred = spec.predicate.as_deref().unwrap_or_default();
            let obj = match spec.instance {
                Some(id) => id.to_string(),
                None => only_instance(state, spec.object_type).ok_or_else(|| {
                    PddlError::UnsupportedConstruct(format!("`{name}` binds to the nearest of several {}", spec.object_type))
                })?,
            };
            Ok(vec![fact(&[pred, &obj])])
        }
        FeatureKind::Count => {
            if c.op != ConstraintOp::EqZero {
                return unsupported(format!("count goal `{c}` is not a conjunction of atoms"));
            }
            let objs: Vec<String> = state.objects_of(spec.object_type).map(|o| o.id.to_string()).collect();
            let count_fn = spec.count_fn.as_deref().unwrap_or_default();
            let flag = match count_fn {
                "count_closed" => Some(Flag::Opened),
                "count_not_cleaned" => Some(Flag::Cleaned),
                "count_not_soaked" => Some(Flag::Soaked),
                "count_not_toggled" => Some(Flag::Toggled),
                "count_not_sliced" => Some(Flag::Sliced),
                "count_not_onfloor" => Some(Flag::OnFloor),
                _ => None,
            };
            if let Some(flag) = flag {
                return Ok(objs.iter().map(|o| fact(&[flag.name(), o])).collect());
            }
            if count_fn == "count_not_inside_target" || count_fn == "count_not_ontop" {
                let target = spec.target.unwrap_or(if count_fn == "count_not_ontop" {
                    ObjectType::Table
                } else {
                    ObjectType::Box
                });
                let Some(t) = only_instance(state, target) else {
                    return unsupported(format!("`{name}` accepts any of several {target}s (a disjunction)"));
                };
                return Ok(objs.iter().map(|o| fact(&["inside", o, &t])).collect());
            }
            unsupported(format!("`{name}` uses {count_fn}, which has no ground-atom form"))
        }
        FeatureKind::DistanceToNearest => unsupported(format!("distance goal `{c}`")),
    }
}

/// Symbolic boolean projection of `state`, including its goal.
pub fn project(state: &WorldState) -> Result<PddlModel, PddlError> {
    let task = tasks::lookup(state.task_id)?;
    let roster = task.roster(state);
    let mut m = PddlModel { problem: problem_name(state), domain: domain_name(state.task_id), ..Default::default() };
    for o in &state.objects {
        m.objects.insert(o.id.to_string(), o.kind().name().to_string());
    }
    for (_, d) in DIRS {
        m.objects.insert(d.to_string(), "direction".into());
    }
    for row in 0..state.height {
        for col in 0..state.width {
            let c = Cell(col, row);
            m.objects.insert(cell_name(c), "cell".into());
            for (d, dn) in DIRS {
                let n = c.offset(d);
                if state.in_bounds(n) {
                    m.init.insert(fact(&["adjacent", dn, &cell_name(c), &cell_name(n)]));
                }
            }
        }
    }
    for (d, dn) in DIRS {
        m.init.insert(fact(&["left-of", dir_name(d.left()), dn]));
    }
    m.init.insert(fact(&["agent-at", &cell_name(state.agent_pos)]));
    if state.carried.is_none() {
        m.init.insert(fact(&["hand-empty"]));
    }
    for row in 0..state.height {
        for col in 0..state.width {
            let c = Cell(col, row);
            if state.is_free(c) {
                m.init.insert(fact(&["free", &cell_name(c)]));
            }
        }
    }
    m.init.insert(fact(&["facing", dir_name(state.agent_dir)]));
    for o in &state.objects {
        let id = o.id.to_string();
        if state.is_carried(o.id) {
            m.init.insert(fact(&["holding", &id]));
        } else {
            m.init.insert(fact(&["at", &id, &cell_name(o.pos)]));
        }
        if let Some(c) = o.container {
            m.init.insert(fact(&["inside", &id, &c.to_string()]));
        }
        for f in o.flags.iter() {
            m.init.insert(fact(&[f.name(), &id]));
        }
    }
    for c in &state.goal.conjuncts {
        let spec = roster
            .get(&c.feature)
            .ok_or_else(|| PddlError::UnsupportedConstruct(format!("goal feature `{}` not in roster", c.feature)))?;
        m.goal.extend(translate(state, spec, c)?);
    }
    Ok(m)
}

fn render_fact(f: &Fact) -> String {
    format!("({})", f.join(" "))
}

fn render_problem(m: &PddlModel) -> String {
    let mut by_type: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (o, t) in &m.objects {
        by_type.entry(t).or_default().push(o);
    }
    let mut s = String::new();
    let _ = writeln!(s, "(define (problem {})", m.problem);
    let _ = writeln!(s, "  (:domain {})", m.domain);
    s.push_str("  (:objects\n");
    for (t, objs) in &by_type {
        let _ = writeln!(s, "    {} - {}", objs.join(" "), t);
    }
    s.push_str("  )\n  (:init\n");
    for f in &m.init {
        let _ = writeln!(s, "    {}", render_fact(f));
    }
    s.push_str("  )\n  (:goal (and\n");
    for f in &m.goal {
        let _ = writeln!(s, "    {}", render_fact(f));
    }
    s.push_str("  ))\n)\n");
    s
}

fn render_domain(state: &WorldState) -> String {
    let kinds: BTreeSet<ObjectType> = state.objects.iter().map(|o| o.kind()).collect();
    let flags: BTreeSet<&str> = kinds.iter().flat_map(|k| k.applicable_flags().iter().map(Flag::name)).collect();
    let mut s = String::new();
    let _ = writeln!(s, "(define (domain {})", domain_name(state.task_id));
    s.push_str("  (:requirements :strips :typing)\n");
    let names: Vec<&str> = kinds.iter().map(|k| k.name()).collect();
    let _ = writeln!(s, "  (:types cell direction item - object {} - item)", names.join(" "));
    s.push_str("  (:predicates\n");
    s.push_str("    (adjacent ?d - direction ?from ?to - cell)\n");
    s.push_str("    (left-of ?d1 ?d2 - direction)\n");
    s.push_str("    (agent-at ?c - cell)\n");
    s.push_str("    (facing ?d - direction)\n");
    s.push_str("    (at ?o - item ?c - cell)\n");
    s.push_str("    (free ?c - cell)\n");
    s.push_str("    (holding ?o - item)\n");
    s.push_str("    (hand-empty)\n");
    s.push_str("    (inside ?o ?c - item)\n");
    for f in &flags {
        let _ = writeln!(s, "    ({f} ?o - item)");
    }
    s.push_str("  )\n");
    s.push_str(
        "  (:action forward
    :parameters (?from ?to - cell ?d - direction)
    :precondition (and (agent-at ?from) (facing ?d) (adjacent ?d ?from ?to) (free ?to))
    :effect (and (agent-at ?to) (not (agent-at ?from))))
  (:action turn-left
    :parameters (?d ?l - direction)
    :precondition (and (facing ?d) (left-of ?l ?d))
    :effect (and (facing ?l) (not (facing ?d))))
  (:action turn-right
    :parameters (?d ?r - direction)
    :precondition (and (facing ?d) (left-of ?d ?r))
    :effect (and (facing ?r) (not (facing ?d))))
  (:action pickup
    :parameters (?o - item ?a ?c - cell ?d - direction)
    :precondition (and (hand-empty) (agent-at ?a) (facing ?d) (adjacent ?d ?a ?c) (at ?o ?c))
    :effect (and (holding ?o) (free ?c) (not (hand-empty)) (not (at ?o ?c))))
  (:action drop
    :parameters (?o - item ?a ?c - cell ?d - direction)
    :precondition (and (holding ?o) (agent-at ?a) (facing ?d) (adjacent ?d ?a ?c) (free ?c))
    :effect (and (at ?o ?c) (hand-empty) (not (free ?c)) (not (holding ?o))))
  (:action place-inside
    :parameters (?o ?t - item ?a ?c - cell ?d - direction)
    :precondition (and (holding ?o) (agent-at ?a) (facing ?d) (adjacent ?d ?a ?c) (at ?t ?c))
    :effect (and (inside ?o ?t) (at ?o ?c) (hand-empty) (not (holding ?o))))\n",
    );
    for (flag, action) in [("opened", "open"), ("toggled", "toggle"), ("sliced", "slice")] {
        if flags.contains(flag) {
            let _ = write!(
                s,
                "  (:action {action}
    :parameters (?o - item ?a ?c - cell ?d - direction)
    :precondition (and (agent-at ?a) (facing ?d) (adjacent ?d ?a ?c) (at ?o ?c))
    :effect ({flag} ?o))\n"
            );
        }
    }
    s.push_str(")\n");
    s
}

/// Problem and domain files for `state`. Fails on goals outside the
/// ground-conjunction fragment.
pub fn export_pddl(state: &WorldState) -> Result<PddlFiles, PddlError> {
    let m = project(state)?;
    Ok(PddlFiles { domain: render_domain(state), problem: render_problem(&m) })
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

impl Sexp {
    fn atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom(a) => Some(a),
            Sexp::List(_) => None,
        }
    }

    fn list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List(l) => Some(l),
            Sexp::Atom(_) => None,
        }
    }

    /// A list whose head is the atom `head`.
    fn headed(&self, head: &str) -> Option<&[Sexp]> {
        self.list().filter(|l| l.first().and_then(Sexp::atom) == Some(head)).map(|l| &l[1..])
    }
}

fn syntax<T>(why: impl Into<String>) -> Result<T, PddlError> {
    Err(PddlError::Syntax(why.into()))
}

/// Parses one s-expression; PDDL is case-insensitive, so atoms are lowercased.
pub fn parse_sexp(text: &str) -> Result<Sexp, PddlError> {
    let mut tokens = Vec::new();
    for line in text.lines() {
        let line = line.split(';').next().unwrap_or("");
        let spaced = line.replace('(', " ( ").replace(')', " ) ");
        tokens.extend(spaced.split_whitespace().map(str::to_lowercase));
    }
    let mut stack: Vec<Vec<Sexp>> = Vec::new();
    let mut done = None;
    for t in tokens {
        if done.is_some() {
            return syntax(format!("trailing token `{t}`"));
        }
        match t.as_str() {
            "(" => stack.push(Vec::new()),
            ")" => {
                let list = stack.pop().ok_or_else(|| PddlError::Syntax("unbalanced `)`".into()))?;
                match stack.last_mut() {
                    Some(parent) => parent.push(Sexp::List(list)),
                    None => done = Some(Sexp::List(list)),
                }
            }
            _ => match stack.last_mut() {
                Some(parent) => parent.push(Sexp::Atom(t)),
                None => return syntax(format!("atom `{t}` outside any list")),
            },
        }
    }
    if !stack.is_empty() {
        return syntax("unbalanced `(`");
    }
    done.ok_or_else(|| PddlError::Syntax("empty input".into()))
}

fn ground_fact(s: &Sexp) -> Result<Fact, PddlError> {
    let items = s.list().ok_or_else(|| PddlError::Syntax("expected a literal".into()))?;
    let f: Option<Fact> = items.iter().map(|x| x.atom().map(str::to_string)).collect();
    match f {
        Some(f) if !f.is_empty() && f[0] != "not" && f[0] != "and" => Ok(f),
        _ => syntax("expected a positive ground atom"),
    }
}

/// Typed list `a b - t c - u` into name → type. Untyped names get `object`.
fn typed_list(items: &[Sexp]) -> Result<BTreeMap<String, String>, PddlError> {
    let mut out = BTreeMap::new();
    let mut pending = Vec::new();
    let mut it = items.iter();
    while let Some(x) = it.next() {
        let a = x.atom().ok_or_else(|| PddlError::Syntax("nested list in typed list".into()))?;
        if a == "-" {
            let t = it.next().and_then(Sexp::atom).ok_or_else(|| PddlError::Syntax("`-` without a type".into()))?;
            for p in pending.drain(..) {
                out.insert(p, t.to_string());
            }
        } else {
            pending.push(a.to_string());
        }
    }
    for p in pending {
        out.insert(p, "object".into());
    }
    Ok(out)
}

/// Parses a problem file in the STRIPS subset we emit.
pub fn parse_problem(text: &str) -> Result<PddlModel, PddlError> {
    let root = parse_sexp(text)?;
    let body = root.headed("define").ok_or_else(|| PddlError::Syntax("expected (define ...)".into()))?;
    let mut m = PddlModel::default();
    let mut goal_seen = false;
    for section in body {
        if let Some(p) = section.headed("problem") {
            m.problem = p.first().and_then(Sexp::atom).unwrap_or_default().to_string();
        } else if let Some(d) = section.headed(":domain") {
            m.domain = d.first().and_then(Sexp::atom).unwrap_or_default().to_string();
        } else if let Some(objs) = section.headed(":objects") {
            m.objects = typed_list(objs)?;
        } else if let Some(facts) = section.headed(":init") {
            for f in facts {
                m.init.insert(ground_fact(f)?);
            }
        } else if let Some(g) = section.headed(":goal") {
            goal_seen = true;
            let [g] = g else { return syntax(":goal takes one formula") };
            match g.headed("and") {
                Some(conj) => {
                    for f in conj {
                        m.goal.insert(ground_fact(f)?);
                    }
                }
                None => {
                    m.goal.insert(ground_fact(g)?);
                }
            }
        } else {
            return syntax("unknown problem section");
        }
    }
    if m.problem.is_empty() || m.domain.is_empty() || !goal_seen {
        return syntax("problem needs a name, a :domain and a :goal");
    }
    for f in m.init.iter().chain(&m.goal) {
        if let Some(bad) = f[1..].iter().find(|a| !m.objects.contains_key(*a)) {
            return syntax(format!("undeclared object `{bad}` in {}", render_fact(f)));
        }
    }
    Ok(m)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PddlDomain {
    pub name: String,
    pub requirements: Vec<String>,
    /// Predicate name → arity.
    pub predicates: BTreeMap<String, usize>,
    pub actions: Vec<String>,
}

/// Parses the header of a domain file: name, requirements, predicate
/// signatures and action names.
pub fn parse_domain(text: &str) -> Result<PddlDomain, PddlError> {
    let root = parse_sexp(text)?;
    let body = root.headed("define").ok_or_else(|| PddlError::Syntax("expected (define ...)".into()))?;
    let mut d = PddlDomain::default();
    for section in body {
        if let Some(n) = section.headed("domain") {
            d.name = n.first().and_then(Sexp::atom).unwrap_or_default().to_string();
        } else if let Some(r) = section.headed(":requirements") {
            d.requirements = r.iter().filter_map(Sexp::atom).map(str::to_string).collect();
        } else if let Some(preds) = section.headed(":predicates") {
            for p in preds {
                let items = p.list().ok_or_else(|| PddlError::Syntax("bad predicate".into()))?;
                let name = items.first().and_then(Sexp::atom).ok_or_else(|| PddlError::Syntax("bad predicate".into()))?;
                let arity = typed_list(&items[1..])?.len();
                d.predicates.insert(name.to_string(), arity);
            }
        } else if let Some(a) = section.headed(":action") {
            d.actions.push(a.first().and_then(Sexp::atom).unwrap_or_default().to_string());
        } else if section.headed(":types").is_none() {
            return syntax("unknown domain section");
        }
    }
    Ok(d)
}
