use crate::features::{FeatureSpec, ObjectFilter, Roster};
use crate::rules::{Constraint, Interface, Rule, RuleSet};
use crate::world::{GoalSpec, LayoutSampler, ObjectInstance, ObjectRef, ObjectType, WorldError, WorldState};

use super::{any, build_ranks, change, down, is, not, place, pos, set, unset, zero, SizeParam, Task};

pub struct CleaningShoes;

const ID: &str = "cleaning_shoes";

fn roster(k: u32) -> Roster {
    let mut specs = vec![
        FeatureSpec::boolean("H_r", ObjectType::Rag, "holding"),
        FeatureSpec::distance("p_r", ObjectType::Rag, ObjectFilter::Any),
        FeatureSpec::distance("p_s", ObjectType::Sink, ObjectFilter::Any),
        FeatureSpec::distance("p_f", ObjectType::Shoe, ObjectFilter::NotCleaned),
        FeatureSpec::count("N_f", ObjectType::Shoe, "count_not_cleaned"),
        FeatureSpec::boolean("T_s", ObjectType::Sink, "toggled"),
        FeatureSpec::boolean("S_r", ObjectType::Rag, "soaked"),
    ];
    for i in 0..k {
        specs.push(
            FeatureSpec::boolean(&format!("C_{}", i + 1), ObjectType::Shoe, "cleaned")
                .with_instance(ObjectRef::new(ObjectType::Shoe, i as u8)),
        );
    }
    specs.push(FeatureSpec::boolean("O_r", ObjectType::Rag, "onfloor"));
    Roster::new(specs).expect("static roster")
}

impl Task for CleaningShoes {
    fn id(&self) -> &'static str {
        ID
    }

    fn size_param(&self) -> SizeParam {
        SizeParam { name: "k", min: 1, max: 3, default: 2 }
    }

    /// The rag starts on a table so that leaving it on the floor is real work.
    fn populate(&self, size: u32, layout: &mut LayoutSampler<'_>) -> Result<Vec<ObjectInstance>, WorldError> {
        let mut objects = place(layout, ObjectType::Table, 1)?;
        let table = objects[0];
        let mut rag = ObjectInstance::new(ObjectRef::new(ObjectType::Rag, 0), table.pos);
        rag.container = Some(table.id);
        objects.push(rag);
        objects.extend(place(layout, ObjectType::Sink, 1)?);
        objects.extend(place(layout, ObjectType::Shoe, size)?);
        Ok(objects)
    }

    fn roster(&self, state: &WorldState) -> Roster {
        roster(state.size_params.get("k").copied().unwrap_or(self.size_param().default))
    }

    fn goal(&self, size: u32) -> GoalSpec {
        let mut conjuncts: Vec<Constraint> = (1..=size).map(|i| is(&format!("C_{i}"))).collect();
        conjuncts.push(is("O_r"));
        GoalSpec { conjuncts }
    }

    fn goal_text(&self) -> &'static str {
        "Leave a towel on the floor and make sure every shoe is unstained and dust-free."
    }

    fn rule_sets(&self) -> Vec<RuleSet> {
        let rank0 = RuleSet::new(
            ID,
            0,
            vec![
                Rule::new("approach_rag", "move toward", vec![not("H_r"), pos("N_f"), pos("p_r")], vec![down("p_r")]),
                Rule::new("pick_rag", "pick up", vec![not("H_r"), pos("N_f"), zero("p_r")], vec![set("H_r")]),
                Rule::new("approach_sink", "move toward", vec![is("H_r"), not("S_r"), pos("p_s")], vec![down("p_s")]),
                Rule::new("toggle_sink", "toggle", vec![is("H_r"), not("S_r"), not("T_s"), zero("p_s")], vec![set("T_s")]),
                Rule::new("soak_rag", "soak", vec![is("H_r"), not("S_r"), is("T_s"), zero("p_s")], vec![set("S_r")]),
                Rule::new("approach_shoe", "move toward", vec![is("H_r"), is("S_r"), pos("N_f"), pos("p_f")], vec![down("p_f")]),
                Rule::new("clean_shoe", "clean", vec![is("H_r"), is("S_r"), pos("N_f"), zero("p_f")], vec![down("N_f")]),
                Rule::new("drop_rag", "drop", vec![is("H_r"), zero("N_f"), not("O_r")], vec![unset("H_r"), set("O_r")]),
            ],
        );
        build_ranks(
            rank0,
            &roster(1),
            vec![
                (
                    vec![
                        vec!["approach_rag", "pick_rag"],
                        vec!["approach_sink", "toggle_sink", "soak_rag"],
                        vec!["approach_shoe", "clean_shoe"],
                    ],
                    vec![
                        Interface::new("get_rag", "pick up", vec![not("H_r"), pos("N_f")], vec![set("H_r"), change("p_r")]),
                        Interface::new(
                            "soak_rag",
                            "soak",
                            vec![is("H_r"), not("S_r")],
                            vec![set("S_r"), change("p_s"), any("T_s")],
                        ),
                        Interface::new("clean_shoe", "clean", vec![is("H_r"), is("S_r"), pos("N_f")], vec![down("N_f"), change("p_f")]),
                    ],
                ),
                (
                    vec![vec!["get_rag", "soak_rag", "clean_shoe"]],
                    vec![Interface::new(
                        "clean_shoes",
                        "clean",
                        vec![pos("N_f")],
                        vec![down("N_f"), any("H_r"), any("S_r"), any("T_s")],
                    )],
                ),
            ],
        )
    }
}
