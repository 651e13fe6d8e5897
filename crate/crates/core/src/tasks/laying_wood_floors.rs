use crate::features::{FeatureSpec, ObjectFilter, Roster};
use crate::rules::{Interface, Rule, RuleSet};
use crate::world::{GoalSpec, LayoutSampler, ObjectInstance, ObjectType, WorldError, WorldState};

use super::{any, build_ranks, change, down, is, not, place, pos, set, zero, SizeParam, Task};

pub struct LayingWoodFloors;

const ID: &str = "laying_wood_floors";

fn roster() -> Roster {
    Roster::new(vec![
        FeatureSpec::boolean("H", ObjectType::Plywood, "holding"),
        FeatureSpec::distance("p", ObjectType::Plywood, ObjectFilter::Isolated),
        // A sheet can only be dropped next to another from two cells away.
        FeatureSpec::distance("t", ObjectType::Plywood, ObjectFilter::Any).with_reach(2),
        FeatureSpec::count("n", ObjectType::Plywood, "count_isolated"),
    ])
    .expect("static roster")
}

impl Task for LayingWoodFloors {
    fn id(&self) -> &'static str {
        ID
    }

    fn size_param(&self) -> SizeParam {
        SizeParam { name: "n_plywood", min: 2, max: 4, default: 3 }
    }

    fn populate(&self, size: u32, layout: &mut LayoutSampler<'_>) -> Result<Vec<ObjectInstance>, WorldError> {
        place(layout, ObjectType::Plywood, size)
    }

    fn roster(&self, _: &WorldState) -> Roster {
        roster()
    }

    fn goal(&self, _: u32) -> GoalSpec {
        GoalSpec { conjuncts: vec![zero("n")] }
    }

    fn goal_text(&self) -> &'static str {
        "Lay every plywood sheet on the floor, each touching at least one other sheet."
    }

    fn rule_sets(&self) -> Vec<RuleSet> {
        let rank0 = RuleSet::new(
            ID,
            0,
            vec![
                Rule::new("approach_wood", "move toward", vec![not("H"), pos("p"), pos("n")], vec![down("p"), change("t")]),
                Rule::new("pick_wood", "pick up", vec![not("H"), zero("p"), pos("n")], vec![set("H")]),
                Rule::new("carry_wood", "move toward", vec![is("H"), pos("t"), pos("n")], vec![down("t")]),
                Rule::new("lay_wood", "drop", vec![is("H"), pos("n"), zero("t")], vec![any("H"), down("n"), change("p")]),
            ],
        );
        build_ranks(
            rank0,
            &roster(),
            vec![
                (
                    vec![vec!["approach_wood", "pick_wood"], vec!["carry_wood", "lay_wood"]],
                    vec![
                        Interface::new("fetch_wood", "pick up", vec![not("H"), pos("n")], vec![set("H"), change("p"), change("t")]),
                        Interface::new("place_wood", "drop", vec![is("H"), pos("n")], vec![down("n"), any("H"), change("t"), change("p")]),
                    ],
                ),
                (
                    vec![vec!["fetch_wood", "place_wood"]],
                    vec![Interface::new("lay_floor", "reduce", vec![pos("n")], vec![down("n"), any("H")])],
                ),
            ],
        )
    }
}
