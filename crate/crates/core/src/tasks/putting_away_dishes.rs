use crate::features::{FeatureSpec, ObjectFilter, Roster};
use crate::rules::{Interface, Rule, RuleSet};
use crate::world::{GoalSpec, LayoutSampler, ObjectInstance, ObjectType, WorldError, WorldState};

use super::{any, build_ranks, change, down, is, not, place, pos, set, unset, zero, SizeParam, Task};

pub struct PuttingAwayDishes;

const ID: &str = "putting_away_dishes";

fn roster() -> Roster {
    Roster::new(vec![
        FeatureSpec::boolean("H", ObjectType::Plate, "holding"),
        FeatureSpec::distance("p", ObjectType::Plate, ObjectFilter::NotInside).with_target(ObjectType::Cabinet),
        FeatureSpec::distance("b", ObjectType::Cabinet, ObjectFilter::Any),
        FeatureSpec::count("N", ObjectType::Plate, "count_not_inside_target").with_target(ObjectType::Cabinet),
        FeatureSpec::count("K", ObjectType::Cabinet, "count_closed"),
    ])
    .expect("static roster")
}

impl Task for PuttingAwayDishes {
    fn id(&self) -> &'static str {
        ID
    }

    fn size_param(&self) -> SizeParam {
        SizeParam { name: "n_plates", min: 1, max: 3, default: 2 }
    }

    fn populate(&self, size: u32, layout: &mut LayoutSampler<'_>) -> Result<Vec<ObjectInstance>, WorldError> {
        let mut objects = place(layout, ObjectType::Cabinet, 1)?;
        objects.extend(place(layout, ObjectType::Plate, size)?);
        Ok(objects)
    }

    fn roster(&self, _: &WorldState) -> Roster {
        roster()
    }

    fn goal(&self, _: u32) -> GoalSpec {
        GoalSpec { conjuncts: vec![zero("N")] }
    }

    fn goal_text(&self) -> &'static str {
        "Put every plate inside a cabinet."
    }

    fn rule_sets(&self) -> Vec<RuleSet> {
        let rank0 = RuleSet::new(
            ID,
            0,
            vec![
                Rule::new("approach_cabinet", "move toward", vec![pos("N"), pos("K"), pos("b")], vec![down("b")]),
                Rule::new("open_cabinet", "open", vec![pos("N"), pos("K"), zero("b")], vec![down("K")]),
                Rule::new("approach_plate", "move toward", vec![not("H"), pos("N"), pos("p"), zero("K")], vec![down("p"), change("b")]),
                Rule::new("pick_plate", "pick up", vec![not("H"), pos("N"), zero("p"), zero("K")], vec![set("H"), change("b")]),
                Rule::new("carry_plate", "move toward", vec![is("H"), pos("N"), pos("b"), zero("K")], vec![down("b")]),
                Rule::new("store_plate", "place", vec![is("H"), pos("N"), zero("b"), zero("K")], vec![unset("H"), down("N"), change("p")]),
            ],
        );
        build_ranks(
            rank0,
            &roster(),
            vec![
                (
                    vec![
                        vec!["approach_cabinet", "open_cabinet"],
                        vec!["approach_plate", "pick_plate"],
                        vec!["carry_plate", "store_plate"],
                    ],
                    vec![
                        Interface::new("open_cabinet", "open", vec![pos("N"), pos("K")], vec![down("K"), change("b")]),
                        Interface::new("fetch_plate", "pick up", vec![not("H"), pos("N"), zero("K")], vec![set("H"), change("p"), change("b")]),
                        Interface::new("store_plate", "place", vec![is("H"), pos("N"), zero("K")], vec![unset("H"), down("N"), change("b"), change("p")]),
                    ],
                ),
                (
                    vec![vec!["fetch_plate", "store_plate"]],
                    vec![Interface::new("put_away_plate", "reduce", vec![pos("N"), zero("K")], vec![down("N"), any("H")])],
                ),
                (
                    vec![vec!["open_cabinet", "put_away_plate"]],
                    vec![Interface::new("put_away_dishes", "reduce", vec![pos("N")], vec![down("N"), change("K")])],
                ),
            ],
        )
    }
}
