use crate::features::{FeatureSpec, ObjectFilter, Roster};
use crate::rules::{Interface, Rule, RuleSet};
use crate::world::{GoalSpec, LayoutSampler, ObjectInstance, ObjectType, WorldError, WorldState};

use super::{any, build_ranks, change, down, is, not, place, pos, set, unset, zero, SizeParam, Task};

pub struct ThrowingAwayLeftovers;

const ID: &str = "throwing_away_leftovers";

fn roster() -> Roster {
    Roster::new(vec![
        FeatureSpec::boolean("H", ObjectType::Hamburger, "holding"),
        FeatureSpec::distance("p", ObjectType::Hamburger, ObjectFilter::NotInside).with_target(ObjectType::Ashcan),
        FeatureSpec::distance("a", ObjectType::Ashcan, ObjectFilter::Any),
        FeatureSpec::count("N", ObjectType::Hamburger, "count_not_inside_target").with_target(ObjectType::Ashcan),
    ])
    .expect("static roster")
}

impl Task for ThrowingAwayLeftovers {
    fn id(&self) -> &'static str {
        ID
    }

    fn size_param(&self) -> SizeParam {
        SizeParam { name: "n_hamburgers", min: 1, max: 3, default: 2 }
    }

    fn populate(&self, size: u32, layout: &mut LayoutSampler<'_>) -> Result<Vec<ObjectInstance>, WorldError> {
        let mut objects = place(layout, ObjectType::Ashcan, 1)?;
        objects.extend(place(layout, ObjectType::Hamburger, size)?);
        Ok(objects)
    }

    fn roster(&self, _: &WorldState) -> Roster {
        roster()
    }

    fn goal(&self, _: u32) -> GoalSpec {
        GoalSpec { conjuncts: vec![zero("N")] }
    }

    fn goal_text(&self) -> &'static str {
        "Throw away every hamburger by placing it in a trash can."
    }

    fn rule_sets(&self) -> Vec<RuleSet> {
        let rank0 = RuleSet::new(
            ID,
            0,
            vec![
                Rule::new("approach_hamburger", "move toward", vec![not("H"), pos("N"), pos("p")], vec![down("p"), change("a")]),
                Rule::new("pick_hamburger", "pick up", vec![not("H"), pos("N"), zero("p")], vec![set("H")]),
                Rule::new("approach_ashcan", "move toward", vec![is("H"), pos("N"), pos("a")], vec![down("a")]),
                Rule::new("discard_hamburger", "place", vec![is("H"), pos("N"), zero("a")], vec![unset("H"), down("N"), change("p")]),
            ],
        );
        build_ranks(
            rank0,
            &roster(),
            vec![
                (
                    vec![vec!["approach_hamburger", "pick_hamburger"], vec!["approach_ashcan", "discard_hamburger"]],
                    vec![
                        Interface::new("fetch_hamburger", "pick up", vec![not("H"), pos("N")], vec![set("H"), change("p"), change("a")]),
                        Interface::new("bin_hamburger", "place", vec![is("H"), pos("N")], vec![unset("H"), down("N"), change("a"), change("p")]),
                    ],
                ),
                (
                    vec![vec!["fetch_hamburger", "bin_hamburger"]],
                    vec![Interface::new("dispose_leftovers", "reduce", vec![pos("N")], vec![down("N"), any("H")])],
                ),
            ],
        )
    }
}
