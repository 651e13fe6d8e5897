use crate::features::{FeatureSpec, ObjectFilter, Roster};
use crate::rules::{Interface, Rule, RuleSet};
use crate::world::{GoalSpec, LayoutSampler, ObjectInstance, ObjectType, WorldError, WorldState};

use super::{build_ranks, change, down, place, pos, zero, SizeParam, Task};

pub struct OpeningPackages;

const ID: &str = "opening_packages";

fn roster() -> Roster {
    Roster::new(vec![
        FeatureSpec::distance("p", ObjectType::Package, ObjectFilter::NotOpened),
        FeatureSpec::count("N", ObjectType::Package, "count_closed"),
    ])
    .expect("static roster")
}

impl Task for OpeningPackages {
    fn id(&self) -> &'static str {
        ID
    }

    fn size_param(&self) -> SizeParam {
        SizeParam { name: "n_packages", min: 1, max: 4, default: 2 }
    }

    fn populate(&self, size: u32, layout: &mut LayoutSampler<'_>) -> Result<Vec<ObjectInstance>, WorldError> {
        place(layout, ObjectType::Package, size)
    }

    fn roster(&self, _: &WorldState) -> Roster {
        roster()
    }

    fn goal(&self, _: u32) -> GoalSpec {
        GoalSpec { conjuncts: vec![zero("N")] }
    }

    fn goal_text(&self) -> &'static str {
        "Open every package."
    }

    fn rule_sets(&self) -> Vec<RuleSet> {
        let rank0 = RuleSet::new(
            ID,
            0,
            vec![
                Rule::new("approach_package", "move toward", vec![pos("N"), pos("p")], vec![down("p")]),
                Rule::new("open_package", "open", vec![pos("N"), zero("p")], vec![down("N")]),
            ],
        );
        build_ranks(
            rank0,
            &roster(),
            vec![(
                vec![vec!["approach_package", "open_package"]],
                vec![Interface::new("open_all", "open", vec![pos("N")], vec![down("N"), change("p")])],
            )],
        )
    }
}
