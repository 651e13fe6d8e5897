use granbench::rules;
use granbench::tasks::{self, Task};
use granbench::world::{self, Action, ActionKind, StepMode, WorldError, WorldState};
use proptest::prelude::*;

fn any_instance() -> impl Strategy<Value = WorldState> {
    let ids = tasks::task_ids();
    (0..ids.len(), any::<u64>(), any::<u32>()).prop_map(move |(t, seed, size)| {
        let task = tasks::lookup(ids[t]).unwrap();
        let sp = task.size_param();
        let size = sp.min + size % (sp.max - sp.min + 1);
        task.init_instance(seed % (1 << 40), &tasks::size_params(task, size)).unwrap()
    })
}

fn every_action(s: &WorldState) -> Vec<Action> {
    let mut out = Vec::new();
    for kind in ActionKind::ALL {
        if kind.takes_target() {
            out.extend(s.objects.iter().map(|o| Action::on(kind, o.id)));
        } else {
            out.push(Action { kind, target: None });
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn legal_rollouts_keep_states_valid(start in any_instance(), picks in prop::collection::vec(any::<usize>(), 1..60)) {
        let mut s = start.clone();
        let mut log = Vec::new();
        for (i, pick) in picks.into_iter().enumerate() {
            let legal = world::legal_actions(&s);
            prop_assert!(!legal.is_empty());
            let a = legal[pick % legal.len()];
            s = world::step(&s, a).unwrap();
            log.push(a);
            world::validate_state(&s).unwrap();
            prop_assert_eq!(s.step as usize, i + 1);
            prop_assert_eq!(s.objects.len(), start.objects.len());
        }
        prop_assert_eq!(world::replay(&start, &log).unwrap(), s);
    }

    #[test]
    fn legal_actions_are_exactly_the_accepted_ones(start in any_instance(), walk in prop::collection::vec(any::<usize>(), 0..30)) {
        let mut s = start;
        for pick in walk {
            let legal = world::legal_actions(&s);
            s = world::step(&s, legal[pick % legal.len()]).unwrap();
        }
        let legal = world::legal_actions(&s);
        for a in every_action(&s) {
            match world::step(&s, a) {
                Ok(_) => prop_assert!(legal.contains(&a), "{} accepted but not listed", a),
                Err(WorldError::IllegalAction { .. }) => {
                    prop_assert!(!legal.contains(&a));
                    let noop = world::step_with(&s, a, StepMode::NoOp).unwrap();
                    prop_assert_eq!(noop.dynamic_key(), s.dynamic_key());
                    prop_assert_eq!(noop.step, s.step + 1);
                }
                Err(e) => prop_assert!(false, "unexpected error {}", e),
            }
        }
    }

    #[test]
    fn motion_only_changes_the_agent_channel(start in any_instance(), walk in prop::collection::vec(any::<usize>(), 0..20), turn in 0usize..3) {
        let mut s = start;
        for pick in walk {
            let legal = world::legal_actions(&s);
            s = world::step(&s, legal[pick % legal.len()]).unwrap();
        }
        let a = [Action::FORWARD, Action::TURN_LEFT, Action::TURN_RIGHT][turn];
        if let Ok(next) = world::step(&s, a) {
            let (before, after) = (world::render_observation(&s), world::render_observation(&next));
            for (i, (x, y)) in before.data.iter().zip(&after.data).enumerate() {
                if i % 3 != 2 {
                    prop_assert_eq!(x, y);
                }
            }
            let agents = |o: &world::ObservationGrid| o.data.iter().skip(2).step_by(3).filter(|v| **v != 0).count();
            prop_assert_eq!((agents(&before), agents(&after)), (1, 1));
        }
    }

    #[test]
    fn goal_test_agrees_with_the_roster(start in any_instance(), walk in prop::collection::vec(any::<usize>(), 0..40)) {
        let task = tasks::lookup(start.task_id).unwrap();
        let roster = task.roster(&start);
        let mut s = start;
        for pick in walk {
            let legal = world::legal_actions(&s);
            s = world::step(&s, legal[pick % legal.len()]).unwrap();
            let v = roster.eval(&s).unwrap();
            prop_assert_eq!(&v, &roster.eval(&s).unwrap());
            prop_assert_eq!(&v.names[..], &roster.names()[..]);
            let goal = granbench::features::goal_holds(&v, &s.goal.conjuncts).unwrap();
            prop_assert_eq!(world::is_goal(&s), goal);
        }
    }

    #[test]
    fn instances_are_deterministic_and_valid(start in any_instance()) {
        let task = tasks::lookup(start.task_id).unwrap();
        let again = task.init_instance(start.layout_seed, &start.size_params).unwrap();
        prop_assert_eq!(&again, &start);
        world::validate_state(&start).unwrap();
        prop_assert!(!world::is_goal(&start));
    }
}

#[test]
fn shipped_rule_sets_are_well_formed() {
    for task in tasks::all() {
        let s = task.init_instance(0, &Default::default()).unwrap();
        let roster = task.roster(&s);
        let sets = task.rule_sets();
        assert_eq!(sets.iter().map(|rs| rs.rank).collect::<Vec<_>>(), (0..sets.len() as u32).collect::<Vec<_>>());
        for rs in &sets {
            rs.check(Some(&roster)).unwrap();
            assert!(rules::validate_ruleset(rs, &s, 1000).unwrap().passed(), "{} rank {}", task.id(), rs.rank);
        }
        // Coarser ranks never issue more rules.
        assert!(sets.windows(2).all(|w| w[1].rules.len() <= w[0].rules.len()), "{}", task.id());
    }
}

#[test]
fn unknown_tasks_and_sizes_are_rejected() {
    assert!(matches!(tasks::lookup("folding_laundry"), Err(WorldError::UnknownTask(_))));
    let t: &dyn Task = tasks::lookup("cleaning_shoes").unwrap();
    let err = t.init_instance(0, &tasks::size_params(t, t.size_param().max + 5)).unwrap_err();
    assert!(matches!(err, WorldError::InvalidSizeParam(_)));
}
