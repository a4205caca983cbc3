mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hetsched::dispatch::{solve_dr, DispatchRule};
use hetsched::exact::lower_bound;
use hetsched::graph_state::{GraphState, MaskRule, MaskVariant};
use hetsched::instance::{parse_instance, write_instance, Instance};
use hetsched::schedule::validate;

use common::{random_instance, random_rollout};

fn instance(seed: u64, jobs: usize, machines: usize) -> Arc<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Arc::new(random_instance(&mut rng, jobs, machines, 4, "prop"))
}

/// Walks `steps` random actions into the instance.
fn random_state(inst: &Arc<Instance>, seed: u64, steps: usize) -> GraphState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = GraphState::new(inst.clone());
    for _ in 0..steps {
        if state.is_terminal() {
            break;
        }
        let actions = state.legal_actions();
        state
            .step(actions[rng.gen_range(0..actions.len())])
            .unwrap();
    }
    state
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rewards_telescope_to_minus_makespan(seed in any::<u64>(), jobs in 1usize..6, machines in 1usize..4) {
        let inst = instance(seed, jobs, machines);
        let (state, rewards) = random_rollout(&inst, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert_eq!(rewards.iter().sum::<i64>(), -(state.makespan() as i64));
        prop_assert!(validate(&inst, state.schedule()).is_ok());
    }

    #[test]
    fn masks_are_non_empty_and_nested(
        seed in any::<u64>(), jobs in 1usize..6, machines in 1usize..4, steps in 0usize..12, k in 1usize..4,
    ) {
        let inst = instance(seed, jobs, machines);
        let state = random_state(&inst, seed ^ 2, steps);
        prop_assume!(!state.is_terminal());
        let actions = state.legal_actions();
        for variant in [MaskVariant::EarliestStart, MaskVariant::EarliestFinish] {
            let small = state.mask_actions(&actions, MaskRule::new(variant, k));
            let large = state.mask_actions(&actions, MaskRule::new(variant, k + 1));
            prop_assert!(small.iter().any(|&x| x));
            prop_assert!(small.iter().zip(&large).all(|(&s, &l)| !s || l));
        }
        prop_assert!(state.mask_actions(&actions, MaskRule::unrestricted()).iter().all(|&x| x));
        let starts: Vec<u64> = actions.iter().map(|&a| state.action_times(a).unwrap().0).collect();
        let min = *starts.iter().min().unwrap();
        let es1 = state.mask_actions(&actions, MaskRule::new(MaskVariant::EarliestStart, 1));
        for (s, m) in starts.iter().zip(&es1) {
            prop_assert_eq!(*m, *s == min);
        }
    }

    #[test]
    fn lower_bound_never_decreases_and_ends_exact(seed in any::<u64>(), jobs in 1usize..6, machines in 1usize..4) {
        let inst = instance(seed, jobs, machines);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let mut state = GraphState::new(inst.clone());
        let mut last = lower_bound(&state);
        while !state.is_terminal() {
            let actions = state.legal_actions();
            state.step(actions[rng.gen_range(0..actions.len())]).unwrap();
            let b = lower_bound(&state);
            prop_assert!(b >= last);
            prop_assert!(b <= state.makespan().max(b));
            last = b;
        }
        prop_assert_eq!(last, state.makespan());
    }

    #[test]
    fn dispatch_rules_build_valid_schedules(seed in any::<u64>(), jobs in 1usize..8, machines in 1usize..5) {
        let inst = instance(seed, jobs, machines);
        for rule in DispatchRule::all() {
            let s = solve_dr(&inst, rule);
            prop_assert!(validate(&inst, &s).is_ok());
        }
    }

    #[test]
    fn instance_text_round_trips(seed in any::<u64>(), jobs in 1usize..8, machines in 1usize..5) {
        let inst = instance(seed, jobs, machines);
        let back = parse_instance(&write_instance(&inst)).unwrap();
        prop_assert_eq!(&back.jobs, &inst.jobs);
        prop_assert_eq!(back.num_machines, inst.num_machines);
    }
}
