mod common;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hetsched::dispatch::{solve_dr, DispatchRule};
use hetsched::exact::{solve_exact, solve_exact_with, SearchOptions, SolverBudget};
use hetsched::instance::example_instance;
use hetsched::schedule::validate;

use common::{enumerate_optimum, random_rollout, tiny_instances};

#[test]
fn branch_and_bound_matches_enumeration() {
    for inst in tiny_instances(30, 17, 8) {
        let expected = enumerate_optimum(&inst);
        for (prune, transpositions) in [(true, true), (true, false), (false, true)] {
            let r = solve_exact_with(
                &inst,
                SolverBudget::default(),
                SearchOptions {
                    prune,
                    transpositions,
                },
            );
            assert!(r.optimal, "{} prune={prune} tt={transpositions}", inst.id);
            assert_eq!(
                r.makespan, expected,
                "{} prune={prune} tt={transpositions}",
                inst.id
            );
            validate(&inst, &r.schedule).unwrap();
            assert_eq!(r.schedule.makespan(), r.makespan);
        }
    }
}

#[test]
fn example_optimum_is_eight() {
    let inst = Arc::new(example_instance());
    assert_eq!(enumerate_optimum(&inst), 8);
    assert_eq!(solve_exact(&inst, SolverBudget::default()).makespan, 8);
}

#[test]
fn optimum_never_beats_sampled_or_rule_schedules() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for inst in tiny_instances(10, 5, 10) {
        let opt = solve_exact(&inst, SolverBudget::default());
        assert!(opt.optimal);
        for _ in 0..1000 {
            assert!(random_rollout(&inst, &mut rng).0.makespan() >= opt.makespan);
        }
        for rule in DispatchRule::all() {
            assert!(solve_dr(&inst, rule).makespan() >= opt.makespan);
        }
    }
}

#[test]
fn exhausted_budget_is_flagged() {
    let inst = tiny_instances(40, 9, 8)
        .into_iter()
        .max_by_key(|i| i.num_operations())
        .unwrap();
    let r = solve_exact(&inst, SolverBudget::nodes(1));
    assert!(!r.optimal || r.makespan == enumerate_optimum(&inst));
    validate(&inst, &r.schedule).unwrap();
}
