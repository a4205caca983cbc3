//! Solves small random instances exactly and compares the optimum with the
//! best dispatching rule.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hetsched::dispatch::{solve_dr, DispatchRule};
use hetsched::exact::{lower_bound, solve_exact, SolverBudget};
use hetsched::graph_state::GraphState;
use hetsched::instance::{generate_instance, GenParams};

fn main() {
    let gen = GenParams {
        j_min: 3,
        j_max: 4,
        m_min: 2,
        m_max: 3,
        o_min: 2,
        o_max: 3,
        op_max: 3,
        ..GenParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    println!("instance  size  bound  optimum  nodes  best-dr");
    for i in 0..6 {
        let inst = Arc::new(generate_instance(&gen, &mut rng).expect("valid ranges"));
        let bound = lower_bound(&GraphState::new(inst.clone()));
        let r = solve_exact(&inst, SolverBudget::nodes(2_000_000));
        let dr = DispatchRule::all()
            .into_iter()
            .map(|rule| solve_dr(&inst, rule).makespan())
            .min()
            .expect("eight rules");
        let flag = if r.optimal { "" } else { " (budget hit)" };
        println!(
            "{i:>8}  {:>4}  {bound:>5}  {:>7}{flag}  {:>5}  {dr:>7}",
            inst.size_label(),
            r.makespan,
            r.nodes
        );
    }
}
