//! Walks the scheduling environment by hand: legal actions, masks, rewards
//! and the heterogeneous graph seen by the policy.

use std::sync::Arc;

use hetsched::graph_state::{GraphState, MaskRule, MaskVariant};
use hetsched::instance::example_instance;

fn main() {
    let mut state = GraphState::new(Arc::new(example_instance()));
    let es = MaskRule::new(MaskVariant::EarliestStart, 1);
    let ef = MaskRule::new(MaskVariant::EarliestFinish, 1);
    let mut total = 0;
    while !state.is_terminal() {
        let actions = state.legal_actions();
        let g = state.graph();
        println!(
            "{} op nodes, {} op-machine edges, {} actions",
            g.num_ops(),
            g.om_edges.len(),
            actions.len()
        );
        let (by_start, by_end) = (
            state.mask_actions(&actions, es),
            state.mask_actions(&actions, ef),
        );
        for (i, a) in actions.iter().enumerate() {
            let (start, end) = state.action_times(*a).expect("legal action");
            println!(
                "  m{} <- j{}  [{start}, {end})  earliest-start:{} earliest-finish:{}",
                a.machine + 1,
                a.job + 1,
                by_start[i],
                by_end[i]
            );
        }
        let pick = actions[by_end
            .iter()
            .position(|&ok| ok)
            .expect("mask keeps an action")];
        let reward = state.step(pick).expect("legal action");
        total += reward;
        println!(
            "take m{} <- j{}: reward {reward}",
            pick.machine + 1,
            pick.job + 1
        );
    }
    println!("makespan {}, summed reward {total}", state.makespan());
}
