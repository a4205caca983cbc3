//! Runs a randomly initialized attention policy on the first decision of
//! the two-job example: embeddings, attention weights, action
//! probabilities under a mask, and the critic's value.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hetsched::autodiff::Tape;
use hetsched::graph_state::{GraphState, MaskRule, MaskVariant};
use hetsched::instance::example_instance;
use hetsched::policy::{Policy, PolicyConfig, PolicyError};

fn main() -> Result<(), PolicyError> {
    let cfg = PolicyConfig {
        layers: 2,
        hidden: 16,
        mask: MaskRule::new(MaskVariant::EarliestFinish, 1),
    };
    let policy = Policy::new(cfg, &mut ChaCha8Rng::seed_from_u64(5))?;
    println!(
        "{} parameter tensors, {} scalars",
        policy.params().len(),
        policy.params().num_scalars()
    );

    let state = GraphState::new(Arc::new(example_instance()));
    let mut tape = Tape::new();
    let vars = policy.bind(&mut tape);
    let emb = policy.embed_on(&mut tape, &vars, &state.graph())?;
    for rec in emb.attention.iter().filter(|r| r.layer == 0) {
        let alpha = tape.value(rec.alpha).data();
        let shown: Vec<String> = rec
            .dst
            .iter()
            .zip(alpha)
            .map(|(d, a)| format!("{d}:{a:.3}"))
            .collect();
        println!(
            "layer 0 {:<4} dst:alpha {}",
            rec.relation.name(),
            shown.join(" ")
        );
    }

    let actions = state.legal_actions();
    let mask = policy.mask_for(&state);
    let (probs, value) = policy.evaluate(&state, &mask)?;
    for ((a, p), ok) in actions.iter().zip(&probs).zip(&mask) {
        println!(
            "m{} <- j{}  allowed {ok:<5}  p = {p:.4}",
            a.machine + 1,
            a.job + 1
        );
    }
    println!("critic value {value:.4}");
    Ok(())
}
