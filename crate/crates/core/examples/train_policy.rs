//! Trains a small policy with PPO and compares its greedy gap against the
//! untrained policy and the dispatching rules on exactly solved instances.
//!
//! `cargo run --release --example train_policy -- [episodes]`

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hetsched::dispatch::{solve_dr, DispatchRule};
use hetsched::dssp::{eval_policy, mean, ValidationSet};
use hetsched::exact::SolverBudget;
use hetsched::instance::generate_instance;
use hetsched::ppo::{init_policy, train_policy, TrainConfig, TrainOutputs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let episodes = std::env::args().nth(1).map_or(Ok(600), |s| s.parse())?;
    let cfg = TrainConfig {
        episodes,
        ..TrainConfig::desk()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let instances = (0..20)
        .map(|_| generate_instance(&cfg.gen, &mut rng).map(Arc::new))
        .collect::<Result<Vec<_>, _>>()?;
    let val = ValidationSet::from_instances(instances, SolverBudget::nodes(2_000_000))?;

    let before = mean(&eval_policy(&val, &init_policy(&cfg)?)?);
    let started = std::time::Instant::now();
    let (policy, report) = train_policy(&cfg, &TrainOutputs::default())?;
    let after = mean(&eval_policy(&val, &policy)?);
    println!(
        "{episodes} episodes, {} updates in {:.1}s",
        report.updates.len(),
        started.elapsed().as_secs_f64()
    );
    println!("untrained greedy gap {:.2}%", 100.0 * before);
    println!("trained greedy gap   {:.2}%", 100.0 * after);
    for rule in DispatchRule::all() {
        let gaps: Vec<f64> = val
            .instances
            .iter()
            .zip(&val.reference)
            .map(|(inst, &r)| hetsched::dssp::gap(solve_dr(inst, rule).makespan(), r))
            .collect();
        println!(
            "{:>10} gap      {:.2}%",
            rule.to_string(),
            100.0 * mean(&gaps)
        );
    }
    Ok(())
}
