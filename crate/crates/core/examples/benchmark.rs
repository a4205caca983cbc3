//! Benchmarks dispatching rules and a random baseline on a directory of
//! instances. Instances without a reference are solved with the exact
//! solver first.
//!
//! `cargo run --release --example benchmark -- [instance-dir]`
//! Without a directory a few random instances are written to a temporary one.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hetsched::bench::{load_dir, run_bench, solver_references, Method, References};
use hetsched::exact::SolverBudget;
use hetsched::instance::{generate_instance, write_instance};
use hetsched::ppo::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = std::env::temp_dir().join("hetsched-bench-example");
    let dir = match std::env::args().nth(1) {
        Some(d) => PathBuf::from(d),
        None => {
            std::fs::create_dir_all(&tmp)?;
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for i in 0..8 {
                let inst = generate_instance(&TrainConfig::desk().gen, &mut rng)?;
                std::fs::write(tmp.join(format!("rand{i:02}.fjs")), write_instance(&inst))?;
            }
            tmp
        }
    };
    let instances = load_dir(&dir)?;
    let mut refs = References::bundled();
    let missing: Vec<_> = instances
        .iter()
        .filter(|i| refs.get(&i.id).is_none())
        .cloned()
        .collect();
    for r in solver_references("local", &missing, SolverBudget::nodes(1_000_000)) {
        refs.insert(r);
    }
    let methods: Vec<Method> = ["dr:FIFO+EET", "dr:FIFO+SPT", "dr:MWKR+EET", "random"]
        .iter()
        .map(|m| m.parse())
        .collect::<Result<_, _>>()?;
    let report = run_bench(&instances, &methods, &refs.makespans(), &[], 0)?;
    print!("{}", report.to_markdown(true));
    Ok(())
}
