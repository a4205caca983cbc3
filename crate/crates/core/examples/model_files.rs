//! Saves a policy with its JSON sidecar, loads it back and checks that the
//! reloaded policy schedules identically.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hetsched::inference::greedy;
use hetsched::instance::example_instance;
use hetsched::model_io::{load_model, save_model, sidecar_path};
use hetsched::policy::{Policy, PolicyConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("hetsched-model-example");
    let path = dir.join("policy.bin");
    let policy = Policy::new(PolicyConfig::default(), &mut ChaCha8Rng::seed_from_u64(3))?;
    save_model(&path, &policy, serde_json::json!({ "note": "untrained" }))?;
    println!(
        "wrote {} ({} bytes)",
        path.display(),
        std::fs::metadata(&path)?.len()
    );
    println!("{}", std::fs::read_to_string(sidecar_path(&path))?);

    let (loaded, meta) = load_model(&path)?;
    assert_eq!(loaded.params(), policy.params());
    let inst = Arc::new(example_instance());
    assert_eq!(greedy(&loaded, &inst)?, greedy(&policy, &inst)?);
    println!(
        "reloaded {} layers x {} hidden; greedy schedules match",
        meta.layers, meta.hidden
    );
    Ok(())
}
