//! A short diverse-policy search: trains a handful of policies with
//! proposed hyperparameters, keeps those that improve the best gap on some
//! validation instance, and clusters the kept ones.

use hetsched::dssp::{dssp, mean, pooled_best, DsspConfig, HpDomain};
use hetsched::inference::diverse;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DsspConfig {
        iterations: 5,
        policies: 2,
        validation: 8,
        domain: HpDomain {
            episodes: (100, 200),
            ..HpDomain::desk()
        },
        ..DsspConfig::default()
    };
    let result = dssp(&cfg)?;
    println!("iter  improvement  accepted  mean gap");
    for r in &result.records {
        let g = r
            .improvement
            .map_or("seed".to_string(), |g| format!("{g:+.4}"));
        println!(
            "{:>4}  {g:>11}  {:>8}  {:.4}",
            r.iteration,
            r.accepted,
            mean(&r.gaps)
        );
    }
    for w in &result.warnings {
        println!("warning: {w}");
    }
    println!(
        "candidates {:?}, selected {:?}",
        result.candidates.members, result.selected
    );

    let selected = result.selected_policies();
    let rows: Vec<&[f64]> = result
        .selected
        .iter()
        .map(|&i| result.records[i].gaps.as_slice())
        .collect();
    println!(
        "pooled best gap of the selection {:.4}",
        mean(&pooled_best(&rows))
    );
    let inst = &result.validation.instances[0];
    let (best, schedules) = diverse(&selected, inst)?;
    let spans: Vec<u64> = schedules.iter().map(|s| s.makespan()).collect();
    println!("{}: makespans {spans:?}, policy {best} wins", inst.id);
    Ok(())
}
