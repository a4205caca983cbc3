//! Parses an instance from text and compares every dispatching rule on it.

use std::sync::Arc;

use hetsched::dispatch::{best_dr, solve_dr, DispatchRule};
use hetsched::instance::parse_instance_named;
use hetsched::schedule::validate;

const TEXT: &str = "4 3
3 2 1 4 2 6 1 3 5 2 1 3 3 4
2 1 2 7 2 1 2 3 3
3 1 3 4 2 1 6 2 2 2 3 5 1 1
2 2 1 5 3 4 1 2 6
";

fn main() {
    let inst = Arc::new(parse_instance_named(TEXT, "demo").expect("valid instance"));
    println!(
        "{}: {} jobs, {} machines, {} operations, flexibility {:.2}",
        inst.id,
        inst.num_jobs(),
        inst.num_machines,
        inst.num_operations(),
        inst.flexibility()
    );
    for rule in DispatchRule::all() {
        let schedule = solve_dr(&inst, rule);
        validate(&inst, &schedule).expect("dispatching rules build valid schedules");
        println!("{:>10}  makespan {}", rule.to_string(), schedule.makespan());
    }
    let (best, _) = best_dr(std::slice::from_ref(&inst), &DispatchRule::all());
    println!("best rule: {best}");
    print!("{}", solve_dr(&inst, best).to_csv());
}
