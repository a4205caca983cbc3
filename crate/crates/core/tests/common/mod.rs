#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hetsched::graph_state::GraphState;
use hetsched::instance::{Instance, Job, MachineOption, Operation, Time};

/// Random instance with `jobs x ops` operations on `machines` machines,
/// built directly rather than through the library generator.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    jobs: usize,
    machines: usize,
    max_ops: usize,
    id: &str,
) -> Instance {
    let jobs = (0..jobs)
        .map(|_| {
            let n = rng.gen_range(1..=max_ops);
            let operations = (0..n)
                .map(|_| {
                    let count = rng.gen_range(1..=machines);
                    let mut ms: Vec<usize> = (0..machines).collect();
                    for i in 0..count {
                        let j = rng.gen_range(i..machines);
                        ms.swap(i, j);
                    }
                    let options = ms[..count]
                        .iter()
                        .map(|&machine| MachineOption {
                            machine,
                            time: rng.gen_range(1..=9),
                        })
                        .collect();
                    Operation { options }
                })
                .collect();
            Job { operations }
        })
        .collect();
    Instance::new(id.to_string(), machines, jobs).expect("well-formed instance")
}

/// Instances with at most `max_total` operations.
pub fn tiny_instances(n: usize, seed: u64, max_total: usize) -> Vec<Arc<Instance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let jobs = rng.gen_range(1..=4);
        let machines = rng.gen_range(1..=3);
        let inst = random_instance(&mut rng, jobs, machines, 3, &format!("tiny-{}", out.len()));
        if inst.num_operations() <= max_total {
            out.push(Arc::new(inst));
        }
    }
    out
}

/// Best makespan over every non-delay decision sequence, by plain
/// recursion over machine-free and job-ready times.
pub fn enumerate_optimum(inst: &Instance) -> Time {
    fn go(
        inst: &Instance,
        machine_free: &mut [Time],
        job_ready: &mut [Time],
        next: &mut [usize],
        span: Time,
        best: &mut Time,
    ) {
        let mut any = false;
        for j in 0..inst.jobs.len() {
            let Some(op) = inst.jobs[j].operations.get(next[j]) else {
                continue;
            };
            any = true;
            for opt in &op.options {
                let start = machine_free[opt.machine].max(job_ready[j]);
                let end = start + opt.time;
                let (mf, jr) = (machine_free[opt.machine], job_ready[j]);
                machine_free[opt.machine] = end;
                job_ready[j] = end;
                next[j] += 1;
                go(inst, machine_free, job_ready, next, span.max(end), best);
                next[j] -= 1;
                machine_free[opt.machine] = mf;
                job_ready[j] = jr;
            }
        }
        if !any {
            *best = (*best).min(span);
        }
    }
    let mut best = Time::MAX;
    go(
        inst,
        &mut vec![0; inst.num_machines],
        &mut vec![0; inst.jobs.len()],
        &mut vec![0; inst.jobs.len()],
        0,
        &mut best,
    );
    best
}

/// Uniformly random rollout; returns the final state and the rewards.
pub fn random_rollout<R: Rng>(inst: &Arc<Instance>, rng: &mut R) -> (GraphState, Vec<i64>) {
    let mut state = GraphState::new(inst.clone());
    let mut rewards = Vec::new();
    while !state.is_terminal() {
        let actions = state.legal_actions();
        let a = actions[rng.gen_range(0..actions.len())];
        rewards.push(state.step(a).expect("legal action"));
    }
    (state, rewards)
}

pub const TINY_CONFIG: &str = r#"
[train]
episodes = 30
update_every = 5
instances = 4
batch_size = 16

[dssp]
iterations = 2
validation = 3

[dssp.domain]
episodes = [20, 30]
"#;

pub fn hetsched(args: &[&str], dir: &std::path::Path) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_hetsched"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

/// Runs every subcommand single-threaded in `dir` and returns the produced
/// files (and dssp's stdout) by name.
pub fn cli_outputs(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    std::fs::write(dir.join("tiny.toml"), TINY_CONFIG).unwrap();
    let common = [
        "--threads",
        "1",
        "--no-timing",
        "--seed",
        "7",
        "--config",
        "tiny.toml",
    ];
    let steps: Vec<Vec<&str>> = vec![
        vec!["gen", "--count", "5", "--out", "g"],
        vec!["dr", "g", "--csv", "dr.csv"],
        vec!["exact", "g", "--nodes", "200000", "--csv", "exact.csv"],
        vec!["train", "--out", "m.bin", "--curve", "curve.csv"],
        vec![
            "solve",
            "g",
            "--model",
            "m.bin",
            "--mode",
            "sample:3",
            "--csv",
            "solve.csv",
        ],
        vec![
            "bench",
            "g",
            "--solver-references",
            "--method",
            "dr:FIFO+EET",
            "--method",
            "random",
            "--method",
            "greedy",
            "--method",
            "diverse",
            "--model",
            "m.bin",
            "--model",
            "m.bin",
            "--csv",
            "bench.csv",
        ],
        vec!["dssp", "--out", "d"],
    ];
    let mut out = Vec::new();
    for step in steps {
        let args: Vec<&str> = common.iter().copied().chain(step.iter().copied()).collect();
        let o = hetsched(&args, dir);
        assert!(
            o.status.success(),
            "{step:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        if step[0] == "dssp" {
            out.push(("dssp.stdout".to_string(), o.stdout));
        }
    }
    for name in [
        "dr.csv",
        "exact.csv",
        "curve.csv",
        "solve.csv",
        "bench.csv",
        "m.bin",
        "d/manifest.json",
    ] {
        out.push((name.to_string(), std::fs::read(dir.join(name)).unwrap()));
    }
    for i in 0..5 {
        let name = format!("g/gen-{i:04}.fjs");
        out.push((name.clone(), std::fs::read(dir.join(name)).unwrap()));
    }
    out
}
