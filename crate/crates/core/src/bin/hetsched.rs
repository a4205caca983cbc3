use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use hetsched::bench::{self, BenchError, Method, References};
use hetsched::config::Config;
use hetsched::dispatch::{best_dr, solve_dr, DispatchRule};
use hetsched::dssp::{dssp, DsspError};
use hetsched::exact::{solve_exact, SolverBudget};
use hetsched::instance::{generate_instance, write_instance, Instance};
use hetsched::model_io::{load_model, save_model, write_atomic, ModelError};
use hetsched::policy::{Policy, PolicyError};
use hetsched::ppo::{train_policy, TrainError, TrainOutputs};
use hetsched::schedule::{validate, Schedule};

#[derive(Parser)]
#[command(
    name = "hetsched",
    version,
    about = "Flexible job-shop scheduling toolkit"
)]
struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML config with [generator], [train], [dssp] and [bench] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write 0 in every seconds column so reruns are byte-identical.
    #[arg(long, global = true)]
    no_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random instances.
    Gen {
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Output directory; instances go to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run dispatching rules.
    Dr {
        /// Instance files or directories.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Rule such as FIFO+EET, or `all`.
        #[arg(long, default_value = "all")]
        rule: String,
        #[command(flatten)]
        out: CsvOut,
    },
    /// Solve instances exactly within a budget.
    Exact {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, default_value_t = 5_000_000)]
        nodes: u64,
        #[arg(long, default_value_t = 60)]
        seconds: u64,
        #[command(flatten)]
        out: CsvOut,
    },
    /// Train a policy with PPO.
    Train {
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        /// Per-episode training curve.
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Search for a diverse set of policies.
    Dssp {
        /// Directory for the manifest and selected policies.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        policies: Option<usize>,
        #[arg(long)]
        validation: Option<usize>,
    },
    /// Schedule instances with trained policies.
    Solve {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Model files; `diverse` uses all of them.
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        /// greedy, sample:N or diverse.
        #[arg(long, default_value = "greedy")]
        mode: String,
        /// Directory for per-instance schedule CSV and Gantt JSON files.
        #[arg(long)]
        schedules: Option<PathBuf>,
        #[command(flatten)]
        out: CsvOut,
    },
    /// Benchmark methods against reference makespans.
    Bench {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Methods such as dr:FIFO+EET, random, greedy, sample:100, diverse.
        #[arg(long = "method")]
        methods: Vec<String>,
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// Reference CSV; defaults to the bundled table.
        #[arg(long)]
        references: Option<PathBuf>,
        /// Use exact-solver best-found makespans for instances missing a reference.
        #[arg(long)]
        solver_references: bool,
        /// Markdown summary grouped by size.
        #[arg(long)]
        markdown: Option<PathBuf>,
        #[command(flatten)]
        out: CsvOut,
    },
}

#[derive(Args)]
struct CsvOut {
    /// CSV output file; stdout when absent.
    #[arg(long = "csv")]
    csv: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Internal(String),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::InvalidSchedule { .. } => Failure::Internal(e.to_string()),
            BenchError::Policy(p) => p.into(),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<PolicyError> for Failure {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Autodiff(_)
            | PolicyError::Env(_)
            | PolicyError::AllMasked
            | PolicyError::Terminal => Failure::Internal(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } | TrainError::Autodiff(_) => {
                Failure::Internal(e.to_string())
            }
            TrainError::Policy(p) => p.into(),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<DsspError> for Failure {
    fn from(e: DsspError) -> Self {
        match e {
            DsspError::Train(t) => t.into(),
            DsspError::Policy(p) => p.into(),
            _ => Failure::Input(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn emit(target: &Option<PathBuf>, text: &str) -> Outcome {
    match target {
        Some(path) => Ok(write_atomic(path, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn checked(inst: &Instance, schedule: &Schedule, what: &str) -> Outcome {
    validate(inst, schedule).map_err(|v| Failure::Internal(format!("{what} on {}: {v}", inst.id)))
}

fn seconds(started: Instant, timing: bool) -> f64 {
    if timing {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

fn load_policies(paths: &[PathBuf]) -> Result<Vec<Policy>, Failure> {
    paths.iter().map(|p| Ok(load_model(p)?.0)).collect()
}

fn run(cli: Cli) -> Outcome {
    let mut config = match &cli.config {
        Some(path) => Config::load(path).map_err(|e| Failure::Input(e.to_string()))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Input(e.to_string()))?;
    }
    let timing = !cli.no_timing && config.bench.timing;

    match cli.command {
        Command::Gen { count, out } => {
            config
                .generator
                .validate()
                .map_err(|e| Failure::Input(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.generator.seed);
            let mut instances = Vec::with_capacity(count);
            for i in 0..count {
                let mut inst = generate_instance(&config.generator, &mut rng)
                    .map_err(|e| Failure::Input(e.to_string()))?;
                inst.id = format!("gen-{i:04}");
                instances.push(inst);
            }
            match out {
                Some(dir) => {
                    for inst in &instances {
                        write_atomic(
                            &dir.join(format!("{}.fjs", inst.id)),
                            write_instance(inst).as_bytes(),
                        )?;
                    }
                }
                None => {
                    for inst in &instances {
                        print!("{}", write_instance(inst));
                    }
                }
            }
            Ok(())
        }
        Command::Dr { paths, rule, out } => {
            let instances = bench::load_paths(&paths)?;
            let rules = if rule.eq_ignore_ascii_case("all") {
                DispatchRule::all()
            } else {
                vec![rule.parse::<DispatchRule>().map_err(Failure::Input)?]
            };
            let rows = instances
                .par_iter()
                .flat_map(|inst| rules.par_iter().map(move |&r| (inst, r)))
                .map(|(inst, r)| {
                    let started = Instant::now();
                    let s = solve_dr(inst, r);
                    let secs = seconds(started, timing);
                    checked(inst, &s, &r.to_string())?;
                    Ok(format!("{},{},{},{:.3}\n", inst.id, r, s.makespan(), secs))
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            let mut text = String::from("instance,rule,makespan,seconds\n");
            text.extend(rows);
            if rules.len() > 1 && !instances.is_empty() {
                let (best, _) = best_dr(&instances, &rules);
                eprintln!("best rule: {best}");
            }
            emit(&out.csv, &text)
        }
        Command::Exact {
            paths,
            nodes,
            seconds: limit,
            out,
        } => {
            if nodes == 0 || limit == 0 {
                return Err(Failure::Input(
                    "--nodes and --seconds must be positive".into(),
                ));
            }
            let instances = bench::load_paths(&paths)?;
            let budget = SolverBudget::new(nodes, Duration::from_secs(limit));
            let rows = instances
                .par_iter()
                .map(|inst| {
                    let started = Instant::now();
                    let r = solve_exact(inst, budget);
                    let secs = seconds(started, timing);
                    checked(inst, &r.schedule, "exact")?;
                    Ok(format!(
                        "{},{},{},{},{:.3}\n",
                        inst.id, r.makespan, r.optimal, r.nodes, secs
                    ))
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            let mut text = String::from("instance,makespan,optimal,nodes,seconds\n");
            text.extend(rows);
            emit(&out.csv, &text)
        }
        Command::Train {
            out,
            episodes,
            curve,
            checkpoints,
        } => {
            let mut cfg = config.train.clone();
            if let Some(n) = episodes {
                cfg.episodes = n;
            }
            let outputs = TrainOutputs {
                checkpoint_dir: checkpoints,
                curve_csv: curve,
            };
            let (policy, report) = train_policy(&cfg, &outputs)?;
            save_model(
                &out,
                &policy,
                serde_json::to_value(&cfg).expect("config serializes"),
            )?;
            eprintln!(
                "trained {} episodes, {} updates",
                cfg.episodes,
                report.updates.len()
            );
            Ok(())
        }
        Command::Dssp {
            out,
            iterations,
            policies,
            validation,
        } => {
            let mut cfg = config.dssp.clone();
            cfg.iterations = iterations.unwrap_or(cfg.iterations);
            cfg.policies = policies.unwrap_or(cfg.policies);
            cfg.validation = validation.unwrap_or(cfg.validation);
            let mut result = dssp(&cfg)?;
            if !timing {
                for r in &mut result.records {
                    r.train_seconds = 0.0;
                }
            }
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            result.save(&out)?;
            let mut text = String::from("iteration,improvement,accepted,mean_gap\n");
            for r in &result.records {
                let g = r.improvement.map_or(String::new(), |g| format!("{g:.6}"));
                let mean = r.gaps.iter().sum::<f64>() / r.gaps.len() as f64;
                let _ = writeln!(text, "{},{},{},{:.6}", r.iteration, g, r.accepted, mean);
            }
            print!("{text}");
            Ok(())
        }
        Command::Solve {
            paths,
            models,
            mode,
            schedules,
            out,
        } => {
            let method: Method = mode.parse()?;
            if matches!(method, Method::Dr(_) | Method::Random) {
                return Err(Failure::Input(format!(
                    "solve takes greedy, sample:N or diverse, not `{mode}`"
                )));
            }
            let policies = load_policies(&models)?;
            let instances = bench::load_paths(&paths)?;
            let seed = config.train.seed;
            let rows = instances
                .par_iter()
                .enumerate()
                .map(|(i, inst)| {
                    let started = Instant::now();
                    let s =
                        bench::run_method(method, inst, &policies, bench::instance_seed(seed, i))?;
                    let secs = seconds(started, timing);
                    checked(inst, &s, &mode)?;
                    if let Some(dir) = &schedules {
                        write_schedule(dir, inst, &s)?;
                    }
                    Ok(format!(
                        "{},{},{},{},{:.3}\n",
                        inst.id,
                        inst.size_label(),
                        method,
                        s.makespan(),
                        secs
                    ))
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            let mut text = String::from("instance,size,method,makespan,seconds\n");
            text.extend(rows);
            emit(&out.csv, &text)
        }
        Command::Bench {
            paths,
            methods,
            models,
            references,
            solver_references,
            markdown,
            out,
        } => {
            let methods = if methods.is_empty() {
                config.bench.methods.clone()
            } else {
                methods
            };
            let methods = methods
                .iter()
                .map(|m| m.parse())
                .collect::<Result<Vec<Method>, _>>()?;
            let policies = load_policies(&models)?;
            let instances = bench::load_paths(&paths)?;
            let mut refs = match references {
                Some(p) => References::load(&p)?,
                None => References::bundled(),
            };
            if solver_references {
                let missing: Vec<Arc<Instance>> = instances
                    .iter()
                    .filter(|i| refs.get(&i.id).is_none())
                    .cloned()
                    .collect();
                let budget = SolverBudget::new(
                    config.bench.exact_nodes.max(1),
                    Duration::from_secs(config.bench.exact_seconds.max(1)),
                );
                for r in bench::solver_references("solver", &missing, budget) {
                    refs.insert(r);
                }
            }
            let report = bench::run_bench(
                &instances,
                &methods,
                &refs.makespans(),
                &policies,
                config.train.seed,
            )?;
            if let Some(path) = markdown {
                write_atomic(&path, report.to_markdown(timing).as_bytes())?;
            }
            emit(&out.csv, &report.to_csv(timing))
        }
    }
}

fn write_schedule(dir: &Path, inst: &Instance, s: &Schedule) -> Outcome {
    write_atomic(&dir.join(format!("{}.csv", inst.id)), s.to_csv().as_bytes())?;
    let gantt =
        serde_json::to_string_pretty(&s.to_gantt_json(inst)).expect("gantt json serializes");
    write_atomic(&dir.join(format!("{}.json", inst.id)), gantt.as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}
