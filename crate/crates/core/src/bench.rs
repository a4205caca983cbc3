//! Benchmark harness: loads instance directories, runs baselines and
//! policies, and reports gaps against reference makespans.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{solve_dr, DispatchRule};
use crate::exact::{solve_exact, SolverBudget};
use crate::graph_state::{rollout, EnvError};
use crate::inference::{diverse, greedy, sample_best};
use crate::instance::{parse_instance_named, Instance, InstanceError, Time};
use crate::policy::{Policy, PolicyError};
use crate::ppo::derive_seed;
use crate::schedule::{validate, Schedule, ScheduleViolation};

const BUNDLED_REFERENCES: &str = include_str!("../../../data/references.csv");
const STREAM_BENCH: u64 = 5;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: InstanceError,
    },
    #[error("reference table: {0}")]
    References(String),
    #[error("no reference makespan for instance `{0}`")]
    MissingReference(String),
    #[error("method `{0}` needs at least one policy")]
    NoPolicy(String),
    #[error("unknown method `{0}` (expected dr:RULE, random, greedy, sample:N or diverse)")]
    UnknownMethod(String),
    #[error("{method} on {instance}: {violation}")]
    InvalidSchedule {
        instance: String,
        method: String,
        violation: ScheduleViolation,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Reference makespan for one benchmark instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReference {
    pub set: String,
    pub instance: String,
    pub size: String,
    /// Published dispatching-rule makespan, when known.
    pub dr: Option<Time>,
    pub reference: Time,
    pub source: String,
}

#[derive(Debug, Clone, Default)]
pub struct References {
    entries: Vec<BenchReference>,
}

impl References {
    pub fn from_csv(text: &str) -> Result<Self, BenchError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for row in reader.deserialize::<BenchReference>() {
            let r = row.map_err(|e| BenchError::References(e.to_string()))?;
            if r.reference == 0 {
                return Err(BenchError::References(format!(
                    "{}: reference must be positive",
                    r.instance
                )));
            }
            entries.push(r);
        }
        Ok(Self { entries })
    }

    /// The transcribed table shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED_REFERENCES).expect("bundled reference table parses")
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_csv(&text)
    }

    pub fn entries(&self) -> &[BenchReference] {
        &self.entries
    }

    pub fn set(&self, set: &str) -> Vec<&BenchReference> {
        self.entries.iter().filter(|r| r.set == set).collect()
    }

    pub fn get(&self, instance: &str) -> Option<&BenchReference> {
        self.entries.iter().find(|r| r.instance == instance)
    }

    pub fn insert(&mut self, r: BenchReference) {
        match self.entries.iter_mut().find(|e| e.instance == r.instance) {
            Some(e) => *e = r,
            None => self.entries.push(r),
        }
    }

    pub fn makespans(&self) -> HashMap<String, Time> {
        self.entries
            .iter()
            .map(|r| (r.instance.clone(), r.reference))
            .collect()
    }
}

/// Best-found exact-solver makespans, tagged as such.
pub fn solver_references(
    set: &str,
    instances: &[Arc<Instance>],
    budget: SolverBudget,
) -> Vec<BenchReference> {
    instances
        .par_iter()
        .map(|inst| {
            let r = solve_exact(inst, budget);
            BenchReference {
                set: set.to_string(),
                instance: inst.id.clone(),
                size: inst.size_label(),
                dr: None,
                reference: r.makespan,
                source: if r.optimal {
                    "bnb-optimal"
                } else {
                    "bnb-best-found"
                }
                .to_string(),
            }
        })
        .collect()
}

/// `FJSP_BENCH_DIR` if set, otherwise `data/benchmarks` at the workspace root.
pub fn benchmark_root() -> PathBuf {
    match std::env::var_os("FJSP_BENCH_DIR") {
        Some(dir) => PathBuf::from(dir),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/benchmarks"),
    }
}

/// Parses one instance file, named by its file stem.
pub fn load_file(path: &Path) -> Result<Arc<Instance>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("instance");
    parse_instance_named(&text, stem)
        .map(Arc::new)
        .map_err(|source| BenchError::Parse {
            path: path.to_path_buf(),
            source,
        })
}

/// Files are loaded as single instances, directories with [`load_dir`].
pub fn load_paths(paths: &[PathBuf]) -> Result<Vec<Arc<Instance>>, BenchError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            out.extend(load_dir(p)?);
        } else {
            out.push(load_file(p)?);
        }
    }
    Ok(out)
}

/// Parses every regular file in `dir`, named by file stem, sorted by name.
pub fn load_dir(dir: &Path) -> Result<Vec<Arc<Instance>>, BenchError> {
    let io = |source| BenchError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    paths.par_iter().map(|path| load_file(path)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dr(DispatchRule),
    /// Uniformly random legal actions.
    Random,
    Greedy,
    /// Best of `n` sampled rollouts.
    Sample(usize),
    /// Best greedy rollout over the policy set.
    Diverse,
}

impl Method {
    fn needs_policy(&self) -> bool {
        matches!(self, Method::Greedy | Method::Sample(_) | Method::Diverse)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Dr(rule) => write!(f, "dr:{rule}"),
            Method::Random => f.write_str("random"),
            Method::Greedy => f.write_str("greedy"),
            Method::Sample(n) => write!(f, "sample:{n}"),
            Method::Diverse => f.write_str("diverse"),
        }
    }
}

impl FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || BenchError::UnknownMethod(s.to_string());
        match s {
            "random" => Ok(Method::Random),
            "greedy" => Ok(Method::Greedy),
            "diverse" => Ok(Method::Diverse),
            _ => {
                if let Some(rule) = s.strip_prefix("dr:") {
                    rule.parse().map(Method::Dr).map_err(|_| unknown())
                } else if let Some(n) = s.strip_prefix("sample:") {
                    match n.parse() {
                        Ok(n) if n > 0 => Ok(Method::Sample(n)),
                        _ => Err(unknown()),
                    }
                } else {
                    Err(unknown())
                }
            }
        }
    }
}

pub fn gap(makespan: Time, reference: Time) -> f64 {
    (makespan as f64 - reference as f64) / reference as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub instance: String,
    pub size: String,
    pub method: String,
    pub makespan: Time,
    pub gap: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub size: String,
    pub method: String,
    pub instances: usize,
    pub mean_gap: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GapReport {
    pub rows: Vec<BenchRow>,
    pub groups: Vec<GroupRow>,
}

impl GapReport {
    /// Builds the size-group means from per-instance rows. Groups follow the
    /// order in which sizes and methods first appear.
    pub fn from_rows(rows: Vec<BenchRow>) -> Self {
        let mut order: Vec<(String, String)> = Vec::new();
        let mut acc: HashMap<(String, String), (usize, f64, f64)> = HashMap::new();
        for r in &rows {
            let key = (r.size.clone(), r.method.clone());
            let e = acc.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (0, 0.0, 0.0)
            });
            e.0 += 1;
            e.1 += r.gap;
            e.2 += r.seconds;
        }
        let groups = order
            .into_iter()
            .map(|key| {
                let (n, g, s) = acc[&key];
                GroupRow {
                    size: key.0,
                    method: key.1,
                    instances: n,
                    mean_gap: g / n as f64,
                    mean_seconds: s / n as f64,
                }
            })
            .collect();
        Self { rows, groups }
    }

    /// Mean gap of `method` over all rows.
    pub fn mean_gap(&self, method: &str) -> Option<f64> {
        let gaps: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.gap)
            .collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }

    /// Per-instance CSV. With `timing` off the seconds column is zero so
    /// repeated runs are byte-identical.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from("instance,size,method,makespan,gap,seconds\n");
        for r in &self.rows {
            let secs = if timing { r.seconds } else { 0.0 };
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.3}",
                r.instance, r.size, r.method, r.makespan, r.gap, secs
            );
        }
        out
    }

    /// Size groups as rows, methods as columns, cells `gap% (seconds)`.
    pub fn to_markdown(&self, timing: bool) -> String {
        let mut methods: Vec<&str> = Vec::new();
        let mut sizes: Vec<&str> = Vec::new();
        for g in &self.groups {
            if !methods.contains(&g.method.as_str()) {
                methods.push(&g.method);
            }
            if !sizes.contains(&g.size.as_str()) {
                sizes.push(&g.size);
            }
        }
        let cells: BTreeMap<(&str, &str), &GroupRow> = self
            .groups
            .iter()
            .map(|g| ((g.size.as_str(), g.method.as_str()), g))
            .collect();
        let mut out = format!(
            "| Size | {} |\n|---|{}\n",
            methods.join(" | "),
            "---|".repeat(methods.len())
        );
        for size in &sizes {
            let _ = write!(out, "| {size} |");
            for m in &methods {
                match cells.get(&(*size, *m)) {
                    Some(g) if timing => {
                        let _ = write!(
                            out,
                            " {:.2}% ({:.2}s) |",
                            100.0 * g.mean_gap,
                            g.mean_seconds
                        );
                    }
                    Some(g) => {
                        let _ = write!(out, " {:.2}% |", 100.0 * g.mean_gap);
                    }
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
        let _ = write!(out, "| All |");
        for m in &methods {
            let _ = write!(
                out,
                " {:.2}% |",
                100.0 * self.mean_gap(m).unwrap_or(f64::NAN)
            );
        }
        out.push('\n');
        out
    }
}

/// Uniformly random rollout.
pub fn random_schedule(inst: &Arc<Instance>, seed: u64) -> Schedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rollout(inst.clone(), None, |_, actions, _| {
        Ok::<_, EnvError>(rng.gen_range(0..actions.len()))
    })
    .expect("random rollouts only pick legal actions")
}

/// Seed used for the instance at position `index` of a run seeded with `seed`.
pub fn instance_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, STREAM_BENCH, index as u64)
}

/// Runs `method` on one instance.
pub fn run_method(
    method: Method,
    inst: &Arc<Instance>,
    policies: &[Policy],
    seed: u64,
) -> Result<Schedule, BenchError> {
    if method.needs_policy() && policies.is_empty() {
        return Err(BenchError::NoPolicy(method.to_string()));
    }
    Ok(match method {
        Method::Dr(rule) => solve_dr(inst, rule),
        Method::Random => random_schedule(inst, seed),
        Method::Greedy => greedy(&policies[0], inst)?,
        Method::Sample(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_best(&policies[0], inst, n, &mut rng)?
        }
        Method::Diverse => {
            let (best, schedules) = diverse(policies, inst)?;
            schedules
                .into_iter()
                .nth(best)
                .expect("diverse returns one schedule per policy")
        }
    })
}

/// Runs every method on every instance, validating each schedule before it
/// enters the report. Sampling seeds depend only on `seed` and the instance
/// position, so results do not depend on the thread count.
pub fn run_bench(
    instances: &[Arc<Instance>],
    methods: &[Method],
    references: &HashMap<String, Time>,
    policies: &[Policy],
    seed: u64,
) -> Result<GapReport, BenchError> {
    for inst in instances {
        if !references.contains_key(&inst.id) {
            return Err(BenchError::MissingReference(inst.id.clone()));
        }
    }
    if let Some(m) = methods
        .iter()
        .find(|m| m.needs_policy() && policies.is_empty())
    {
        return Err(BenchError::NoPolicy(m.to_string()));
    }
    let jobs: Vec<(usize, Method)> = (0..instances.len())
        .flat_map(|i| methods.iter().map(move |&m| (i, m)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, method)| {
            let inst = &instances[i];
            let started = Instant::now();
            let schedule = run_method(method, inst, policies, instance_seed(seed, i))?;
            let seconds = started.elapsed().as_secs_f64();
            validate(inst, &schedule).map_err(|violation| BenchError::InvalidSchedule {
                instance: inst.id.clone(),
                method: method.to_string(),
                violation,
            })?;
            let reference = references[&inst.id];
            Ok(BenchRow {
                instance: inst.id.clone(),
                size: inst.size_label(),
                method: method.to_string(),
                makespan: schedule.makespan(),
                gap: gap(schedule.makespan(), reference),
                seconds,
            })
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    Ok(GapReport::from_rows(rows))
}
