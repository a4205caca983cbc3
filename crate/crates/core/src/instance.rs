//! FJSSP problem data: jobs made of ordered operations, each operation runnable
//! on a subset of machines with a machine-dependent integer processing time.
//!
//! The text format is the usual Hurink/Behnke layout:
//!
//! ```text
//! <num_jobs> <num_machines> [avg flexibility]
//! <op count> { <option count> { <machine> <time> }* }*     (one line per job)
//! ```
//!
//! Machines are 1-indexed on disk and 0-indexed in memory.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer time unit used for processing times, start/end times and makespans.
pub type Time = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InstanceError {
    #[error("empty instance text")]
    Empty,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unexpected end of data while reading {0}")]
    Truncated(String),
    #[error("invalid token `{token}` while reading {context}")]
    Token { token: String, context: String },
    #[error("job {job} operation {op}: machine {machine} out of range (1..={num_machines})")]
    MachineOutOfRange {
        job: usize,
        op: usize,
        machine: usize,
        num_machines: usize,
    },
    #[error("job {job} operation {op}: processing time must be positive")]
    NonPositiveTime { job: usize, op: usize },
    #[error("job {job} operation {op}: machine {machine} listed twice")]
    DuplicateMachine {
        job: usize,
        op: usize,
        machine: usize,
    },
    #[error("job {0} has no operations")]
    EmptyJob(usize),
    #[error("job {job} operation {op} has no compatible machine")]
    NoOptions { job: usize, op: usize },
    #[error("{found} trailing tokens after the last job")]
    Trailing { found: usize },
    #[error("invalid generator parameters: {0}")]
    GenParams(String),
}

/// One compatible machine for an operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MachineOption {
    pub machine: usize,
    pub time: Time,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operation {
    pub options: Vec<MachineOption>,
}

impl Operation {
    pub fn time_on(&self, machine: usize) -> Option<Time> {
        self.options
            .iter()
            .find(|o| o.machine == machine)
            .map(|o| o.time)
    }

    pub fn min_time(&self) -> Time {
        self.options.iter().map(|o| o.time).min().unwrap_or(0)
    }

    pub fn max_time(&self) -> Time {
        self.options.iter().map(|o| o.time).max().unwrap_or(0)
    }

    pub fn mean_time(&self) -> f64 {
        let total: Time = self.options.iter().map(|o| o.time).sum();
        total as f64 / self.options.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub operations: Vec<Operation>,
}

/// A validated FJSSP instance. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    pub num_machines: usize,
    pub jobs: Vec<Job>,
    offsets: Vec<usize>,
}

impl Instance {
    /// Builds an instance and checks every structural invariant.
    pub fn new(
        id: impl Into<String>,
        num_machines: usize,
        jobs: Vec<Job>,
    ) -> Result<Self, InstanceError> {
        if jobs.is_empty() {
            return Err(InstanceError::Header("instance has no jobs".into()));
        }
        if num_machines == 0 {
            return Err(InstanceError::Header("instance has no machines".into()));
        }
        for (j, job) in jobs.iter().enumerate() {
            if job.operations.is_empty() {
                return Err(InstanceError::EmptyJob(j));
            }
            for (o, op) in job.operations.iter().enumerate() {
                if op.options.is_empty() {
                    return Err(InstanceError::NoOptions { job: j, op: o });
                }
                for (idx, opt) in op.options.iter().enumerate() {
                    if opt.machine >= num_machines {
                        return Err(InstanceError::MachineOutOfRange {
                            job: j,
                            op: o,
                            machine: opt.machine + 1,
                            num_machines,
                        });
                    }
                    if opt.time == 0 {
                        return Err(InstanceError::NonPositiveTime { job: j, op: o });
                    }
                    if op.options[..idx].iter().any(|p| p.machine == opt.machine) {
                        return Err(InstanceError::DuplicateMachine {
                            job: j,
                            op: o,
                            machine: opt.machine + 1,
                        });
                    }
                }
            }
        }
        let mut offsets = Vec::with_capacity(jobs.len() + 1);
        let mut acc = 0;
        for job in &jobs {
            offsets.push(acc);
            acc += job.operations.len();
        }
        offsets.push(acc);
        Ok(Self {
            id: id.into(),
            num_machines,
            jobs,
            offsets,
        })
    }

    pub fn num_jobs(&self) -> usize {
        self.jobs.len()
    }

    pub fn num_operations(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Global operation id of the `op`-th operation of `job` (job-major order).
    pub fn op_id(&self, job: usize, op: usize) -> usize {
        self.offsets[job] + op
    }

    /// Inverse of [`Instance::op_id`].
    pub fn op_location(&self, id: usize) -> (usize, usize) {
        let job = match self.offsets.binary_search(&id) {
            Ok(j) => j,
            Err(j) => j - 1,
        };
        (job, id - self.offsets[job])
    }

    pub fn operation(&self, job: usize, op: usize) -> &Operation {
        &self.jobs[job].operations[op]
    }

    /// Iterates `(global id, job, op index, operation)` in job-major order.
    pub fn operations(&self) -> impl Iterator<Item = (usize, usize, usize, &Operation)> + '_ {
        self.jobs.iter().enumerate().flat_map(move |(j, job)| {
            job.operations
                .iter()
                .enumerate()
                .map(move |(o, op)| (self.offsets[j] + o, j, o, op))
        })
    }

    /// Largest single processing time in the instance.
    pub fn max_time(&self) -> Time {
        self.operations()
            .map(|(_, _, _, op)| op.max_time())
            .max()
            .unwrap_or(1)
    }

    /// Average number of compatible machines per operation.
    pub fn flexibility(&self) -> f64 {
        let total: usize = self
            .operations()
            .map(|(_, _, _, op)| op.options.len())
            .sum();
        total as f64 / self.num_operations() as f64
    }

    /// `"<jobs>x<machines>"`, the grouping key used by benchmark tables.
    pub fn size_label(&self) -> String {
        format!("{}x{}", self.num_jobs(), self.num_machines)
    }
}

struct Tokens<'a> {
    inner: std::str::SplitWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    fn next_usize(&mut self, context: impl Fn() -> String) -> Result<usize, InstanceError> {
        let tok = self
            .inner
            .next()
            .ok_or_else(|| InstanceError::Truncated(context()))?;
        tok.parse::<usize>().map_err(|_| InstanceError::Token {
            token: tok.to_string(),
            context: context(),
        })
    }

    fn next_time(&mut self, job: usize, op: usize) -> Result<Time, InstanceError> {
        let context = || format!("time of job {job} operation {op}");
        let tok = self
            .inner
            .next()
            .ok_or_else(|| InstanceError::Truncated(context()))?;
        // Some files carry times as `12.0`; accept integral floats, reject the rest.
        let value: f64 = tok.parse().map_err(|_| InstanceError::Token {
            token: tok.to_string(),
            context: context(),
        })?;
        if value <= 0.0 {
            return Err(InstanceError::NonPositiveTime { job, op });
        }
        if value.fract() != 0.0 {
            return Err(InstanceError::Token {
                token: tok.to_string(),
                context: context(),
            });
        }
        Ok(value as Time)
    }
}

/// Parses the benchmark text format. `id` becomes the instance label.
pub fn parse_instance_named(text: &str, id: &str) -> Result<Instance, InstanceError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or(InstanceError::Empty)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 2 || fields.len() > 3 {
        return Err(InstanceError::Header(header.trim().to_string()));
    }
    let num_jobs: usize = fields[0]
        .parse()
        .map_err(|_| InstanceError::Header(header.trim().to_string()))?;
    let num_machines: usize = fields[1]
        .parse()
        .map_err(|_| InstanceError::Header(header.trim().to_string()))?;
    if let Some(flex) = fields.get(2) {
        flex.parse::<f64>()
            .map_err(|_| InstanceError::Header(header.trim().to_string()))?;
    }
    if num_jobs == 0 || num_machines == 0 {
        return Err(InstanceError::Header(header.trim().to_string()));
    }

    let body: String = lines.collect::<Vec<_>>().join(" ");
    let mut tokens = Tokens {
        inner: body.split_whitespace(),
    };
    let mut jobs = Vec::with_capacity(num_jobs);
    for j in 0..num_jobs {
        let n_ops = tokens.next_usize(|| format!("operation count of job {j}"))?;
        if n_ops == 0 {
            return Err(InstanceError::EmptyJob(j));
        }
        let mut operations = Vec::with_capacity(n_ops);
        for o in 0..n_ops {
            let n_opts = tokens.next_usize(|| format!("option count of job {j} operation {o}"))?;
            if n_opts == 0 {
                return Err(InstanceError::NoOptions { job: j, op: o });
            }
            let mut options = Vec::with_capacity(n_opts);
            for _ in 0..n_opts {
                let machine = tokens.next_usize(|| format!("machine of job {j} operation {o}"))?;
                if machine == 0 || machine > num_machines {
                    return Err(InstanceError::MachineOutOfRange {
                        job: j,
                        op: o,
                        machine,
                        num_machines,
                    });
                }
                let time = tokens.next_time(j, o)?;
                options.push(MachineOption {
                    machine: machine - 1,
                    time,
                });
            }
            operations.push(Operation { options });
        }
        jobs.push(Job { operations });
    }
    let trailing = tokens.inner.count();
    if trailing > 0 {
        return Err(InstanceError::Trailing { found: trailing });
    }
    Instance::new(id, num_machines, jobs)
}

pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    parse_instance_named(text, "instance")
}

/// Writes the benchmark text format (no flexibility field in the header).
pub fn write_instance(inst: &Instance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", inst.num_jobs(), inst.num_machines);
    for job in &inst.jobs {
        let _ = write!(out, "{}", job.operations.len());
        for op in &job.operations {
            let _ = write!(out, " {}", op.options.len());
            for opt in &op.options {
                let _ = write!(out, " {} {}", opt.machine + 1, opt.time);
            }
        }
        out.push('\n');
    }
    out
}

/// Ranges for synthetic instance generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub j_min: usize,
    pub j_max: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub o_min: usize,
    pub o_max: usize,
    pub op_max: usize,
    pub p_bar: Time,
    pub d: f64,
    pub seed: u64,
}

impl Default for GenParams {
    /// Midpoints of the training ranges, with 4..=6 operations per job.
    fn default() -> Self {
        Self {
            j_min: 5,
            j_max: 10,
            m_min: 4,
            m_max: 9,
            o_min: 4,
            o_max: 6,
            op_max: 5,
            p_bar: 20,
            d: 0.2,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), InstanceError> {
        let bad = |msg: &str| Err(InstanceError::GenParams(msg.to_string()));
        if self.j_min == 0 || self.j_min > self.j_max {
            return bad("need 1 <= j_min <= j_max");
        }
        if self.m_min == 0 || self.m_min > self.m_max {
            return bad("need 1 <= m_min <= m_max");
        }
        if self.o_min == 0 || self.o_min > self.o_max {
            return bad("need 1 <= o_min <= o_max");
        }
        if self.op_max == 0 {
            return bad("need op_max >= 1");
        }
        if self.p_bar == 0 {
            return bad("need p_bar >= 1");
        }
        if !(0.0..1.0).contains(&self.d) {
            return bad("need 0 <= d < 1");
        }
        Ok(())
    }

    /// Upper bound on any generated processing time.
    pub fn max_time(&self) -> Time {
        (self.p_bar as f64 * (1.0 + self.d)).ceil() as Time
    }
}

/// Samples an instance: counts uniform over their ranges, a mean time per
/// operation uniform over `1..=p_bar`, and per-machine times uniform within
/// `±d` of that mean, rounded with a floor of 1.
pub fn generate_instance<R: Rng + ?Sized>(
    params: &GenParams,
    rng: &mut R,
) -> Result<Instance, InstanceError> {
    params.validate()?;
    let num_jobs = rng.gen_range(params.j_min..=params.j_max);
    let num_machines = rng.gen_range(params.m_min..=params.m_max);
    let hi_opts = params.op_max.min(num_machines);
    let lo_opts = 4.min(num_machines).min(hi_opts);
    let mut jobs = Vec::with_capacity(num_jobs);
    for _ in 0..num_jobs {
        let n_ops = rng.gen_range(params.o_min..=params.o_max);
        let mut operations = Vec::with_capacity(n_ops);
        for _ in 0..n_ops {
            let n_opts = rng.gen_range(lo_opts..=hi_opts);
            let mut machines = sample(rng, num_machines, n_opts).into_vec();
            machines.sort_unstable();
            let mean = rng.gen_range(1..=params.p_bar) as f64;
            let options = machines
                .into_iter()
                .map(|machine| {
                    let lo = mean * (1.0 - params.d);
                    let hi = mean * (1.0 + params.d);
                    let raw = if hi > lo {
                        rng.gen_range(lo..=hi)
                    } else {
                        mean
                    };
                    MachineOption {
                        machine,
                        time: (raw.round() as Time).max(1),
                    }
                })
                .collect();
            operations.push(Operation { options });
        }
        jobs.push(Job { operations });
    }
    Instance::new(format!("gen-{}", params.seed), num_machines, jobs)
}

/// The two-job example used throughout the docs and tests:
/// j1 = {o1 on m1: 5, o2 on m2: 3}, j2 = {o3 on m1: 8 or m2: 5}.
pub fn example_instance() -> Instance {
    parse_instance_named("2 2\n2 1 1 5 1 2 3\n1 2 1 8 2 5\n", "example").expect("valid literal")
}
