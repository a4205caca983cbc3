//! The scheduling MDP over a heterogeneous graph.
//!
//! A [`GraphState`] holds the schedule under construction (machine free
//! times, job ready times, each job's frontier operation). Its graph view,
//! [`HeteroGraph`], is rebuilt from that state on demand and contains only the
//! operations that are still unscheduled.
//!
//! Actions are `(machine, job)` pairs: schedule the job's frontier operation
//! on the machine, starting as early as the machine and the job allow.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{Instance, Time};
use crate::schedule::{Schedule, ScheduledOp};

pub const OP_FEATURES: usize = 2;
pub const MACHINE_FEATURES: usize = 2;
pub const JOB_FEATURES: usize = 4;
pub const OM_FEATURES: usize = 3;
pub const MJ_FEATURES: usize = 4;

/// Bumped whenever the meaning or layout of any feature changes; stored with
/// trained models.
pub const FEATURE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    pub machine: usize,
    pub job: usize,
}

impl Action {
    pub fn new(machine: usize, job: usize) -> Self {
        Self { machine, job }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskVariant {
    EarliestStart,
    EarliestFinish,
}

/// Restricts the action set to the actions whose start (or end) time is
/// among the `k` smallest distinct values. Ties are always admitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRule {
    pub variant: MaskVariant,
    /// `usize::MAX` admits every action; it is omitted when serialized.
    #[serde(default = "unbounded", skip_serializing_if = "is_unbounded")]
    pub k: usize,
}

fn unbounded() -> usize {
    usize::MAX
}

fn is_unbounded(k: &usize) -> bool {
    *k == usize::MAX
}

impl MaskRule {
    pub fn new(variant: MaskVariant, k: usize) -> Self {
        assert!(k >= 1, "mask rule needs k >= 1");
        Self { variant, k }
    }

    /// A rule that admits every legal action.
    pub fn unrestricted() -> Self {
        Self {
            variant: MaskVariant::EarliestStart,
            k: usize::MAX,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("state is terminal: no actions left")]
    Terminal,
    #[error("illegal action: machine {} job {}", .0.machine + 1, .0.job + 1)]
    IllegalAction(Action),
    #[error("chooser returned index {index} which is out of range or masked")]
    MaskedChoice { index: usize },
}

/// Per-instance data derived once and shared by every state of the instance.
#[derive(Debug)]
struct Statics {
    /// Sum of mean times from this operation to the end of its job.
    suffix_pending: Vec<f64>,
    norm: f64,
}

impl Statics {
    fn new(inst: &Instance) -> Self {
        let mut mean = vec![0.0; inst.num_operations()];
        let mut suffix_pending = vec![0.0; inst.num_operations()];
        for (id, _, _, op) in inst.operations() {
            mean[id] = op.mean_time();
        }
        for (j, job) in inst.jobs.iter().enumerate() {
            let mut acc = 0.0;
            for o in (0..job.operations.len()).rev() {
                let id = inst.op_id(j, o);
                acc += mean[id];
                suffix_pending[id] = acc;
            }
        }
        Self {
            suffix_pending,
            norm: inst.max_time().max(1) as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphState {
    inst: Arc<Instance>,
    statics: Arc<Statics>,
    machine_free: Vec<Time>,
    machine_busy: Vec<Time>,
    job_ready: Vec<Time>,
    next_op: Vec<usize>,
    remaining: usize,
    schedule: Schedule,
}

impl GraphState {
    /// The initial state: every machine and job available at time zero.
    pub fn new(inst: Arc<Instance>) -> Self {
        let statics = Arc::new(Statics::new(&inst));
        let n_ops = inst.num_operations();
        Self {
            machine_free: vec![0; inst.num_machines],
            machine_busy: vec![0; inst.num_machines],
            job_ready: vec![0; inst.num_jobs()],
            next_op: vec![0; inst.num_jobs()],
            remaining: n_ops,
            schedule: Schedule::empty(n_ops),
            statics,
            inst,
        }
    }

    pub fn instance(&self) -> &Arc<Instance> {
        &self.inst
    }

    pub fn is_terminal(&self) -> bool {
        self.remaining == 0
    }

    /// Number of operations not yet scheduled.
    pub fn remaining(&self) -> usize {
        self.remaining
    }

    /// Current makespan: latest end time among scheduled operations.
    pub fn makespan(&self) -> Time {
        self.schedule.makespan()
    }

    pub fn machine_free(&self) -> &[Time] {
        &self.machine_free
    }

    pub fn job_ready(&self) -> &[Time] {
        &self.job_ready
    }

    /// Index (within the job) of the job's first unscheduled operation.
    pub fn frontier(&self, job: usize) -> Option<usize> {
        let next = self.next_op[job];
        (next < self.inst.jobs[job].operations.len()).then_some(next)
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn into_schedule(self) -> Schedule {
        self.schedule
    }

    /// Remaining mean work of a job (sum of mean option times of its
    /// unscheduled operations).
    pub fn remaining_work(&self, job: usize) -> f64 {
        match self.frontier(job) {
            Some(o) => self.statics.suffix_pending[self.inst.op_id(job, o)],
            None => 0.0,
        }
    }

    pub fn remaining_ops(&self, job: usize) -> usize {
        self.inst.jobs[job].operations.len() - self.next_op[job]
    }

    /// Every `(machine, job)` pair where the machine can process the job's
    /// frontier operation, ordered by job then machine.
    pub fn legal_actions(&self) -> Vec<Action> {
        let mut actions = Vec::new();
        for job in 0..self.inst.num_jobs() {
            if let Some(o) = self.frontier(job) {
                let mut machines: Vec<usize> = self
                    .inst
                    .operation(job, o)
                    .options
                    .iter()
                    .map(|x| x.machine)
                    .collect();
                machines.sort_unstable();
                actions.extend(machines.into_iter().map(|m| Action::new(m, job)));
            }
        }
        actions
    }

    /// `(start, end)` the action would get if taken now.
    pub fn action_times(&self, a: Action) -> Result<(Time, Time), EnvError> {
        let o = self.frontier(a.job).ok_or(EnvError::IllegalAction(a))?;
        let p = self
            .inst
            .operation(a.job, o)
            .time_on(a.machine)
            .ok_or(EnvError::IllegalAction(a))?;
        let start = self.machine_free[a.machine].max(self.job_ready[a.job]);
        Ok((start, start + p))
    }

    /// Boolean mask aligned with [`GraphState::legal_actions`].
    pub fn mask_actions(&self, actions: &[Action], rule: MaskRule) -> Vec<bool> {
        let keys: Vec<Time> = actions
            .iter()
            .map(|&a| {
                let (s, e) = self
                    .action_times(a)
                    .expect("actions come from legal_actions");
                match rule.variant {
                    MaskVariant::EarliestStart => s,
                    MaskVariant::EarliestFinish => e,
                }
            })
            .collect();
        let mut distinct = keys.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let Some(&threshold) = distinct.get(rule.k.min(distinct.len()).saturating_sub(1)) else {
            return Vec::new();
        };
        keys.into_iter().map(|k| k <= threshold).collect()
    }

    /// Applies an action; returns the reward `C(s_t) - C(s_{t+1})`.
    pub fn step(&mut self, a: Action) -> Result<i64, EnvError> {
        if self.is_terminal() {
            return Err(EnvError::Terminal);
        }
        if a.job >= self.inst.num_jobs() || a.machine >= self.inst.num_machines {
            return Err(EnvError::IllegalAction(a));
        }
        let (start, end) = self.action_times(a)?;
        let o = self.next_op[a.job];
        let before = self.makespan();
        self.schedule.place(
            self.inst.op_id(a.job, o),
            ScheduledOp {
                job: a.job,
                op: o,
                machine: a.machine,
                start,
                end,
            },
        );
        self.machine_busy[a.machine] += end - start;
        self.machine_free[a.machine] = end;
        self.job_ready[a.job] = end;
        self.next_op[a.job] += 1;
        self.remaining -= 1;
        Ok(before as i64 - self.makespan() as i64)
    }

    /// Builds the heterogeneous graph of the current state with all node
    /// and edge features.
    pub fn graph(&self) -> HeteroGraph {
        let inst = &*self.inst;
        let st = &*self.statics;
        let norm = st.norm;

        let mut op_ids = Vec::with_capacity(self.remaining);
        let mut op_job = Vec::with_capacity(self.remaining);
        let mut op_features = Vec::with_capacity(self.remaining * OP_FEATURES);
        let mut oo_edges = Vec::new();
        for (j, job) in inst.jobs.iter().enumerate() {
            for o in self.next_op[j]..job.operations.len() {
                let id = inst.op_id(j, o);
                if o > self.next_op[j] {
                    oo_edges.push((op_ids.len() - 1, op_ids.len()));
                }
                let ready = if o == self.next_op[j] { 1.0 } else { 0.0 };
                op_features.extend([ready, st.suffix_pending[id] / norm]);
                op_ids.push(id);
                op_job.push(j);
            }
        }

        // max processing time each machine could still be asked to run
        let mut machine_max = vec![0 as Time; inst.num_machines];
        let mut om_edges = Vec::new();
        for (node, &id) in op_ids.iter().enumerate() {
            let (j, o) = inst.op_location(id);
            let op = inst.operation(j, o);
            let mut opts = op.options.clone();
            opts.sort_unstable_by_key(|x| x.machine);
            for x in opts {
                machine_max[x.machine] = machine_max[x.machine].max(x.time);
                om_edges.push((node, x.machine, x.time));
            }
        }
        let mut om_features = Vec::with_capacity(om_edges.len() * OM_FEATURES);
        let mut om_pairs = Vec::with_capacity(om_edges.len());
        for &(node, m, p) in &om_edges {
            let (j, o) = inst.op_location(op_ids[node]);
            let op_max = inst.operation(j, o).max_time() as f64;
            let p = p as f64;
            om_features.extend([p / norm, p / op_max, p / machine_max[m] as f64]);
            om_pairs.push((node, m));
        }

        let mut machine_features = Vec::with_capacity(inst.num_machines * MACHINE_FEATURES);
        for m in 0..inst.num_machines {
            let free = self.machine_free[m];
            let util = self.machine_busy[m] as f64 / free.max(1) as f64;
            machine_features.extend([free as f64 / norm, util]);
        }

        let mut job_features = Vec::with_capacity(inst.num_jobs() * JOB_FEATURES);
        for j in 0..inst.num_jobs() {
            let done = if self.frontier(j).is_none() { 1.0 } else { 0.0 };
            job_features.extend([
                done,
                self.job_ready[j] as f64 / norm,
                self.remaining_ops(j) as f64,
                self.remaining_work(j) / norm,
            ]);
        }

        let mj_edges = self.legal_actions();
        let mut mj_features = Vec::with_capacity(mj_edges.len() * MJ_FEATURES);
        for &a in &mj_edges {
            let o = self.next_op[a.job];
            let op = inst.operation(a.job, o);
            let p = op.time_on(a.machine).expect("legal action") as f64;
            let gap = self.job_ready[a.job].saturating_sub(self.machine_free[a.machine]) as f64;
            mj_features.extend([
                p / norm,
                gap / norm,
                p / op.max_time() as f64,
                p / machine_max[a.machine] as f64,
            ]);
        }

        let oj_edges = op_ids
            .iter()
            .enumerate()
            .map(|(node, _)| (node, op_job[node]))
            .collect();

        HeteroGraph {
            num_machines: inst.num_machines,
            num_jobs: inst.num_jobs(),
            op_ids,
            op_features,
            machine_features,
            job_features,
            om_edges: om_pairs,
            om_features,
            oo_edges,
            oj_edges,
            mj_edges,
            mj_features,
        }
    }
}

/// Node and edge tables of one state. Feature tables are row-major with the
/// widths given by the `*_FEATURES` constants. Operation nodes are numbered
/// `0..op_ids.len()`; machines and jobs use their instance indices.
///
/// Machine-to-operation edges are the reverse of `om_edges` and share its
/// features. Job-job and machine-machine edges are complete graphs with
/// self-loops (see [`HeteroGraph::jj_edges`], [`HeteroGraph::mm_edges`]).
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub num_machines: usize,
    pub num_jobs: usize,
    /// Global operation id of each operation node.
    pub op_ids: Vec<usize>,
    /// `[ready flag, pending processing time]` per operation node.
    pub op_features: Vec<f64>,
    /// `[last completion time, utilization]` per machine.
    pub machine_features: Vec<f64>,
    /// `[done flag, last completion time, remaining ops, pending time]` per job.
    pub job_features: Vec<f64>,
    /// `(op node, machine)` for every compatible pair of a live operation.
    pub om_edges: Vec<(usize, usize)>,
    /// `[p, p / op max, p / machine max]` per `om_edges` entry.
    pub om_features: Vec<f64>,
    /// `(predecessor node, successor node)`.
    pub oo_edges: Vec<(usize, usize)>,
    /// `(op node, job)` membership.
    pub oj_edges: Vec<(usize, usize)>,
    /// The action set, as machine-job edges.
    pub mj_edges: Vec<Action>,
    /// `[p, idle gap, p / op max, p / machine max]` per `mj_edges` entry.
    pub mj_features: Vec<f64>,
}

impl HeteroGraph {
    pub fn num_ops(&self) -> usize {
        self.op_ids.len()
    }

    pub fn jj_edges(&self) -> Vec<(usize, usize)> {
        complete(self.num_jobs)
    }

    pub fn mm_edges(&self) -> Vec<(usize, usize)> {
        complete(self.num_machines)
    }
}

fn complete(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect()
}

/// Runs one episode. `chooser` receives the state, the legal actions and the
/// mask, and returns the index of the action to take, which must be allowed.
pub fn rollout<F, E>(
    inst: Arc<Instance>,
    rule: Option<MaskRule>,
    mut chooser: F,
) -> Result<Schedule, E>
where
    F: FnMut(&GraphState, &[Action], &[bool]) -> Result<usize, E>,
    E: From<EnvError>,
{
    let mut state = GraphState::new(inst);
    while !state.is_terminal() {
        let actions = state.legal_actions();
        let mask = match rule {
            Some(r) => state.mask_actions(&actions, r),
            None => vec![true; actions.len()],
        };
        let index = chooser(&state, &actions, &mask)?;
        if !mask.get(index).copied().unwrap_or(false) {
            return Err(EnvError::MaskedChoice { index }.into());
        }
        state.step(actions[index])?;
    }
    Ok(state.into_schedule())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{example_instance, parse_instance};
    use crate::schedule::validate;

    fn example() -> GraphState {
        GraphState::new(Arc::new(example_instance()))
    }

    #[test]
    fn initial_state_of_example() {
        let s = example();
        let g = s.graph();
        assert_eq!(g.num_ops(), 3);
        assert_eq!(g.num_machines, 2);
        assert_eq!(g.num_jobs, 2);
        assert_eq!(
            s.legal_actions(),
            vec![Action::new(0, 0), Action::new(0, 1), Action::new(1, 1)]
        );
        assert_eq!(g.mj_edges, s.legal_actions());
        assert_eq!(g.oo_edges, vec![(0, 1)]);
        assert_eq!(g.oj_edges, vec![(0, 0), (1, 0), (2, 1)]);
        assert_eq!(g.om_edges, vec![(0, 0), (1, 1), (2, 0), (2, 1)]);
        // ready flags: o1 and o3 are frontiers
        assert_eq!(g.op_features[0], 1.0);
        assert_eq!(g.op_features[2], 0.0);
        assert_eq!(g.op_features[4], 1.0);
        assert_eq!(s.makespan(), 0);
        assert_eq!(g.jj_edges().len(), 4);
    }

    #[test]
    fn step_updates_edges_and_features() {
        let mut s = example();
        let reward = s.step(Action::new(0, 0)).unwrap();
        assert_eq!(reward, -5);
        let e = s.schedule().get(0).unwrap();
        assert_eq!((e.machine, e.start, e.end), (0, 0, 5));
        assert_eq!(
            s.legal_actions(),
            vec![Action::new(1, 0), Action::new(0, 1), Action::new(1, 1)]
        );
        let g = s.graph();
        assert_eq!(g.op_ids, vec![1, 2]);
        assert!(g.oo_edges.is_empty());
        // (m1, j2) now has to wait for m1: start 5, gap 0 but job 2 is ready at 0;
        // (m2, j1): job ready at 5, machine free at 0, so idle gap 5.
        let norm = 8.0;
        let idx = g
            .mj_edges
            .iter()
            .position(|&a| a == Action::new(1, 0))
            .unwrap();
        assert_eq!(g.mj_features[idx * MJ_FEATURES + 1], 5.0 / norm);
        assert_eq!(s.action_times(Action::new(0, 1)).unwrap(), (5, 13));
        // machine 1 features: free at 5, fully utilized
        assert_eq!(&g.machine_features[0..2], &[5.0 / norm, 1.0]);
    }

    #[test]
    fn illegal_and_terminal_steps() {
        let mut s = example();
        assert_eq!(
            s.step(Action::new(1, 0)),
            Err(EnvError::IllegalAction(Action::new(1, 0)))
        );
        s.step(Action::new(0, 0)).unwrap();
        s.step(Action::new(1, 0)).unwrap();
        s.step(Action::new(1, 1)).unwrap();
        assert!(s.is_terminal());
        assert_eq!(s.step(Action::new(1, 1)), Err(EnvError::Terminal));
        assert!(s.legal_actions().is_empty());
        assert_eq!(s.makespan(), 13);
    }

    #[test]
    fn mask_examples() {
        let s = example();
        let actions = s.legal_actions();
        let start = s.mask_actions(&actions, MaskRule::new(MaskVariant::EarliestStart, 1));
        assert_eq!(start, vec![true, true, true]);
        let finish = s.mask_actions(&actions, MaskRule::new(MaskVariant::EarliestFinish, 1));
        assert_eq!(finish, vec![true, false, true]);
        let all = s.mask_actions(&actions, MaskRule::new(MaskVariant::EarliestFinish, 2));
        assert_eq!(all, vec![true, true, true]);
        assert_eq!(
            s.mask_actions(&actions, MaskRule::unrestricted()),
            vec![true; 3]
        );
    }

    #[test]
    fn single_operation_instance() {
        let inst = Arc::new(parse_instance("1 1\n1 1 1 5\n").unwrap());
        let s = GraphState::new(inst.clone());
        assert_eq!(s.legal_actions().len(), 1);
        let sched = rollout(inst.clone(), None, |_, _, _| Ok::<_, EnvError>(0)).unwrap();
        assert_eq!(sched.makespan(), 5);
        assert_eq!(validate(&inst, &sched), Ok(()));
    }

    #[test]
    fn first_action_rollout_on_example() {
        let inst = Arc::new(example_instance());
        let sched = rollout(inst.clone(), None, |_, _, _| Ok::<_, EnvError>(0)).unwrap();
        assert_eq!(validate(&inst, &sched), Ok(()));
        assert!(
            [8, 13, 16].contains(&sched.makespan()),
            "{}",
            sched.makespan()
        );
    }

    #[test]
    fn masked_choice_is_rejected() {
        let inst = Arc::new(example_instance());
        let rule = MaskRule::new(MaskVariant::EarliestFinish, 1);
        let err = rollout(inst, Some(rule), |_, _, _| Ok::<_, EnvError>(1)).unwrap_err();
        assert_eq!(err, EnvError::MaskedChoice { index: 1 });
    }
}
