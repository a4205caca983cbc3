//! Dispatching-rule baselines: a job-selection rule paired with a
//! machine-selection rule, run through the same environment as the policies.
//!
//! Ties are broken by lowest job index, then lowest machine index.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::graph_state::{Action, GraphState};
use crate::instance::Instance;
use crate::schedule::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JobRule {
    /// Job whose frontier operation became ready first.
    Fifo,
    /// Most remaining work.
    Mwkr,
    /// Least remaining work.
    Lwkr,
    /// Most operations remaining.
    Mopnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MachineRule {
    /// Shortest processing time.
    Spt,
    /// Machine on which the operation can start earliest; equal starts are
    /// separated by the earlier end time.
    Eet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DispatchRule {
    pub job_rule: JobRule,
    pub machine_rule: MachineRule,
}

impl DispatchRule {
    pub const fn new(job_rule: JobRule, machine_rule: MachineRule) -> Self {
        Self {
            job_rule,
            machine_rule,
        }
    }

    /// All eight combinations, job rule major.
    pub fn all() -> Vec<DispatchRule> {
        let jobs = [JobRule::Fifo, JobRule::Mwkr, JobRule::Lwkr, JobRule::Mopnr];
        let machines = [MachineRule::Spt, MachineRule::Eet];
        jobs.iter()
            .flat_map(|&j| machines.iter().map(move |&m| DispatchRule::new(j, m)))
            .collect()
    }
}

impl fmt::Display for DispatchRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let j = match self.job_rule {
            JobRule::Fifo => "FIFO",
            JobRule::Mwkr => "MWKR",
            JobRule::Lwkr => "LWKR",
            JobRule::Mopnr => "MOPNR",
        };
        let m = match self.machine_rule {
            MachineRule::Spt => "SPT",
            MachineRule::Eet => "EET",
        };
        write!(f, "{j}+{m}")
    }
}

impl FromStr for DispatchRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (j, m) = s
            .split_once(['+', '_', '-'])
            .ok_or_else(|| format!("expected JOB+MACHINE rule, got `{s}`"))?;
        let job_rule = match j.to_ascii_uppercase().as_str() {
            "FIFO" => JobRule::Fifo,
            "MWKR" => JobRule::Mwkr,
            "LWKR" => JobRule::Lwkr,
            "MOPNR" => JobRule::Mopnr,
            other => return Err(format!("unknown job rule `{other}`")),
        };
        let machine_rule = match m.to_ascii_uppercase().as_str() {
            "SPT" => MachineRule::Spt,
            "EET" => MachineRule::Eet,
            other => return Err(format!("unknown machine rule `{other}`")),
        };
        Ok(DispatchRule::new(job_rule, machine_rule))
    }
}

/// Picks the next action for `state` under `rule`. `None` at terminal states.
pub fn choose(state: &GraphState, rule: DispatchRule) -> Option<Action> {
    let inst = state.instance();
    let ready = state.job_ready();
    let job = (0..inst.num_jobs())
        .filter(|&j| state.frontier(j).is_some())
        .min_by(|&a, &b| {
            let ord = match rule.job_rule {
                JobRule::Fifo => ready[a].cmp(&ready[b]),
                JobRule::Mwkr => state.remaining_work(b).total_cmp(&state.remaining_work(a)),
                JobRule::Lwkr => state.remaining_work(a).total_cmp(&state.remaining_work(b)),
                JobRule::Mopnr => state.remaining_ops(b).cmp(&state.remaining_ops(a)),
            };
            ord.then(a.cmp(&b))
        })?;
    let op = inst.operation(job, state.frontier(job)?);
    let free = state.machine_free();
    op.options
        .iter()
        .min_by_key(|x| {
            let start = free[x.machine].max(ready[job]);
            match rule.machine_rule {
                MachineRule::Spt => (x.time, 0, x.machine),
                MachineRule::Eet => (start, start + x.time, x.machine),
            }
        })
        .map(|x| Action::new(x.machine, job))
}

/// Builds a complete schedule with a dispatching rule.
pub fn solve_dr(inst: &Arc<Instance>, rule: DispatchRule) -> Schedule {
    let mut state = GraphState::new(inst.clone());
    while let Some(a) = choose(&state, rule) {
        state
            .step(a)
            .expect("dispatching rules only pick legal actions");
    }
    state.into_schedule()
}

/// Mean makespan of every rule over `instances`, and the rule with the
/// lowest mean (first in [`DispatchRule::all`] order on ties).
pub fn best_dr(
    instances: &[Arc<Instance>],
    rules: &[DispatchRule],
) -> (DispatchRule, Vec<(DispatchRule, f64)>) {
    assert!(!instances.is_empty(), "best_dr needs at least one instance");
    assert!(!rules.is_empty(), "best_dr needs at least one rule");
    let table: Vec<(DispatchRule, f64)> = rules
        .iter()
        .map(|&rule| {
            let total: f64 = instances
                .iter()
                .map(|inst| solve_dr(inst, rule).makespan() as f64)
                .sum();
            (rule, total / instances.len() as f64)
        })
        .collect();
    let best = table
        .iter()
        .fold(None::<(DispatchRule, f64)>, |acc, &(r, m)| match acc {
            Some((_, bm)) if bm <= m => acc,
            _ => Some((r, m)),
        })
        .map(|(r, _)| r)
        .expect("rules non-empty");
    (best, table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{example_instance, parse_instance};
    use crate::schedule::validate;

    #[test]
    fn mwkr_eet_on_example() {
        let inst = Arc::new(example_instance());
        let state = GraphState::new(inst.clone());
        let rule = DispatchRule::new(JobRule::Mwkr, MachineRule::Eet);
        assert_eq!(choose(&state, rule), Some(Action::new(0, 0)));
        let s = solve_dr(&inst, rule);
        assert_eq!(validate(&inst, &s), Ok(()));
        assert_eq!(s.makespan(), 8);
    }

    #[test]
    fn single_op_all_rules() {
        let inst = Arc::new(parse_instance("1 1\n1 1 1 5\n").unwrap());
        for rule in DispatchRule::all() {
            assert_eq!(solve_dr(&inst, rule).makespan(), 5);
        }
        let (best, table) = best_dr(&[inst], &DispatchRule::all());
        assert_eq!(best, DispatchRule::all()[0]);
        assert!(table.iter().all(|&(_, m)| m == 5.0));
    }

    #[test]
    fn rule_names_round_trip() {
        for rule in DispatchRule::all() {
            assert_eq!(rule.to_string().parse::<DispatchRule>(), Ok(rule));
        }
        assert!("FOO+SPT".parse::<DispatchRule>().is_err());
        assert!("FIFO".parse::<DispatchRule>().is_err());
    }

    #[test]
    fn fifo_prefers_earliest_ready_then_lowest_index() {
        // j1 = one long op, j2/j3 = single short ops on the other machine
        let inst = Arc::new(parse_instance("3 2\n2 1 1 10 1 1 1\n1 1 2 2\n1 1 2 3\n").unwrap());
        let rule = DispatchRule::new(JobRule::Fifo, MachineRule::Spt);
        let mut state = GraphState::new(inst.clone());
        let mut order = Vec::new();
        while let Some(a) = choose(&state, rule) {
            order.push(a.job);
            state.step(a).unwrap();
        }
        // all ready at 0 -> j1, j2, j3 by index; then j1's second op (ready 10)
        assert_eq!(order, vec![0, 1, 2, 0]);
    }
}
