//! Depth-first branch-and-bound over the environment's `(machine, job)`
//! decisions. Used as the reference makespan for gaps on small instances.
//!
//! The search space is the one the environment exposes: every operation is
//! appended to its machine at the earliest time the machine and the job
//! allow. Optima are optimal within that space.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::dispatch::{solve_dr, DispatchRule};
use crate::graph_state::GraphState;
use crate::instance::{Instance, Time};
use crate::schedule::Schedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverBudget {
    pub node_limit: u64,
    pub time_limit: Duration,
}

impl Default for SolverBudget {
    fn default() -> Self {
        Self {
            node_limit: 5_000_000,
            time_limit: Duration::from_secs(60),
        }
    }
}

impl SolverBudget {
    pub fn new(node_limit: u64, time_limit: Duration) -> Self {
        assert!(node_limit > 0, "node limit must be positive");
        assert!(!time_limit.is_zero(), "time limit must be positive");
        Self {
            node_limit,
            time_limit,
        }
    }

    /// A budget that only limits nodes; the result is then independent of
    /// machine speed.
    pub fn nodes(node_limit: u64) -> Self {
        Self::new(node_limit, Duration::from_secs(u64::MAX / 4))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    /// Cut subtrees whose lower bound cannot beat the incumbent.
    pub prune: bool,
    /// Skip states already expanded through a different decision order.
    pub transpositions: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            prune: true,
            transpositions: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExactResult {
    pub makespan: Time,
    #[serde(skip)]
    pub schedule: Schedule,
    /// True iff the search finished inside the budget.
    pub optimal: bool,
    pub nodes: u64,
}

/// Lower bound on the makespan of every completion of `state`: the largest
/// of the current makespan, each job's ready time plus its remaining
/// shortest-option work, each machine's free time plus the work only it can
/// do, and the average machine end time implied by the remaining work.
pub fn lower_bound(state: &GraphState) -> Time {
    let inst = state.instance();
    let mut bound = state.makespan();
    let free = state.machine_free();
    let mut forced = vec![0 as Time; inst.num_machines];
    let mut total_min: Time = 0;
    for j in 0..inst.num_jobs() {
        let Some(first) = state.frontier(j) else {
            continue;
        };
        let mut job_min = 0;
        for op in &inst.jobs[j].operations[first..] {
            let m = op.min_time();
            job_min += m;
            if op.options.len() == 1 {
                forced[op.options[0].machine] += op.options[0].time;
            }
        }
        total_min += job_min;
        bound = bound.max(state.job_ready()[j] + job_min);
    }
    for (k, f) in forced.iter().enumerate() {
        bound = bound.max(free[k] + f);
    }
    let machines = inst.num_machines as Time;
    let load: Time = free.iter().sum::<Time>() + total_min;
    bound.max(load.div_ceil(machines))
}

struct Search {
    budget: SolverBudget,
    options: SearchOptions,
    started: Instant,
    nodes: u64,
    exhausted: bool,
    best: Time,
    best_schedule: Schedule,
    seen: HashSet<Vec<Time>>,
}

const TRANSPOSITION_CAP: usize = 4_000_000;

impl Search {
    fn key(state: &GraphState) -> Vec<Time> {
        let inst = state.instance();
        let mut key = Vec::with_capacity(inst.num_machines + 2 * inst.num_jobs());
        key.extend_from_slice(state.machine_free());
        key.extend_from_slice(state.job_ready());
        key.extend((0..inst.num_jobs()).map(|j| state.remaining_ops(j) as Time));
        key
    }

    fn dfs(&mut self, state: &GraphState) {
        if self.exhausted {
            return;
        }
        self.nodes += 1;
        if self.nodes >= self.budget.node_limit
            || (self.nodes % 1024 == 0 && self.started.elapsed() >= self.budget.time_limit)
        {
            self.exhausted = true;
            return;
        }
        if state.is_terminal() {
            if state.makespan() < self.best {
                self.best = state.makespan();
                self.best_schedule = state.schedule().clone();
            }
            return;
        }
        if self.options.transpositions
            && self.seen.len() < TRANSPOSITION_CAP
            && !self.seen.insert(Self::key(state))
        {
            return;
        }
        let mut children: Vec<(Time, Time, Time, GraphState)> = state
            .legal_actions()
            .into_iter()
            .map(|a| {
                let (start, end) = state.action_times(a).expect("legal");
                let mut child = state.clone();
                child.step(a).expect("legal");
                (lower_bound(&child), end, start, child)
            })
            .collect();
        children.sort_by_key(|c| (c.0, c.1, c.2));
        for (lb, _, _, child) in children {
            if self.options.prune && lb >= self.best {
                // children are sorted by bound; the rest cannot do better
                break;
            }
            self.dfs(&child);
            if self.exhausted {
                return;
            }
        }
    }
}

pub fn solve_exact(inst: &Arc<Instance>, budget: SolverBudget) -> ExactResult {
    solve_exact_with(inst, budget, SearchOptions::default())
}

pub fn solve_exact_with(
    inst: &Arc<Instance>,
    budget: SolverBudget,
    options: SearchOptions,
) -> ExactResult {
    // seed the incumbent with the best dispatching rule
    let incumbent = DispatchRule::all()
        .into_iter()
        .map(|r| solve_dr(inst, r))
        .min_by_key(Schedule::makespan)
        .expect("eight rules");
    let root = GraphState::new(inst.clone());
    let mut search = Search {
        budget,
        options,
        started: Instant::now(),
        nodes: 0,
        exhausted: false,
        best: incumbent.makespan(),
        best_schedule: incumbent,
        seen: HashSet::new(),
    };
    if options.prune && lower_bound(&root) >= search.best {
        return ExactResult {
            makespan: search.best,
            schedule: search.best_schedule,
            optimal: true,
            nodes: 1,
        };
    }
    search.dfs(&root);
    ExactResult {
        makespan: search.best,
        schedule: search.best_schedule,
        optimal: !search.exhausted,
        nodes: search.nodes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_state::Action;
    use crate::instance::{example_instance, parse_instance};
    use crate::schedule::validate;

    #[test]
    fn example_optimum_is_eight() {
        let inst = Arc::new(example_instance());
        let r = solve_exact(&inst, SolverBudget::default());
        assert_eq!(r.makespan, 8);
        assert!(r.optimal);
        assert_eq!(validate(&inst, &r.schedule), Ok(()));
    }

    #[test]
    fn single_operation() {
        let inst = Arc::new(parse_instance("1 1\n1 1 1 5\n").unwrap());
        let r = solve_exact(&inst, SolverBudget::default());
        assert_eq!((r.makespan, r.optimal), (5, true));
    }

    #[test]
    fn bound_on_example_root_and_terminal() {
        let inst = Arc::new(example_instance());
        let mut s = GraphState::new(inst);
        assert_eq!(lower_bound(&s), 8);
        for a in [Action::new(0, 0), Action::new(1, 1), Action::new(1, 0)] {
            s.step(a).unwrap();
        }
        assert!(s.is_terminal());
        assert_eq!(lower_bound(&s), s.makespan());
    }

    #[test]
    fn exhausted_budget_is_flagged() {
        let text = "4 2\n3 2 1 3 2 4 2 1 5 2 2 1 1 4\n3 2 1 2 2 6 1 1 3 2 1 4 2 2\n2 2 1 5 2 3 1 2 4\n2 1 1 3 2 1 2 2 6\n";
        let inst = Arc::new(parse_instance(text).unwrap());
        let r = solve_exact_with(
            &inst,
            SolverBudget::nodes(3),
            SearchOptions {
                prune: false,
                transpositions: false,
            },
        );
        assert!(!r.optimal);
        assert_eq!(validate(&inst, &r.schedule), Ok(()));
    }
}
