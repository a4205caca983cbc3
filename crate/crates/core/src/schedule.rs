//! Completed schedules, an independent validator, and CSV / Gantt JSON export.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::instance::{Instance, Time};

/// Placement of one operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScheduledOp {
    pub job: usize,
    pub op: usize,
    pub machine: usize,
    pub start: Time,
    pub end: Time,
}

/// A schedule indexed by global operation id. Entries may be `None` only
/// while the schedule is still being built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    entries: Vec<Option<ScheduledOp>>,
    makespan: Time,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleViolation {
    #[error("schedule covers {found} operations, instance has {expected}")]
    Size { expected: usize, found: usize },
    #[error("operation {0} is not scheduled")]
    Missing(usize),
    #[error("operation {op_id} is stored under job {job} op {op}")]
    Misplaced { op_id: usize, job: usize, op: usize },
    #[error("operation {op_id} placed on incompatible machine {machine}")]
    Incompatible { op_id: usize, machine: usize },
    #[error("operation {op_id}: end {end} != start {start} + processing time {time}")]
    Duration {
        op_id: usize,
        start: Time,
        end: Time,
        time: Time,
    },
    #[error(
        "job {job}: operation {op} starts at {start} before its predecessor ends at {pred_end}"
    )]
    Precedence {
        job: usize,
        op: usize,
        start: Time,
        pred_end: Time,
    },
    #[error("machine {machine}: operations {first} and {second} overlap")]
    Overlap {
        machine: usize,
        first: usize,
        second: usize,
    },
    #[error("reported makespan {reported} != latest end {actual}")]
    Makespan { reported: Time, actual: Time },
}

impl Schedule {
    pub fn empty(num_operations: usize) -> Self {
        Self {
            entries: vec![None; num_operations],
            makespan: 0,
        }
    }

    pub(crate) fn place(&mut self, op_id: usize, entry: ScheduledOp) {
        self.makespan = self.makespan.max(entry.end);
        self.entries[op_id] = Some(entry);
    }

    pub fn makespan(&self) -> Time {
        self.makespan
    }

    pub fn get(&self, op_id: usize) -> Option<&ScheduledOp> {
        self.entries.get(op_id).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.entries.iter().all(Option::is_some)
    }

    /// `(op_id, entry)` for every placed operation, in op-id order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &ScheduledOp)> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_ref().map(|e| (i, e)))
    }

    /// Builds a schedule from explicit placements (used by external solvers
    /// and tests); the makespan is derived from the entries.
    pub fn from_entries(entries: Vec<ScheduledOp>) -> Self {
        let makespan = entries.iter().map(|e| e.end).max().unwrap_or(0);
        Self {
            entries: entries.into_iter().map(Some).collect(),
            makespan,
        }
    }

    /// `op_id,job,machine,start,end` with 1-based job and machine numbers.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("op_id,job,machine,start,end\n");
        for (id, e) in self.iter() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                id,
                e.job + 1,
                e.machine + 1,
                e.start,
                e.end
            );
        }
        out
    }

    /// Gantt-ready JSON: one lane per machine with its tasks sorted by start.
    pub fn to_gantt_json(&self, inst: &Instance) -> serde_json::Value {
        #[derive(Serialize)]
        struct Task {
            op_id: usize,
            job: usize,
            op: usize,
            start: Time,
            end: Time,
        }
        let mut lanes: Vec<Vec<Task>> = (0..inst.num_machines).map(|_| Vec::new()).collect();
        for (id, e) in self.iter() {
            lanes[e.machine].push(Task {
                op_id: id,
                job: e.job + 1,
                op: e.op + 1,
                start: e.start,
                end: e.end,
            });
        }
        for lane in &mut lanes {
            lane.sort_by_key(|t| (t.start, t.op_id));
        }
        serde_json::json!({
            "instance": inst.id,
            "makespan": self.makespan,
            "machines": lanes
                .into_iter()
                .enumerate()
                .map(|(m, tasks)| serde_json::json!({ "machine": m + 1, "tasks": tasks }))
                .collect::<Vec<_>>(),
        })
    }
}

/// Checks a schedule against the instance from scratch: coverage,
/// compatibility, durations, job precedence, machine exclusivity and the
/// reported makespan. Does not rely on how the schedule was produced.
pub fn validate(inst: &Instance, schedule: &Schedule) -> Result<(), ScheduleViolation> {
    if schedule.len() != inst.num_operations() {
        return Err(ScheduleViolation::Size {
            expected: inst.num_operations(),
            found: schedule.len(),
        });
    }
    let mut per_machine: Vec<Vec<(Time, Time, usize)>> = vec![Vec::new(); inst.num_machines];
    let mut latest = 0;
    for (job_idx, job) in inst.jobs.iter().enumerate() {
        let mut pred_end: Option<Time> = None;
        for (op_idx, op) in job.operations.iter().enumerate() {
            let id = inst.op_id(job_idx, op_idx);
            let e = schedule.get(id).ok_or(ScheduleViolation::Missing(id))?;
            if e.job != job_idx || e.op != op_idx {
                return Err(ScheduleViolation::Misplaced {
                    op_id: id,
                    job: e.job,
                    op: e.op,
                });
            }
            let time = op
                .time_on(e.machine)
                .ok_or(ScheduleViolation::Incompatible {
                    op_id: id,
                    machine: e.machine,
                })?;
            if e.end != e.start + time {
                return Err(ScheduleViolation::Duration {
                    op_id: id,
                    start: e.start,
                    end: e.end,
                    time,
                });
            }
            if let Some(pe) = pred_end {
                if e.start < pe {
                    return Err(ScheduleViolation::Precedence {
                        job: job_idx,
                        op: op_idx,
                        start: e.start,
                        pred_end: pe,
                    });
                }
            }
            pred_end = Some(e.end);
            latest = latest.max(e.end);
            per_machine[e.machine].push((e.start, e.end, id));
        }
    }
    for (machine, intervals) in per_machine.iter_mut().enumerate() {
        intervals.sort_unstable();
        for w in intervals.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(ScheduleViolation::Overlap {
                    machine,
                    first: w[0].2,
                    second: w[1].2,
                });
            }
        }
    }
    if latest != schedule.makespan() {
        return Err(ScheduleViolation::Makespan {
            reported: schedule.makespan(),
            actual: latest,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::example_instance;

    fn op(job: usize, op: usize, machine: usize, start: Time, end: Time) -> ScheduledOp {
        ScheduledOp {
            job,
            op,
            machine,
            start,
            end,
        }
    }

    #[test]
    fn accepts_optimal_example_schedule() {
        let inst = example_instance();
        let s = Schedule::from_entries(vec![
            op(0, 0, 0, 0, 5),
            op(0, 1, 1, 5, 8),
            op(1, 0, 1, 0, 5),
        ]);
        assert_eq!(validate(&inst, &s), Ok(()));
        assert_eq!(s.makespan(), 8);
    }

    #[test]
    fn detects_each_violation() {
        let inst = example_instance();
        let overlap = Schedule::from_entries(vec![
            op(0, 0, 0, 0, 5),
            op(0, 1, 1, 5, 8),
            op(1, 0, 1, 4, 9),
        ]);
        assert!(matches!(
            validate(&inst, &overlap),
            Err(ScheduleViolation::Overlap { machine: 1, .. })
        ));
        let prec = Schedule::from_entries(vec![
            op(0, 0, 0, 0, 5),
            op(0, 1, 1, 4, 7),
            op(1, 0, 1, 7, 12),
        ]);
        assert!(matches!(
            validate(&inst, &prec),
            Err(ScheduleViolation::Precedence { .. })
        ));
        let incompatible = Schedule::from_entries(vec![
            op(0, 0, 1, 0, 5),
            op(0, 1, 1, 5, 8),
            op(1, 0, 0, 0, 8),
        ]);
        assert!(matches!(
            validate(&inst, &incompatible),
            Err(ScheduleViolation::Incompatible { .. })
        ));
        let duration = Schedule::from_entries(vec![
            op(0, 0, 0, 0, 6),
            op(0, 1, 1, 6, 9),
            op(1, 0, 1, 0, 5),
        ]);
        assert!(matches!(
            validate(&inst, &duration),
            Err(ScheduleViolation::Duration { .. })
        ));
        let mut partial = Schedule::empty(3);
        partial.place(0, op(0, 0, 0, 0, 5));
        assert_eq!(
            validate(&inst, &partial),
            Err(ScheduleViolation::Missing(1))
        );
    }

    #[test]
    fn csv_and_gantt_export() {
        let inst = example_instance();
        let s = Schedule::from_entries(vec![
            op(0, 0, 0, 0, 5),
            op(0, 1, 1, 5, 8),
            op(1, 0, 1, 0, 5),
        ]);
        assert_eq!(
            s.to_csv(),
            "op_id,job,machine,start,end\n0,1,1,0,5\n1,1,2,5,8\n2,2,2,0,5\n"
        );
        let gantt = s.to_gantt_json(&inst);
        assert_eq!(gantt["makespan"], 8);
        assert_eq!(gantt["machines"][1]["tasks"][0]["op_id"], 2);
        assert_eq!(gantt["machines"][1]["tasks"][1]["start"], 5);
    }
}
