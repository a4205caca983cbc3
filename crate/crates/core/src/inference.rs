//! Building schedules with trained policies: greedy, best-of-N sampling,
//! and the per-instance best over a set of policies.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::graph_state::rollout;
use crate::instance::Instance;
use crate::policy::{Policy, PolicyError};
use crate::schedule::Schedule;

#[derive(Debug, Clone, PartialEq)]
pub enum InferenceMode {
    Greedy,
    /// Best of `n` stochastic rollouts.
    Sample(usize),
    /// Greedy rollout of every policy in a set, keeping the best.
    Diverse,
}

/// Index of the highest-probability allowed action; ties go to the lowest
/// index.
pub fn argmax_allowed(probs: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&p, &m)) in probs.iter().zip(mask).enumerate() {
        if m && best.is_none_or(|b| p > probs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Draws an index from `probs` by inverse CDF. Zero-probability entries are
/// never returned.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Deterministic argmax rollout.
pub fn greedy(policy: &Policy, inst: &Arc<Instance>) -> Result<Schedule, PolicyError> {
    let rule = policy.config().mask;
    rollout(inst.clone(), Some(rule), |state, _, mask| {
        let (probs, _) = policy.evaluate(state, mask)?;
        argmax_allowed(&probs, mask).ok_or(PolicyError::AllMasked)
    })
}

/// One stochastic rollout.
pub fn sample_once<R: Rng + ?Sized>(
    policy: &Policy,
    inst: &Arc<Instance>,
    rng: &mut R,
) -> Result<Schedule, PolicyError> {
    let rule = policy.config().mask;
    rollout(inst.clone(), Some(rule), |state, _, mask| {
        let (probs, _) = policy.evaluate(state, mask)?;
        Ok(sample_index(&probs, rng))
    })
}

/// Best of `n` stochastic rollouts (first one wins ties).
pub fn sample_best<R: Rng + ?Sized>(
    policy: &Policy,
    inst: &Arc<Instance>,
    n: usize,
    rng: &mut R,
) -> Result<Schedule, PolicyError> {
    assert!(n >= 1, "need at least one sample");
    let mut best: Option<Schedule> = None;
    for _ in 0..n {
        let s = sample_once(policy, inst, rng)?;
        if best.as_ref().is_none_or(|b| s.makespan() < b.makespan()) {
            best = Some(s);
        }
    }
    Ok(best.expect("n >= 1"))
}

/// Greedy schedules of every policy (in parallel) and the index of the
/// best one (lowest index on ties).
pub fn diverse(
    policies: &[Policy],
    inst: &Arc<Instance>,
) -> Result<(usize, Vec<Schedule>), PolicyError> {
    assert!(!policies.is_empty(), "need at least one policy");
    let all: Vec<Schedule> = policies
        .par_iter()
        .map(|p| greedy(p, inst))
        .collect::<Result<_, _>>()?;
    let best = (0..all.len())
        .min_by_key(|&i| (all[i].makespan(), i))
        .expect("non-empty");
    Ok((best, all))
}
