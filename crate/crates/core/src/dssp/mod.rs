//! Diverse scheduling policies: a hyperparameter search that keeps every
//! trained policy improving the best known gap on at least one validation
//! instance, followed by clustering the kept policies by their validation
//! gaps and picking one representative per cluster.

pub mod kmeans;
pub mod tpe;

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::{solve_exact, SolverBudget};
use crate::graph_state::{MaskRule, MaskVariant};
use crate::inference::greedy;
use crate::instance::{generate_instance, GenParams, Instance, InstanceError};
use crate::model_io::{save_model, write_atomic, ModelError};
use crate::policy::{Policy, PolicyConfig, PolicyError};
use crate::ppo::{train_policy, TrainConfig, TrainError, TrainOutputs};

pub use kmeans::{kmeans, Clustering};
pub use tpe::{Dim, Tpe};

#[derive(Debug, Error)]
pub enum DsspError {
    #[error("validation set must contain at least one instance")]
    EmptyValidation,
    #[error("invalid search domain: {0}")]
    Domain(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

/// Inclusive integer range.
pub type Range = (i64, i64);

/// The hyperparameter search domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpDomain {
    pub j_min: Range,
    pub j_max: Range,
    pub m_min: Range,
    pub m_max: Range,
    pub op_max: Range,
    pub p_bar: Range,
    pub layers: Range,
    pub hidden: Vec<usize>,
    pub episodes: Range,
    pub lr: (f64, f64),
    pub batch_size: Vec<usize>,
    pub update_every: Range,
    pub mask_variants: Vec<MaskVariant>,
    pub k: Range,
    /// Operations per job for generated training instances (not searched).
    pub o_min: usize,
    pub o_max: usize,
}

impl Default for HpDomain {
    /// The full-scale ranges.
    fn default() -> Self {
        Self {
            j_min: (5, 9),
            j_max: (10, 15),
            m_min: (4, 7),
            m_max: (9, 13),
            op_max: (5, 9),
            p_bar: (8, 25),
            layers: (1, 2),
            hidden: vec![32, 64, 128],
            episodes: (10_000, 15_000),
            lr: (1e-4, 1e-3),
            batch_size: vec![64, 128, 256],
            update_every: (10, 100),
            mask_variants: vec![MaskVariant::EarliestStart, MaskVariant::EarliestFinish],
            k: (1, 3),
            o_min: 4,
            o_max: 6,
        }
    }
}

impl HpDomain {
    /// Scaled-down ranges that train in seconds per policy.
    pub fn desk() -> Self {
        Self {
            j_min: (3, 4),
            j_max: (4, 5),
            m_min: (2, 2),
            m_max: (2, 3),
            op_max: (2, 3),
            p_bar: (8, 25),
            layers: (1, 2),
            hidden: vec![16, 32],
            episodes: (300, 600),
            lr: (5e-4, 2e-3),
            batch_size: vec![32, 64],
            update_every: (5, 20),
            o_min: 2,
            o_max: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DsspError> {
        let ranges = [
            ("j_min", self.j_min),
            ("j_max", self.j_max),
            ("m_min", self.m_min),
            ("m_max", self.m_max),
            ("op_max", self.op_max),
            ("p_bar", self.p_bar),
            ("layers", self.layers),
            ("episodes", self.episodes),
            ("update_every", self.update_every),
            ("k", self.k),
        ];
        for (name, (lo, hi)) in ranges {
            if lo < 1 || lo > hi {
                return Err(DsspError::Domain(format!(
                    "{name} range ({lo}, {hi}) is empty or not positive"
                )));
            }
        }
        if self.j_min.1 > self.j_max.0 || self.m_min.1 > self.m_max.0 {
            return Err(DsspError::Domain(
                "minimum ranges must lie below maximum ranges".into(),
            ));
        }
        if self.hidden.is_empty() || self.batch_size.is_empty() || self.mask_variants.is_empty() {
            return Err(DsspError::Domain(
                "categorical choices must not be empty".into(),
            ));
        }
        if !(self.lr.0 > 0.0 && self.lr.0 <= self.lr.1) {
            return Err(DsspError::Domain("lr range must be positive".into()));
        }
        if self.o_min == 0 || self.o_min > self.o_max {
            return Err(DsspError::Domain("operations range is empty".into()));
        }
        Ok(())
    }

    /// Search dimensions in [`HyperParams`] field order.
    pub fn dims(&self) -> Vec<Dim> {
        let int = |(lo, hi): Range| Dim::Int { lo, hi };
        vec![
            int(self.j_min),
            int(self.j_max),
            int(self.m_min),
            int(self.m_max),
            int(self.op_max),
            int(self.p_bar),
            int(self.layers),
            Dim::Cat {
                n: self.hidden.len(),
            },
            int(self.episodes),
            Dim::Float {
                lo: self.lr.0,
                hi: self.lr.1,
                log: true,
            },
            Dim::Cat {
                n: self.batch_size.len(),
            },
            int(self.update_every),
            Dim::Cat {
                n: self.mask_variants.len(),
            },
            int(self.k),
        ]
    }

    pub fn decode(&self, x: &[f64]) -> HyperParams {
        let u = |v: f64| v as usize;
        HyperParams {
            j_min: u(x[0]),
            j_max: u(x[1]),
            m_min: u(x[2]),
            m_max: u(x[3]),
            op_max: u(x[4]),
            p_bar: x[5] as u64,
            layers: u(x[6]),
            hidden: self.hidden[u(x[7])],
            episodes: u(x[8]),
            lr: x[9],
            batch_size: self.batch_size[u(x[10])],
            update_every: u(x[11]),
            mask_variant: self.mask_variants[u(x[12])],
            k: u(x[13]),
        }
    }
}

/// One point of the search domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub j_min: usize,
    pub j_max: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub op_max: usize,
    pub p_bar: u64,
    pub layers: usize,
    pub hidden: usize,
    pub episodes: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub update_every: usize,
    pub mask_variant: MaskVariant,
    pub k: usize,
}

impl HyperParams {
    /// Training configuration for these hyperparameters on top of `base`.
    pub fn train_config(&self, domain: &HpDomain, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            episodes: self.episodes,
            update_every: self.update_every.min(self.episodes.max(1)),
            batch_size: self.batch_size,
            lr: self.lr,
            seed,
            gen: GenParams {
                j_min: self.j_min,
                j_max: self.j_max,
                m_min: self.m_min,
                m_max: self.m_max,
                o_min: domain.o_min,
                o_max: domain.o_max,
                op_max: self.op_max,
                p_bar: self.p_bar,
                seed,
                ..base.gen.clone()
            },
            policy: PolicyConfig {
                layers: self.layers,
                hidden: self.hidden,
                mask: MaskRule::new(self.mask_variant, self.k),
            },
            ..base.clone()
        }
    }
}

/// Validation instances and their reference makespans.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub instances: Vec<Arc<Instance>>,
    pub reference: Vec<u64>,
    /// Whether the exact solver proved each reference optimal.
    pub optimal: Vec<bool>,
}

impl ValidationSet {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Wraps given instances, solving each exactly within `budget`.
    pub fn from_instances(
        instances: Vec<Arc<Instance>>,
        budget: SolverBudget,
    ) -> Result<Self, DsspError> {
        if instances.is_empty() {
            return Err(DsspError::EmptyValidation);
        }
        let solved: Vec<(u64, bool)> = instances
            .par_iter()
            .map(|inst| {
                let r = solve_exact(inst, budget);
                (r.makespan, r.optimal)
            })
            .collect();
        Ok(Self {
            instances,
            reference: solved.iter().map(|s| s.0).collect(),
            optimal: solved.iter().map(|s| s.1).collect(),
        })
    }
}

/// Generates `n` validation instances and solves them exactly.
pub fn build_validation(
    gen: &GenParams,
    n: usize,
    budget: SolverBudget,
    seed: u64,
) -> Result<ValidationSet, DsspError> {
    if n == 0 {
        return Err(DsspError::EmptyValidation);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = (0..n)
        .map(|i| {
            let mut inst = generate_instance(gen, &mut rng)?;
            inst.id = format!("val-{i}");
            Ok(Arc::new(inst))
        })
        .collect::<Result<Vec<_>, DsspError>>()?;
    ValidationSet::from_instances(instances, budget)
}

pub fn gap(makespan: u64, reference: u64) -> f64 {
    (makespan as f64 - reference as f64) / reference as f64
}

/// Greedy-rollout gap of `policy` on every validation instance.
pub fn eval_policy(val: &ValidationSet, policy: &Policy) -> Result<Vec<f64>, DsspError> {
    val.instances
        .par_iter()
        .zip(val.reference.par_iter())
        .map(|(inst, &r)| Ok(gap(greedy(policy, inst)?.makespan(), r)))
        .collect()
}

/// Kept policies with their validation gaps and the elementwise best gap.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    pub members: Vec<usize>,
    pub gaps: Vec<Vec<f64>>,
    pub best: Vec<f64>,
}

impl CandidateSet {
    pub fn seeded(id: usize, gaps: Vec<f64>) -> Self {
        Self {
            members: vec![id],
            best: gaps.clone(),
            gaps: vec![gaps],
        }
    }

    /// Largest improvement `max(best - gaps)` the gap vector would bring.
    pub fn improvement(&self, gaps: &[f64]) -> f64 {
        self.best
            .iter()
            .zip(gaps)
            .map(|(b, g)| b - g)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Adds the candidate if it improves some entry; returns the improvement
    /// and whether it was accepted.
    pub fn offer(&mut self, id: usize, gaps: Vec<f64>) -> (f64, bool) {
        let g = self.improvement(&gaps);
        if g > 0.0 {
            for (b, x) in self.best.iter_mut().zip(&gaps) {
                *b = b.min(*x);
            }
            self.members.push(id);
            self.gaps.push(gaps);
            (g, true)
        } else {
            (g, false)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsspConfig {
    /// Search iterations after the seed policy.
    pub iterations: usize,
    /// Policies selected for inference.
    pub policies: usize,
    /// Validation instances.
    pub validation: usize,
    pub validation_gen: GenParams,
    pub exact_nodes: u64,
    pub exact_seconds: u64,
    pub restarts: usize,
    pub seed: u64,
    pub domain: HpDomain,
    /// Fixed training settings not covered by the domain.
    pub base: TrainConfig,
}

impl Default for DsspConfig {
    fn default() -> Self {
        Self {
            iterations: 8,
            policies: 3,
            validation: 20,
            validation_gen: TrainConfig::desk().gen,
            exact_nodes: 2_000_000,
            exact_seconds: 60,
            restarts: 50,
            seed: 0,
            domain: HpDomain::desk(),
            base: TrainConfig::desk(),
        }
    }
}

/// Per-iteration log entry.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    /// 0 for the seed policy.
    pub iteration: usize,
    pub hyper: HyperParams,
    /// `None` for the seed policy.
    pub improvement: Option<f64>,
    pub accepted: bool,
    pub gaps: Vec<f64>,
    /// Best-gap vector after this iteration.
    pub best: Vec<f64>,
    pub train_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct DsspResult {
    pub validation: ValidationSet,
    /// Every trained policy, indexed by iteration.
    pub policies: Vec<Policy>,
    pub records: Vec<IterationRecord>,
    pub candidates: CandidateSet,
    pub clustering: Clustering,
    /// Iteration indices of the selected policies.
    pub selected: Vec<usize>,
    pub warnings: Vec<String>,
}

impl DsspResult {
    pub fn selected_policies(&self) -> Vec<Policy> {
        self.selected
            .iter()
            .map(|&i| self.policies[i].clone())
            .collect()
    }

    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "validation": self.validation.instances.iter().map(|i| &i.id).collect::<Vec<_>>(),
            "reference": self.validation.reference,
            "optimal": self.validation.optimal,
            "iterations": self.records,
            "candidates": self.candidates.members,
            "clusters": self.clustering.assignment,
            "selected": self.selected,
            "warnings": self.warnings,
        })
    }

    /// Writes `manifest.json` and `policy-NN.bin` for every selected policy.
    pub fn save(&self, dir: &Path) -> Result<(), DsspError> {
        for (rank, &i) in self.selected.iter().enumerate() {
            let meta = serde_json::json!({ "iteration": i, "hyper": self.records[i].hyper });
            save_model(
                &dir.join(format!("policy-{rank:02}.bin")),
                &self.policies[i],
                meta,
            )?;
        }
        let text = serde_json::to_string_pretty(&self.manifest())?;
        write_atomic(&dir.join("manifest.json"), text.as_bytes())?;
        Ok(())
    }
}

/// Runs the search: seed policy, `iterations` propose/train/evaluate rounds,
/// then clustering of the kept policies into `policies` groups.
pub fn dssp(cfg: &DsspConfig) -> Result<DsspResult, DsspError> {
    cfg.domain.validate()?;
    if cfg.policies == 0 {
        return Err(DsspError::Domain(
            "at least one policy must be selected".into(),
        ));
    }
    let budget = SolverBudget::new(
        cfg.exact_nodes.max(1),
        std::time::Duration::from_secs(cfg.exact_seconds.max(1)),
    );
    let validation = build_validation(&cfg.validation_gen, cfg.validation, budget, cfg.seed)?;
    dssp_with_validation(cfg, validation)
}

pub fn dssp_with_validation(
    cfg: &DsspConfig,
    validation: ValidationSet,
) -> Result<DsspResult, DsspError> {
    cfg.domain.validate()?;
    if validation.is_empty() {
        return Err(DsspError::EmptyValidation);
    }
    let mut tpe = Tpe::new(cfg.domain.dims(), cfg.seed ^ 0x5eed);
    let mut policies = Vec::new();
    let mut records = Vec::new();
    let mut candidates = CandidateSet::default();
    let mut warnings = Vec::new();

    for iteration in 0..=cfg.iterations {
        // the seed policy's hyperparameters are drawn but not scored
        let x = tpe.propose();
        let hyper = cfg.domain.decode(&x);
        let train = hyper.train_config(
            &cfg.domain,
            &cfg.base,
            cfg.seed.wrapping_add(iteration as u64 * 7919),
        );
        let started = std::time::Instant::now();
        let (policy, _) = train_policy(&train, &TrainOutputs::default())?;
        let train_seconds = started.elapsed().as_secs_f64();
        let gaps = eval_policy(&validation, &policy)?;
        let (improvement, accepted) = if iteration == 0 {
            candidates = CandidateSet::seeded(0, gaps.clone());
            (None, true)
        } else {
            let (g, ok) = candidates.offer(iteration, gaps.clone());
            tpe.observe(x, g);
            (Some(g), ok)
        };
        records.push(IterationRecord {
            iteration,
            hyper,
            improvement,
            accepted,
            gaps,
            best: candidates.best.clone(),
            train_seconds,
        });
        policies.push(policy);
    }

    let k = if candidates.members.len() < cfg.policies {
        warnings.push(format!(
            "only {} candidates for {} requested policies; returning all",
            candidates.members.len(),
            cfg.policies
        ));
        candidates.members.len()
    } else {
        cfg.policies
    };
    let clustering = kmeans(&candidates.gaps, k, cfg.restarts, cfg.seed);
    let selected = clustering
        .representatives
        .iter()
        .map(|&r| candidates.members[r])
        .collect();
    Ok(DsspResult {
        validation,
        policies,
        records,
        candidates,
        clustering,
        selected,
        warnings,
    })
}

/// Per-instance minimum over the rows of a gap matrix.
pub fn pooled_best(rows: &[&[f64]]) -> Vec<f64> {
    let n = rows.first().map_or(0, |r| r.len());
    (0..n)
        .map(|v| rows.iter().map(|r| r[v]).fold(f64::INFINITY, f64::min))
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::example_instance;

    #[test]
    fn acceptance_rule_examples() {
        let mut c = CandidateSet::seeded(0, vec![0.05, 0.10]);
        let (g, ok) = c.offer(1, vec![0.06, 0.07]);
        assert!(ok && (g - 0.03).abs() < 1e-12);
        assert!((c.best[0] - 0.05).abs() < 1e-12 && (c.best[1] - 0.07).abs() < 1e-12);
        let before = c.best.clone();
        let (g, ok) = c.offer(2, vec![0.06, 0.12]);
        assert!(!ok && (g + 0.01).abs() < 1e-12);
        assert_eq!(c.best, before);
        assert_eq!(c.members, vec![0, 1]);
    }

    #[test]
    fn gap_formula() {
        assert_eq!(gap(8, 8), 0.0);
        assert_eq!(gap(12, 8), 0.5);
    }

    #[test]
    fn validation_of_the_example() {
        let v = ValidationSet::from_instances(
            vec![Arc::new(example_instance())],
            SolverBudget::default(),
        )
        .unwrap();
        assert_eq!(v.reference, vec![8]);
        assert_eq!(v.optimal, vec![true]);
        assert!(matches!(
            build_validation(&GenParams::default(), 0, SolverBudget::default(), 0),
            Err(DsspError::EmptyValidation)
        ));
    }

    #[test]
    fn domain_samples_decode_to_valid_configs() {
        for domain in [HpDomain::default(), HpDomain::desk()] {
            domain.validate().unwrap();
            let mut tpe = Tpe::new(domain.dims(), 1);
            for i in 0..30 {
                let x = tpe.propose();
                for (d, v) in domain.dims().iter().zip(&x) {
                    assert!(d.contains(*v));
                }
                let h = domain.decode(&x);
                h.train_config(&domain, &TrainConfig::default(), 0)
                    .validate()
                    .unwrap();
                tpe.observe(x, -(i as f64));
            }
        }
    }

    #[test]
    fn pooled_best_is_elementwise_min() {
        let a = [0.1, 0.5];
        let b = [0.3, 0.2];
        assert_eq!(pooled_best(&[&a, &b]), vec![0.1, 0.2]);
    }
}
