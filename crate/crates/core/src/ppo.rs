//! PPO training of [`Policy`] on generated instances.
//!
//! Episodes are collected with a frozen copy of the parameters, then the
//! clipped surrogate is optimized for `epochs` passes over shuffled
//! minibatches. States are not stored: each sample keeps its episode and
//! step index and the state is rebuilt by replaying the episode's actions.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{clip_grad_norm, Adam, AdamConfig, AutodiffError, Tape, Tensor};
use crate::graph_state::{Action, GraphState, MaskRule, MaskVariant};
use crate::inference::sample_index;
use crate::instance::{generate_instance, GenParams, Instance, InstanceError};
use crate::model_io::{save_model, ModelError};
use crate::policy::{Policy, PolicyConfig, PolicyError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(
        "non-finite loss at update {update}: policy {policy}, value {value}, entropy {entropy}"
    )]
    NonFinite {
        update: usize,
        policy: f64,
        value: f64,
        entropy: f64,
    },
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// The `[train]` section of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Total episodes `n_eps`.
    pub episodes: usize,
    /// Episodes between updates `n_t`.
    pub update_every: usize,
    /// Episodes between regenerating the training instances `n_g`.
    pub regenerate_every: usize,
    /// Size of each generated training set `n_ins`.
    pub instances: usize,
    /// Passes over the buffer per update `K`.
    pub epochs: usize,
    /// Minibatch size `b`.
    pub batch_size: usize,
    pub lr: f64,
    pub gamma: f64,
    pub clip: f64,
    pub coef_policy: f64,
    pub coef_value: f64,
    pub coef_entropy: f64,
    pub max_grad_norm: f64,
    /// Updates between checkpoints (when a checkpoint directory is given).
    pub checkpoint_every: usize,
    pub seed: u64,
    pub gen: GenParams,
    pub policy: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 3000,
            update_every: 10,
            regenerate_every: 500,
            instances: 50,
            epochs: 3,
            batch_size: 64,
            lr: 1e-3,
            gamma: 1.0,
            clip: 0.2,
            coef_policy: 1.0,
            coef_value: 0.5,
            coef_entropy: 0.01,
            max_grad_norm: 5.0,
            checkpoint_every: 10,
            seed: 0,
            gen: GenParams::default(),
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Small instances for quick runs: 3-5 jobs, 2-3 machines, 2-4
    /// operations per job, earliest-start mask with `k = 1`.
    pub fn desk() -> Self {
        Self {
            policy: PolicyConfig {
                mask: MaskRule::new(MaskVariant::EarliestStart, 1),
                ..PolicyConfig::default()
            },
            gen: GenParams {
                j_min: 3,
                j_max: 5,
                m_min: 2,
                m_max: 3,
                o_min: 2,
                o_max: 4,
                op_max: 3,
                ..GenParams::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.update_every == 0 {
            return bad("update_every must be at least 1");
        }
        if self.episodes > 0 && self.update_every > self.episodes {
            return bad("update_every must not exceed episodes");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.instances == 0 || self.regenerate_every == 0 {
            return bad("instances and regenerate_every must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        self.gen.validate()?;
        self.policy.validate()?;
        Ok(())
    }
}

/// One recorded episode: the instance, the actions taken, and per-step
/// collection statistics.
#[derive(Debug, Clone)]
pub struct Episode {
    pub instance: Arc<Instance>,
    pub actions: Vec<Action>,
    /// Index of the action within the step's legal-action list.
    pub choices: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<i64>,
    pub makespan: u64,
}

impl Episode {
    /// `G_t = r_t + gamma * G_{t+1}` with `G_T = 0`.
    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.rewards.len()];
        let mut acc = 0.0;
        for t in (0..self.rewards.len()).rev() {
            acc = self.rewards[t] as f64 + gamma * acc;
            g[t] = acc;
        }
        g
    }

    /// State before step `t`.
    pub fn state_at(&self, t: usize) -> GraphState {
        let mut s = GraphState::new(self.instance.clone());
        for &a in &self.actions[..t] {
            s.step(a).expect("recorded actions replay");
        }
        s
    }
}

/// Samples one episode with `policy`.
pub fn collect_episode<R: Rng + ?Sized>(
    policy: &Policy,
    inst: &Arc<Instance>,
    rng: &mut R,
) -> Result<Episode, PolicyError> {
    let mut state = GraphState::new(inst.clone());
    let n = inst.num_operations();
    let mut ep = Episode {
        instance: inst.clone(),
        actions: Vec::with_capacity(n),
        choices: Vec::with_capacity(n),
        log_probs: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        makespan: 0,
    };
    while !state.is_terminal() {
        let actions = state.legal_actions();
        let mask = state.mask_actions(&actions, policy.config().mask);
        let (probs, value) = policy.evaluate(&state, &mask)?;
        let i = sample_index(&probs, rng);
        ep.rewards.push(state.step(actions[i])?);
        ep.actions.push(actions[i]);
        ep.choices.push(i);
        ep.log_probs.push(probs[i].ln());
        ep.values.push(value);
    }
    ep.makespan = state.makespan();
    Ok(ep)
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    episode: usize,
    step: usize,
    log_prob: f64,
    /// Return divided by the instance's largest processing time.
    target: f64,
    value: f64,
}

/// Experiences gathered since the last update.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    episodes: Vec<Episode>,
    samples: Vec<Sample>,
}

impl RolloutBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, ep: Episode, gamma: f64) {
        let scale = ep.instance.max_time().max(1) as f64;
        let returns = ep.returns(gamma);
        let e = self.episodes.len();
        for (t, g) in returns.into_iter().enumerate() {
            self.samples.push(Sample {
                episode: e,
                step: t,
                log_prob: ep.log_probs[t],
                target: g / scale,
                value: ep.values[t],
            });
        }
        self.episodes.push(ep);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn clear(&mut self) {
        self.episodes.clear();
        self.samples.clear();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossStats {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

struct SampleOut {
    grads: Vec<Tensor>,
    policy: f64,
    value: f64,
    entropy: f64,
    clipped: bool,
}

fn sample_loss(
    policy: &Policy,
    buffer: &RolloutBuffer,
    s: &Sample,
    advantage: f64,
    cfg: &TrainConfig,
    weight: f64,
) -> Result<SampleOut, TrainError> {
    let ep = &buffer.episodes[s.episode];
    let state = ep.state_at(s.step);
    let actions = state.legal_actions();
    let mask = state.mask_actions(&actions, policy.config().mask);
    let mut tape = Tape::new();
    let vars = policy.bind(&mut tape);
    let heads = policy.forward(&mut tape, &vars, &state, &mask)?;

    let lp = tape.pick(heads.log_probs, ep.choices[s.step])?;
    let diff = tape.add_scalar(lp, -s.log_prob);
    let ratio = tape.exp(diff);
    let unclipped = tape.scale(ratio, advantage);
    let clamped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let clipped = tape.scale(clamped, advantage);
    let surrogate = tape.min(unclipped, clipped)?;
    let policy_loss = tape.scale(surrogate, -1.0);

    let err = tape.add_scalar(heads.value, -s.target);
    let sq = tape.mul(err, err)?;

    let probs = tape.exp(heads.log_probs);
    let plogp = tape.mul(probs, heads.log_probs)?;
    let neg_entropy = tape.sum(plogp);

    let a = tape.scale(policy_loss, cfg.coef_policy);
    let b = tape.scale(sq, cfg.coef_value);
    let c = tape.scale(neg_entropy, cfg.coef_entropy);
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;

    let grads = tape.backward(total)?;
    let mut acc = policy.params().zeros_like();
    grads.accumulate_params(&mut acc, weight);
    let r = tape.value(ratio).item();
    Ok(SampleOut {
        grads: acc,
        policy: tape.value(policy_loss).item(),
        value: tape.value(sq).item(),
        entropy: -tape.value(neg_entropy).item(),
        clipped: (r - 1.0).abs() > cfg.clip,
    })
}

/// `epochs` passes of clipped-surrogate updates over `buffer`.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    adam: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    rng: &mut R,
    update: usize,
) -> Result<LossStats, TrainError> {
    if buffer.is_empty() {
        return Err(TrainError::Config(
            "ppo_update needs a non-empty buffer".into(),
        ));
    }
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut totals = LossStats::default();
    let mut count = 0usize;
    let mut batches = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let adv = normalized_advantages(buffer, chunk);
            let weight = 1.0 / chunk.len() as f64;
            let frozen = &*policy;
            let outs: Vec<SampleOut> = chunk
                .par_iter()
                .zip(adv.par_iter())
                .map(|(&i, &a)| sample_loss(frozen, buffer, &buffer.samples[i], a, cfg, weight))
                .collect::<Result<_, _>>()?;
            let mut grads = policy.params().zeros_like();
            for o in &outs {
                for (g, s) in grads.iter_mut().zip(&o.grads) {
                    g.add_assign(s);
                }
                totals.policy += o.policy;
                totals.value += o.value;
                totals.entropy += o.entropy;
                totals.clip_fraction += f64::from(u8::from(o.clipped));
                count += 1;
            }
            let norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
            if !norm.is_finite() {
                let n = outs.len() as f64;
                return Err(TrainError::NonFinite {
                    update,
                    policy: outs.iter().map(|o| o.policy).sum::<f64>() / n,
                    value: outs.iter().map(|o| o.value).sum::<f64>() / n,
                    entropy: outs.iter().map(|o| o.entropy).sum::<f64>() / n,
                });
            }
            totals.grad_norm += norm;
            batches += 1;
            adam.step(policy.params_mut(), &grads);
        }
    }
    let n = count as f64;
    Ok(LossStats {
        policy: totals.policy / n,
        value: totals.value / n,
        entropy: totals.entropy / n,
        clip_fraction: totals.clip_fraction / n,
        grad_norm: totals.grad_norm / batches as f64,
    })
}

/// `G - v(s)` over a minibatch, shifted to mean 0 and scaled to std 1.
fn normalized_advantages(buffer: &RolloutBuffer, chunk: &[usize]) -> Vec<f64> {
    let raw: Vec<f64> = chunk
        .iter()
        .map(|&i| buffer.samples[i].target - buffer.samples[i].value)
        .collect();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return raw.iter().map(|a| a - mean).collect();
    }
    raw.iter().map(|a| (a - mean) / std).collect()
}

/// One row of the training curve.
#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub episode: usize,
    pub instance: String,
    pub makespan: u64,
    pub update: usize,
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub clip_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub curve: Vec<CurveRow>,
    pub updates: Vec<LossStats>,
}

impl TrainReport {
    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let io_err = |e: csv::Error| TrainError::Io {
            path: path.to_path_buf(),
            source: io::Error::other(e.to_string()),
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.curve {
            w.serialize(row).map_err(io_err)?;
        }
        let bytes = w.into_inner().map_err(|e| TrainError::Io {
            path: path.to_path_buf(),
            source: io::Error::other(e.to_string()),
        })?;
        crate::model_io::write_atomic(path, &bytes)?;
        Ok(())
    }
}

/// Where [`train_policy`] writes artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub checkpoint_dir: Option<PathBuf>,
    pub curve_csv: Option<PathBuf>,
}

/// Independent seed for item `index` of random stream `stream`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 4);
    rng.gen()
}

const STREAM_INIT: u64 = 1;
const STREAM_INSTANCES: u64 = 2;
const STREAM_EPISODE: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;

pub fn training_instances(
    cfg: &TrainConfig,
    generation: usize,
) -> Result<Vec<Arc<Instance>>, TrainError> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_INSTANCES, generation as u64));
    (0..cfg.instances)
        .map(|i| {
            let mut inst = generate_instance(&cfg.gen, &mut rng)?;
            inst.id = format!("train-{generation}-{i}");
            Ok(Arc::new(inst))
        })
        .collect()
}

/// Freshly initialized policy for `cfg`.
pub fn init_policy(cfg: &TrainConfig) -> Result<Policy, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_INIT, 0));
    Ok(Policy::new(cfg.policy, &mut rng)?)
}

/// Trains a fresh policy.
pub fn train_policy(
    cfg: &TrainConfig,
    out: &TrainOutputs,
) -> Result<(Policy, TrainReport), TrainError> {
    cfg.validate()?;
    let policy = init_policy(cfg)?;
    train_from(policy, cfg, out)
}

/// Continues training `policy` under `cfg`.
pub fn train_from(
    mut policy: Policy,
    cfg: &TrainConfig,
    out: &TrainOutputs,
) -> Result<(Policy, TrainReport), TrainError> {
    cfg.validate()?;
    if *policy.config() != cfg.policy {
        return Err(TrainError::Config(
            "policy does not match the configured architecture".into(),
        ));
    }
    let mut adam = Adam::new(
        policy.params(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE, 0));
    let mut report = TrainReport::default();
    let mut buffer = RolloutBuffer::new();
    let mut instances = Vec::new();
    let mut episode = 0;
    while episode < cfg.episodes {
        if episode % cfg.regenerate_every == 0 || instances.is_empty() {
            instances = training_instances(cfg, episode / cfg.regenerate_every)?;
        }
        // collect up to the next update or regeneration point in parallel
        let next_update = (episode / cfg.update_every + 1) * cfg.update_every;
        let next_regen = (episode / cfg.regenerate_every + 1) * cfg.regenerate_every;
        let end = next_update.min(next_regen).min(cfg.episodes);
        let frozen = &policy;
        let set = &instances;
        let eps: Vec<Episode> = (episode..end)
            .into_par_iter()
            .map(|e| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_EPISODE, e as u64));
                let inst = &set[rng.gen_range(0..set.len())];
                collect_episode(frozen, inst, &mut rng)
            })
            .collect::<Result<_, _>>()?;
        for (e, ep) in (episode..end).zip(eps) {
            report.curve.push(CurveRow {
                episode: e,
                instance: ep.instance.id.clone(),
                makespan: ep.makespan,
                update: report.updates.len(),
                policy_loss: None,
                value_loss: None,
                entropy: None,
                clip_fraction: None,
            });
            buffer.push(ep, cfg.gamma);
        }
        episode = end;
        if episode % cfg.update_every == 0 || episode == cfg.episodes {
            let stats = ppo_update(
                &mut policy,
                &mut adam,
                &buffer,
                cfg,
                &mut shuffle,
                report.updates.len(),
            )?;
            buffer.clear();
            if let Some(row) = report.curve.last_mut() {
                row.policy_loss = Some(stats.policy);
                row.value_loss = Some(stats.value);
                row.entropy = Some(stats.entropy);
                row.clip_fraction = Some(stats.clip_fraction);
            }
            report.updates.push(stats);
            if let Some(dir) = &out.checkpoint_dir {
                if cfg.checkpoint_every > 0 && report.updates.len() % cfg.checkpoint_every == 0 {
                    let path = dir.join(format!("checkpoint-{:05}.bin", report.updates.len()));
                    save_model(&path, &policy, serde_json::json!({ "episodes": episode }))?;
                }
            }
        }
    }
    if let Some(path) = &out.curve_csv {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|source| TrainError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        report.write_csv(path)?;
    }
    Ok((policy, report))
}
