//! A small tree-structured Parzen estimator over independent dimensions.
//!
//! Observations are split at the `gamma` quantile of the objective (higher is
//! better). Each dimension gets a density over the good points and one over
//! the rest; proposals are the candidate draws from the good density with the
//! largest good/bad density ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dim {
    /// Integers in `lo..=hi`.
    Int { lo: i64, hi: i64 },
    /// Reals in `[lo, hi]`, optionally searched on a log scale.
    Float { lo: f64, hi: f64, log: bool },
    /// One of `n` choices, encoded as `0..n`.
    Cat { n: usize },
}

impl Dim {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Dim::Int { lo, hi } => x.fract() == 0.0 && x >= lo as f64 && x <= hi as f64,
            Dim::Float { lo, hi, .. } => x >= lo && x <= hi,
            Dim::Cat { n } => x.fract() == 0.0 && x >= 0.0 && (x as usize) < n,
        }
    }

    /// Position in `[0, 1]` for numeric dimensions.
    fn to_unit(&self, x: f64) -> f64 {
        match *self {
            Dim::Int { lo, hi } => (x - lo as f64 + 0.5) / (hi - lo + 1) as f64,
            Dim::Float { lo, hi, log: false } => {
                if hi > lo {
                    (x - lo) / (hi - lo)
                } else {
                    0.5
                }
            }
            Dim::Float { lo, hi, log: true } => {
                if hi > lo {
                    (x.ln() - lo.ln()) / (hi.ln() - lo.ln())
                } else {
                    0.5
                }
            }
            Dim::Cat { .. } => unreachable!("categorical dimensions have no unit position"),
        }
    }

    fn from_unit(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match *self {
            Dim::Int { lo, hi } => {
                let span = (hi - lo + 1) as f64;
                (lo as f64 + (u * span).floor()).min(hi as f64)
            }
            Dim::Float { lo, hi, log: false } => lo + u * (hi - lo),
            Dim::Float { lo, hi, log: true } => {
                (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
            }
            Dim::Cat { .. } => unreachable!("categorical dimensions have no unit position"),
        }
    }

    fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dim::Cat { n } => rng.gen_range(0..n) as f64,
            _ => self.from_unit(rng.gen::<f64>()),
        }
    }
}

/// Per-dimension density estimate built from a set of observed values.
#[derive(Debug, Clone)]
enum Density {
    /// Gaussian kernels in unit space plus a uniform prior component.
    Kernel {
        centers: Vec<f64>,
        bandwidth: f64,
    },
    Weights(Vec<f64>),
}

impl Density {
    fn fit(dim: &Dim, values: &[f64]) -> Density {
        match *dim {
            Dim::Cat { n } => {
                let mut w = vec![1.0; n];
                for &v in values {
                    w[v as usize] += 1.0;
                }
                let total: f64 = w.iter().sum();
                Density::Weights(w.into_iter().map(|x| x / total).collect())
            }
            _ => {
                let centers: Vec<f64> = values.iter().map(|&v| dim.to_unit(v)).collect();
                let n = centers.len() as f64;
                let bandwidth = if centers.len() < 2 {
                    0.25
                } else {
                    let mean = centers.iter().sum::<f64>() / n;
                    let sd = (centers.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0))
                        .sqrt();
                    (1.06 * sd * n.powf(-0.2)).clamp(0.05, 0.5)
                };
                Density::Kernel { centers, bandwidth }
            }
        }
    }

    fn pdf(&self, dim: &Dim, x: f64) -> f64 {
        match self {
            Density::Weights(w) => w[x as usize],
            Density::Kernel { centers, bandwidth } => {
                let u = dim.to_unit(x);
                let k = centers.len() as f64 + 1.0;
                let norm = 1.0 / (bandwidth * (2.0 * std::f64::consts::PI).sqrt());
                let kernels: f64 = centers
                    .iter()
                    .map(|c| norm * (-0.5 * ((u - c) / bandwidth).powi(2)).exp())
                    .sum();
                // the uniform prior counts as one extra component
                (kernels + 1.0) / k
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, dim: &Dim, rng: &mut R) -> f64 {
        match self {
            Density::Weights(w) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, p) in w.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i as f64;
                    }
                }
                (w.len() - 1) as f64
            }
            Density::Kernel { centers, bandwidth } => {
                let pick = rng.gen_range(0..=centers.len());
                if pick == centers.len() {
                    return dim.sample_uniform(rng);
                }
                // Box-Muller draw around the chosen kernel
                let (u1, u2): (f64, f64) = (rng.gen::<f64>().max(1e-300), rng.gen());
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                dim.from_unit(centers[pick] + bandwidth * z)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tpe {
    dims: Vec<Dim>,
    /// Fraction of observations treated as good.
    pub gamma: f64,
    /// Draws scored per proposal.
    pub candidates: usize,
    /// Proposals drawn uniformly before the estimator is used.
    pub startup: usize,
    history: Vec<(Vec<f64>, f64)>,
    rng: ChaCha8Rng,
}

impl Tpe {
    pub fn new(dims: Vec<Dim>, seed: u64) -> Self {
        Self {
            dims,
            gamma: 0.25,
            candidates: 24,
            startup: 3,
            history: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }

    pub fn history(&self) -> &[(Vec<f64>, f64)] {
        &self.history
    }

    /// Records the objective (higher is better) of a proposal.
    pub fn observe(&mut self, x: Vec<f64>, y: f64) {
        assert_eq!(
            x.len(),
            self.dims.len(),
            "observation has the wrong dimension"
        );
        self.history.push((x, y));
    }

    pub fn propose(&mut self) -> Vec<f64> {
        if self.history.len() < self.startup.max(2) {
            return self
                .dims
                .iter()
                .map(|d| d.sample_uniform(&mut self.rng))
                .collect();
        }
        let mut order: Vec<usize> = (0..self.history.len()).collect();
        order.sort_by(|&a, &b| {
            self.history[b]
                .1
                .total_cmp(&self.history[a].1)
                .then(a.cmp(&b))
        });
        let n_good = ((self.gamma * self.history.len() as f64).ceil() as usize)
            .clamp(1, self.history.len() - 1);
        let (good, bad) = order.split_at(n_good);
        let column = |idx: &[usize], d: usize| {
            idx.iter()
                .map(|&i| self.history[i].0[d])
                .collect::<Vec<_>>()
        };
        let models: Vec<(Density, Density)> = (0..self.dims.len())
            .map(|d| {
                (
                    Density::fit(&self.dims[d], &column(good, d)),
                    Density::fit(&self.dims[d], &column(bad, d)),
                )
            })
            .collect();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..self.candidates {
            let x: Vec<f64> = self
                .dims
                .iter()
                .zip(&models)
                .map(|(dim, (l, _))| l.sample(dim, &mut self.rng))
                .collect();
            let score: f64 = self
                .dims
                .iter()
                .zip(&models)
                .zip(&x)
                .map(|((dim, (l, g)), &v)| l.pdf(dim, v).ln() - g.pdf(dim, v).ln())
                .sum();
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, x));
            }
        }
        best.expect("at least one candidate").1
    }
}
