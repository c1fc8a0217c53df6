//! Output heads: raw network outputs to distributions, and the matching
//! gradient pullbacks.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dist::{categorical_index, Component, GaussianMixture, VARIANCE_FLOOR};
use crate::flops::FlopCounter;
use crate::math;
use crate::metrics::GmmGrad;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// The value head's output parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueHeadKind {
    Scalar,
    /// `3K` outputs: weight logits, means, raw variances.
    Gmm { k: usize },
    /// `m` atom values at fixed fractions `τ_i = (2i − 1)/(2m)`.
    Quantile { m: usize },
}

impl ValueHeadKind {
    pub fn outputs(&self) -> usize {
        match *self {
            ValueHeadKind::Scalar => 1,
            ValueHeadKind::Gmm { k } => 3 * k,
            ValueHeadKind::Quantile { m } => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Discrete { actions: usize },
    /// Diagonal Gaussian with a state-independent log-std per dimension.
    Gaussian { dim: usize },
}

impl PolicyKind {
    /// Outputs produced by the policy layer (log-std parameters excluded).
    pub fn outputs(&self) -> usize {
        match *self {
            PolicyKind::Discrete { actions } => actions,
            PolicyKind::Gaussian { dim } => dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// `τ_i = (2i − 1)/(2m)` for `i = 1..=m`.
pub fn quantile_fractions(m: usize) -> Vec<f64> {
    (1..=m).map(|i| (2 * i - 1) as f64 / (2 * m) as f64).collect()
}

/// Builds the mixture from raw head outputs `[logits; means; raw variances]`.
pub fn gmm_from_raw(raw: &[f64], ops: &mut FlopCounter) -> GaussianMixture {
    let k = raw.len() / 3;
    let w = math::softmax(&raw[..k]);
    let comps = (0..k)
        .map(|i| Component {
            weight: w[i],
            mean: raw[k + i],
            variance: math::softplus(raw[2 * k + i]).max(VARIANCE_FLOOR),
        })
        .collect();
    // softmax: k exp, k adds, k divides, k compares for the max; softplus: exp+log per entry
    ops.transcendental(3 * k as u64);
    ops.arith(4 * k as u64);
    ops.compare(2 * k as u64);
    GaussianMixture::from_parts_unchecked(comps)
}

/// Pulls a gradient with respect to `(w, μ, σ²)` back to the raw head outputs.
pub fn gmm_raw_grad(raw: &[f64], grad: &GmmGrad, ops: &mut FlopCounter) -> Vec<f64> {
    let k = raw.len() / 3;
    let w = math::softmax(&raw[..k]);
    let mut out = vec![0.0; 3 * k];
    let wg: f64 = w.iter().zip(&grad.weights).map(|(a, b)| a * b).sum();
    for i in 0..k {
        out[i] = w[i] * (grad.weights[i] - wg);
        out[k + i] = grad.means[i];
        let r = raw[2 * k + i];
        out[2 * k + i] = if math::softplus(r) > VARIANCE_FLOOR { grad.variances[i] * math::sigmoid(r) } else { 0.0 };
    }
    ops.transcendental(4 * k as u64);
    ops.mul_add(3 * k as u64);
    ops.arith(2 * k as u64);
    ops.compare(3 * k as u64);
    out
}

/// An action distribution produced by the policy head.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyDist {
    Categorical { log_probs: Vec<f64> },
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
}

impl PolicyDist {
    /// `log_std_params` are the raw learnable log-stds; they are clamped to
    /// `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn from_outputs(kind: PolicyKind, outputs: &[f64], log_std_params: &[f64], ops: &mut FlopCounter) -> Self {
        match kind {
            PolicyKind::Discrete { .. } => {
                let n = outputs.len() as u64;
                ops.transcendental(n + 1);
                ops.arith(2 * n);
                ops.compare(n);
                PolicyDist::Categorical { log_probs: math::log_softmax(outputs) }
            }
            PolicyKind::Gaussian { .. } => {
                ops.compare(2 * log_std_params.len() as u64);
                PolicyDist::Gaussian {
                    mean: outputs.to_vec(),
                    log_std: log_std_params.iter().map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect(),
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            PolicyDist::Categorical { log_probs } => {
                let u: f64 = rng.random();
                Action::Discrete(categorical_index(log_probs.iter().map(|l| math::exp(*l)), u))
            }
            PolicyDist::Gaussian { mean, log_std } => Action::Continuous(
                mean.iter()
                    .zip(log_std)
                    .map(|(m, s)| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + math::exp(*s) * z
                    })
                    .collect(),
            ),
        }
    }

    /// The most likely action.
    pub fn mode(&self) -> Action {
        match self {
            PolicyDist::Categorical { log_probs } => {
                let mut best = 0;
                for (i, l) in log_probs.iter().enumerate() {
                    if *l > log_probs[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
            PolicyDist::Gaussian { mean, .. } => Action::Continuous(mean.clone()),
        }
    }

    pub fn log_prob(&self, action: &Action) -> f64 {
        match (self, action) {
            (PolicyDist::Categorical { log_probs }, Action::Discrete(a)) => log_probs[*a],
            (PolicyDist::Gaussian { mean, log_std }, Action::Continuous(x)) => mean
                .iter()
                .zip(log_std)
                .zip(x)
                .map(|((m, s), x)| {
                    let z = (x - m) * math::exp(-s);
                    -0.5 * z * z - s - 0.5 * math::ln_2pi()
                })
                .sum(),
            _ => f64::NAN,
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            PolicyDist::Categorical { log_probs } => -log_probs.iter().map(|l| math::exp(*l) * l).sum::<f64>(),
            PolicyDist::Gaussian { log_std, .. } => log_std.iter().map(|s| s + 0.5 * (1.0 + math::ln_2pi())).sum(),
        }
    }

    /// Gradient of `coef_lp·log π(action) + coef_ent·H` with respect to the
    /// policy-layer outputs and the raw log-std parameters.
    pub fn pullback(
        &self,
        action: &Action,
        coef_lp: f64,
        coef_ent: f64,
        log_std_params: &[f64],
        ops: &mut FlopCounter,
    ) -> (Vec<f64>, Vec<f64>) {
        match (self, action) {
            (PolicyDist::Categorical { log_probs }, Action::Discrete(a)) => {
                let p: Vec<f64> = log_probs.iter().map(|l| math::exp(*l)).collect();
                let h = -p.iter().zip(log_probs).map(|(p, l)| p * l).sum::<f64>();
                let g = p
                    .iter()
                    .zip(log_probs)
                    .enumerate()
                    .map(|(k, (pk, lk))| {
                        let onehot = if k == *a { 1.0 } else { 0.0 };
                        coef_lp * (onehot - pk) - coef_ent * pk * (lk + h)
                    })
                    .collect();
                let n = p.len() as u64;
                ops.transcendental(n);
                ops.mul_add(4 * n);
                ops.arith(2 * n);
                (g, Vec::new())
            }
            (PolicyDist::Gaussian { mean, log_std }, Action::Continuous(x)) => {
                let mut gm = Vec::with_capacity(mean.len());
                let mut gs = Vec::with_capacity(mean.len());
                for i in 0..mean.len() {
                    let inv_var = math::exp(-2.0 * log_std[i]);
                    let d = x[i] - mean[i];
                    gm.push(coef_lp * d * inv_var);
                    let inside = (LOG_STD_MIN..=LOG_STD_MAX).contains(&log_std_params[i]);
                    gs.push(if inside { coef_lp * (d * d * inv_var - 1.0) + coef_ent } else { 0.0 });
                }
                let n = mean.len() as u64;
                ops.transcendental(n);
                ops.mul_add(4 * n);
                ops.compare(2 * n);
                (gm, gs)
            }
            _ => (vec![0.0; self.width()], vec![0.0; log_std_params.len()]),
        }
    }

    fn width(&self) -> usize {
        match self {
            PolicyDist::Categorical { log_probs } => log_probs.len(),
            PolicyDist::Gaussian { mean, .. } => mean.len(),
        }
    }
}
