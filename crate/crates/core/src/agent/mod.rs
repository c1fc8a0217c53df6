//! PPO-style actor-critic with distributional critics.
//!
//! Four variants share the rollout, advantage and policy-update pipeline and
//! differ only in the value head and its loss:
//!
//! | variant      | value head           | targets              | loss                      |
//! |--------------|----------------------|----------------------|---------------------------|
//! | `ppo_scalar` | scalar               | GAE returns          | clipped squared error     |
//! | `iqac`       | `m` fixed quantiles  | SR(λ), Dirac atoms   | Huber quantile            |
//! | `iqac_e`     | `m` fixed quantiles  | SR(λ), Dirac atoms   | sample energy distance    |
//! | `gmac`       | `K`-component GMM    | SR(λ), GMM particles | closed-form energy        |

mod flops;
mod train;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dist::{Component, DiracMixture, GaussianMixture, ValueDistribution};
use crate::envs::ActionSpace;
use crate::error::{Error, Result};
use crate::flops::FlopCounter;
use crate::math;
use crate::metrics::{self, GmmGrad};
use crate::nn::{heads, Action, PolicyKind, ValueHeadKind};
use crate::srlambda::{RewardTrajectory, StepEnd};

pub use flops::{count_flops, gmm_head_overhead, FlopReport};
pub use train::{greedy_action, minibatch_objective, Agent, IterationMetrics, Objective, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    PpoScalar,
    Iqac,
    IqacE,
    Gmac,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::PpoScalar, Variant::Iqac, Variant::IqacE, Variant::Gmac];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ppo_scalar" => Ok(Self::PpoScalar),
            "iqac" => Ok(Self::Iqac),
            "iqac_e" => Ok(Self::IqacE),
            "gmac" => Ok(Self::Gmac),
            _ => Err(Error::InvalidArgument(format!("unknown variant '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PpoScalar => "ppo_scalar",
            Self::Iqac => "iqac",
            Self::IqacE => "iqac_e",
            Self::Gmac => "gmac",
        }
    }

    pub fn is_distributional(self) -> bool {
        self != Self::PpoScalar
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub gamma: f64,
    /// Shared by GAE and SR(λ).
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub rollout_steps: usize,
    pub envs: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    /// Mixture components of the GMM critic.
    pub gmm_components: usize,
    /// Particles in each GMM SR(λ) target.
    pub sr_particles: usize,
    /// Atoms of the quantile critic and of its Dirac targets.
    pub quantiles: usize,
    pub huber_kappa: f64,
    /// Weight of the normalized Cramér intrinsic reward; 0 disables it.
    pub intrinsic_coef: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for an action space: learning rate 2.5e-4 and entropy bonus
    /// 0.01 for discrete actions, 1e-4 and no bonus for continuous ones.
    pub fn defaults(variant: Variant, action_space: &ActionSpace) -> Self {
        let discrete = matches!(action_space, ActionSpace::Discrete(_));
        Self {
            variant,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch: 128,
            rollout_steps: 64,
            envs: 8,
            lr: if discrete { 2.5e-4 } else { 1e-4 },
            entropy_coef: if discrete { 0.01 } else { 0.0 },
            value_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            gmm_components: 5,
            sr_particles: 5,
            quantiles: 64,
            huber_kappa: 1.0,
            intrinsic_coef: 0.0,
            hidden: vec![64, 64],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("invalid training config: {what}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.rollout_steps == 0 || self.envs == 0 {
            return bad("epochs, minibatch, rollout_steps and envs must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0 && self.max_grad_norm > 0.0) {
            return bad("coefficients must be non-negative and max_grad_norm positive");
        }
        if self.gmm_components == 0 || self.sr_particles == 0 || self.quantiles == 0 {
            return bad("gmm_components, sr_particles and quantiles must be positive");
        }
        if !(self.huber_kappa > 0.0) {
            return bad("huber_kappa must be positive");
        }
        if !(self.intrinsic_coef >= 0.0 && self.intrinsic_coef.is_finite()) {
            return bad("intrinsic_coef must be finite and non-negative");
        }
        if self.intrinsic_coef > 0.0 && !self.variant.is_distributional() {
            return bad("the intrinsic reward needs a distributional critic");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }

    pub fn value_head(&self) -> ValueHeadKind {
        match self.variant {
            Variant::PpoScalar => ValueHeadKind::Scalar,
            Variant::Iqac | Variant::IqacE => ValueHeadKind::Quantile { m: self.quantiles },
            Variant::Gmac => ValueHeadKind::Gmm { k: self.gmm_components },
        }
    }
}

pub(crate) fn policy_kind(space: &ActionSpace) -> PolicyKind {
    match *space {
        ActionSpace::Discrete(actions) => PolicyKind::Discrete { actions },
        ActionSpace::Continuous { dim, .. } => PolicyKind::Gaussian { dim },
    }
}

/// Critic output of one state as a value distribution.
pub fn critic_distribution(head: ValueHeadKind, raw: &[f64], ops: &mut FlopCounter) -> Result<ValueDistribution> {
    if let Some(v) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("critic output {v}")));
    }
    Ok(match head {
        ValueHeadKind::Scalar => ValueDistribution::Dirac(DiracMixture::constant(raw[0], 1)),
        ValueHeadKind::Quantile { .. } => ValueDistribution::Dirac(DiracMixture::new(raw.to_vec())?),
        ValueHeadKind::Gmm { .. } => ValueDistribution::Gmm(heads::gmm_from_raw(raw, ops)),
    })
}

/// One environment's slice of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// How each step ended; truncated steps carry the critic's distribution
    /// at the cut-off observation.
    pub ends: Vec<StepEnd>,
    pub log_probs: Vec<f64>,
    pub critic: Vec<ValueDistribution>,
    /// Critic distribution at the observation after the last step.
    pub bootstrap: ValueDistribution,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        let n = self.rewards.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        }
        for len in [self.obs.len(), self.actions.len(), self.ends.len(), self.log_probs.len(), self.critic.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if let Some(l) = self.log_probs.iter().find(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("log-probability {l}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Critic mean at each step.
    pub fn values(&self) -> Vec<f64> {
        self.critic.iter().map(ValueDistribution::mean).collect()
    }

    /// Value of the successor of step `t`: zero after a terminal step, the
    /// cut-off observation's value after truncation.
    pub fn next_value(&self, t: usize) -> f64 {
        match &self.ends[t] {
            StepEnd::Terminal => 0.0,
            StepEnd::Truncated(z) => z.mean(),
            StepEnd::Continue if t + 1 < self.len() => self.critic[t + 1].mean(),
            StepEnd::Continue => self.bootstrap.mean(),
        }
    }

    pub fn reward_trajectory(&self, gamma: f64, lambda: f64) -> Result<RewardTrajectory> {
        RewardTrajectory::with_ends(
            self.rewards.clone(),
            self.ends.clone(),
            self.critic.clone(),
            self.bootstrap.clone(),
            gamma,
            lambda,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageEstimate {
    pub advantages: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl AdvantageEstimate {
    pub fn from_values(advantages: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&advantages);
        Self { advantages, mean, std }
    }

    /// Advantages shifted to mean 0 and scaled to unit standard deviation.
    pub fn normalized(&self) -> Vec<f64> {
        normalize(&self.advantages)
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

pub(crate) fn normalize(xs: &[f64]) -> Vec<f64> {
    let (mean, std) = mean_std(xs);
    xs.iter().map(|x| (x - mean) / (std + 1e-8)).collect()
}

/// Generalized advantage estimates with `V = mean` of the critic.
///
/// `δ_t = r_t + γ·V(next) − V_t` and `Â_t = δ_t + γλ·Â_{t+1}`, where the
/// recursion restarts after terminal and truncated steps.
pub fn gae(traj: &Trajectory, gamma: f64, lambda: f64) -> AdvantageEstimate {
    gae_with_rewards(traj, &traj.rewards, gamma, lambda)
}

pub(crate) fn gae_with_rewards(traj: &Trajectory, rewards: &[f64], gamma: f64, lambda: f64) -> AdvantageEstimate {
    let values = traj.values();
    let mut adv = vec![0.0; traj.len()];
    let mut carry = 0.0;
    for t in (0..traj.len()).rev() {
        if !matches!(traj.ends[t], StepEnd::Continue) {
            carry = 0.0;
        }
        let delta = rewards[t] + gamma * traj.next_value(t) - values[t];
        carry = delta + gamma * lambda * carry;
        adv[t] = carry;
    }
    AdvantageEstimate::from_values(adv)
}

/// Clipped surrogate `−mean(min(ρ·Â, g(ε, Â)))` with `ρ = exp(new − old)` and
/// `g(ε, A) = (1 + ε)A` for `A ≥ 0`, `(1 − ε)A` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipLoss {
    pub loss: f64,
    /// Derivative of `loss` with respect to each new log-probability.
    pub grad: Vec<f64>,
    /// Fraction of samples on the clipped branch.
    pub clip_fraction: f64,
}

pub fn ppo_clip_loss(new_log_probs: &[f64], old_log_probs: &[f64], advantages: &[f64], clip: f64) -> Result<ClipLoss> {
    let n = new_log_probs.len();
    if old_log_probs.len() != n || advantages.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: old_log_probs.len().min(advantages.len()) });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    let mut clipped = 0usize;
    for i in 0..n {
        let ratio = math::exp(new_log_probs[i] - old_log_probs[i]);
        let a = advantages[i];
        let surrogate = ratio * a;
        let bound = if a >= 0.0 { (1.0 + clip) * a } else { (1.0 - clip) * a };
        if surrogate <= bound {
            loss -= surrogate;
            grad[i] = -surrogate / n as f64;
        } else {
            loss -= bound;
            clipped += 1;
        }
    }
    Ok(ClipLoss { loss: loss / n as f64, grad, clip_fraction: clipped as f64 / n as f64 })
}

/// Closed-form energy distance between the critic mixture and its target.
pub fn value_loss_gmac(critic: &GaussianMixture, target: &GaussianMixture) -> f64 {
    metrics::energy_gmm(critic, target)
}

/// The same loss with its gradient with respect to the critic's `(w, μ, σ²)`.
pub fn value_loss_gmac_grad(critic: &[Component], target: &[Component], ops: &mut FlopCounter) -> (f64, GmmGrad) {
    metrics::energy_gmm_grad(critic, target, ops)
}

/// Huber quantile loss of critic atoms at fractions `taus` against target atoms.
pub fn value_loss_iqac(critic: &[f64], taus: &[f64], target: &[f64], kappa: f64) -> Result<f64> {
    if critic.len() != taus.len() {
        return Err(Error::DimensionMismatch { expected: critic.len(), got: taus.len() });
    }
    let preds: Vec<(f64, f64)> = critic.iter().copied().zip(taus.iter().copied()).collect();
    metrics::huber_quantile_loss(target, &preds, kappa)
}

/// Sample energy distance between critic atoms and target atoms.
pub fn value_loss_iqac_e(critic: &[f64], target: &[f64]) -> Result<f64> {
    metrics::energy_samples(critic, target)
}

/// Running root-mean-square of past values, used to scale intrinsic rewards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunningScale {
    count: u64,
    mean_sq: f64,
}

impl RunningScale {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, xs: &[f64]) {
        for &x in xs {
            self.count += 1;
            self.mean_sq += (x * x - self.mean_sq) / self.count as f64;
        }
    }

    pub fn scale(&self) -> f64 {
        math::sqrt(self.mean_sq)
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

/// Cramér-squared distance (half the energy distance) between the critic's
/// prediction and its target, per step, divided by the running scale after
/// the scale has absorbed this batch.
pub fn intrinsic_reward_cramer(
    critic: &[ValueDistribution],
    targets: &[ValueDistribution],
    scale: &mut RunningScale,
) -> Result<Vec<f64>> {
    if critic.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: critic.len(), got: targets.len() });
    }
    let raw: Vec<f64> = critic.iter().zip(targets).map(|(c, t)| 0.5 * metrics::energy(c, t)).collect();
    scale.update(&raw);
    let s = scale.scale();
    Ok(raw.iter().map(|r| if s > 0.0 { r / s } else { 0.0 }).collect())
}
