//! Multi-step distributional Bellman targets.
//!
//! [`sr_lambda_dirac`] and [`sr_lambda_gmm`] build every step's λ-return target
//! in one reverse sweep by sample replacement; [`exact_lambda_mixture`] is the
//! exact truncated λ-mixture they approximate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use crate::dist::{
    categorical_index, Component, DiracMixture, GaussianMixture, ValueDistribution, WeightedMixture,
    VARIANCE_FLOOR,
};
use crate::error::{Error, Result};
use crate::math;
use crate::metrics::{self, DistanceMethod, DistanceReport};
use crate::rng::keyed_uniform;

const SALT_REPLACE: u64 = 0x5EED_0001;
const SALT_COMPONENT: u64 = 0x5EED_0002;
const SALT_RESAMPLE: u64 = 0x5EED_0003;

/// How a step of the trajectory ended.
#[derive(Debug, Clone, PartialEq)]
pub enum StepEnd {
    Continue,
    /// The episode terminated after this step's reward; nothing is bootstrapped.
    Terminal,
    /// The episode was cut by a step cap; the value of the true successor is
    /// bootstrapped from the given distribution.
    Truncated(ValueDistribution),
}

/// Rewards, step boundaries and critic outputs along a trajectory of length N.
///
/// `values[t]` is the critic's `Z(x_t)` and `bootstrap` is `Z(x_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTrajectory {
    rewards: Vec<f64>,
    ends: Vec<StepEnd>,
    values: Vec<ValueDistribution>,
    bootstrap: ValueDistribution,
    gamma: f64,
    lambda: f64,
}

impl RewardTrajectory {
    /// Builds a trajectory from rewards, per-step terminal flags, critic outputs
    /// and the bootstrap distribution.
    pub fn new(
        rewards: Vec<f64>,
        terminals: &[bool],
        values: Vec<ValueDistribution>,
        bootstrap: ValueDistribution,
        gamma: f64,
        lambda: f64,
    ) -> Result<Self> {
        let ends = terminals
            .iter()
            .map(|&t| if t { StepEnd::Terminal } else { StepEnd::Continue })
            .collect();
        Self::with_ends(rewards, ends, values, bootstrap, gamma, lambda)
    }

    pub fn with_ends(
        rewards: Vec<f64>,
        ends: Vec<StepEnd>,
        values: Vec<ValueDistribution>,
        bootstrap: ValueDistribution,
        gamma: f64,
        lambda: f64,
    ) -> Result<Self> {
        let n = rewards.len();
        if n == 0 {
            return Err(Error::InvalidArgument("trajectory must have at least one step".into()));
        }
        if ends.len() != n || values.len() != n {
            return Err(Error::InvalidArgument(format!(
                "trajectory lengths disagree: {n} rewards, {} step ends, {} values",
                ends.len(),
                values.len()
            )));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("discount {gamma} outside (0, 1]")));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
        }
        if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite reward {r}")));
        }
        Ok(Self { rewards, ends, values, bootstrap, gamma, lambda })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn ends(&self) -> &[StepEnd] {
        &self.ends
    }

    pub fn values(&self) -> &[ValueDistribution] {
        &self.values
    }

    pub fn bootstrap(&self) -> &ValueDistribution {
        &self.bootstrap
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `Z(x_{t})` for `t ∈ 1..=N`, with `Z(x_N)` the bootstrap.
    fn value_at(&self, t: usize) -> &ValueDistribution {
        if t < self.len() {
            &self.values[t]
        } else {
            &self.bootstrap
        }
    }

    /// Replaces rewards (used when intrinsic rewards are mixed in).
    pub fn set_rewards(&mut self, rewards: Vec<f64>) -> Result<()> {
        if rewards.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: rewards.len() });
        }
        self.rewards = rewards;
        Ok(())
    }
}

/// Per-step λ-return targets `Z_t^(λ)` for `t = 0..N−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTargets {
    pub targets: Vec<ValueDistribution>,
}

impl LambdaTargets {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// `Σ_{i<n} γ^i r_{t+i} + γ^n Z(x_{t+n})`, truncated at the first step end
/// inside the window.
pub fn n_step_target(traj: &RewardTrajectory, t: usize, n: usize) -> Result<ValueDistribution> {
    if n == 0 || t + n > traj.len() {
        return Err(Error::InvalidArgument(format!(
            "horizon {n} from step {t} overruns trajectory of length {}",
            traj.len()
        )));
    }
    let mut partial = 0.0;
    let mut discount = 1.0;
    for i in 0..n {
        partial += discount * traj.rewards[t + i];
        discount *= traj.gamma;
        match &traj.ends[t + i] {
            StepEnd::Continue => {}
            StepEnd::Terminal => return Ok(traj.value_at(t + n).point_mass_like(partial)),
            StepEnd::Truncated(z) => return z.affine(partial, discount),
        }
    }
    traj.value_at(t + n).affine(partial, discount)
}

/// Scalar n-step return `G_t^(n)` using critic means.
pub fn scalar_n_step_return(traj: &RewardTrajectory, t: usize, n: usize) -> f64 {
    let mut partial = 0.0;
    let mut discount = 1.0;
    for i in 0..n {
        partial += discount * traj.rewards[t + i];
        discount *= traj.gamma;
        match &traj.ends[t + i] {
            StepEnd::Continue => {}
            StepEnd::Terminal => return partial,
            StepEnd::Truncated(z) => return partial + discount * z.mean(),
        }
    }
    partial + discount * traj.value_at(t + n).mean()
}

/// Weight of the n-step term in the truncated λ-mixture from step t.
fn lambda_weight(lambda: f64, n: usize, horizon: usize) -> f64 {
    if n < horizon {
        (1.0 - lambda) * math::powi(lambda, n as i32 - 1)
    } else {
        math::powi(lambda, horizon as i32 - 1)
    }
}

/// Truncated scalar λ-return computed as the explicit weighted sum of n-step returns.
pub fn scalar_lambda_return(traj: &RewardTrajectory, t: usize) -> f64 {
    let horizon = traj.len() - t;
    (1..=horizon)
        .map(|n| lambda_weight(traj.lambda, n, horizon) * scalar_n_step_return(traj, t, n))
        .sum()
}

/// Exact truncated λ-mixture of the n-step target distributions from step `t`.
pub fn exact_lambda_mixture(traj: &RewardTrajectory, t: usize) -> Result<WeightedMixture> {
    if t >= traj.len() {
        return Err(Error::InvalidArgument(format!("step {t} outside trajectory of length {}", traj.len())));
    }
    let horizon = traj.len() - t;
    let mut components = Vec::new();
    for n in 1..=horizon {
        let w = lambda_weight(traj.lambda, n, horizon);
        if w == 0.0 {
            continue;
        }
        let target = n_step_target(traj, t, n)?;
        components.extend(
            target.to_components().into_iter().map(|c| Component::new(w * c.weight, c.mean, c.variance)),
        );
    }
    WeightedMixture::from_unnormalized(components)
}

/// What happens to the working set after a step's target is recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WorkingSet {
    /// Keep the recorded atoms as they are.
    #[default]
    Keep,
    /// Resample the recorded atoms with replacement before the replacement step.
    Resample,
}

/// Options for the SR(λ) sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SrOptions {
    pub working_set: WorkingSet,
}

fn dirac_atoms(d: &ValueDistribution, m: usize, what: &str) -> Result<Vec<f64>> {
    match d {
        ValueDistribution::Dirac(dm) if dm.len() == m => Ok(dm.atoms().to_vec()),
        ValueDistribution::Dirac(dm) => Err(Error::InvalidArgument(format!(
            "{what} has {} atoms, expected {m}",
            dm.len()
        ))),
        _ => Err(Error::InvalidArgument(format!("{what} is not a Dirac mixture"))),
    }
}

fn resample_in_place<T: Copy>(xs: &mut [T], key: u64, step: u64) {
    let src = xs.to_vec();
    let m = src.len();
    for (i, x) in xs.iter_mut().enumerate() {
        let u = keyed_uniform(key, step, i as u64, SALT_RESAMPLE);
        *x = src[((u * m as f64) as usize).min(m - 1)];
    }
}

/// SR(λ) over Dirac atoms: a reverse sweep applying `X ← r_t + γX`, recording
/// `Z_t^(λ) = X`, then replacing atom `i` by atom `i` of `Z(x_t)` with
/// probability `1 − λ`.
pub fn sr_lambda_dirac<R: RngCore + ?Sized>(traj: &RewardTrajectory, rng: &mut R) -> Result<LambdaTargets> {
    sr_lambda_dirac_with(traj, rng, SrOptions::default())
}

pub fn sr_lambda_dirac_with<R: RngCore + ?Sized>(
    traj: &RewardTrajectory,
    rng: &mut R,
    options: SrOptions,
) -> Result<LambdaTargets> {
    let m = traj.bootstrap.as_dirac().map(DiracMixture::len).ok_or_else(|| {
        Error::InvalidArgument("bootstrap is not a Dirac mixture".into())
    })?;
    let n = traj.len();
    for t in 1..n {
        dirac_atoms(&traj.values[t], m, "critic value")?;
    }
    let key = rng.next_u64();
    let (gamma, lambda) = (traj.gamma, traj.lambda);
    let mut x = dirac_atoms(&traj.bootstrap, m, "bootstrap")?;
    let mut targets = vec![ValueDistribution::Dirac(DiracMixture::constant(0.0, m)); n];
    for t in (0..n).rev() {
        match &traj.ends[t] {
            StepEnd::Continue => {}
            StepEnd::Terminal => x.iter_mut().for_each(|a| *a = 0.0),
            StepEnd::Truncated(z) => x = dirac_atoms(z, m, "truncation bootstrap")?,
        }
        let r = traj.rewards[t];
        for a in &mut x {
            *a = r + gamma * *a;
        }
        targets[t] = ValueDistribution::Dirac(DiracMixture::new(x.clone())?);
        if t == 0 {
            break;
        }
        if options.working_set == WorkingSet::Resample {
            resample_in_place(&mut x, key, t as u64);
        }
        let source = traj.values[t].as_dirac().map(DiracMixture::atoms).unwrap_or(&[]);
        for (i, a) in x.iter_mut().enumerate() {
            if keyed_uniform(key, t as u64, i as u64, SALT_REPLACE) < 1.0 - lambda {
                *a = source[i];
            }
        }
    }
    Ok(LambdaTargets { targets })
}

fn gmm_of<'a>(d: &'a ValueDistribution, what: &str) -> Result<&'a GaussianMixture> {
    d.as_gmm().ok_or_else(|| Error::InvalidArgument(format!("{what} is not a Gaussian mixture")))
}

fn draw_component(g: &GaussianMixture, key: u64, step: u64, index: u64) -> (f64, f64) {
    let u = keyed_uniform(key, step, index, SALT_COMPONENT);
    let c = g.components()[categorical_index(g.weights(), u)];
    (c.mean, c.variance)
}

/// SR(λ) over Gaussian parameters: the working set holds `m` `(μ, σ²)` pairs,
/// the Bellman operation maps them to `(r + γμ, γ²σ²)`, and replacement draws a
/// component of `Z(x_t)` by its mixture weight.
pub fn sr_lambda_gmm<R: RngCore + ?Sized>(traj: &RewardTrajectory, m: usize, rng: &mut R) -> Result<LambdaTargets> {
    sr_lambda_gmm_with(traj, m, rng, SrOptions::default())
}

pub fn sr_lambda_gmm_with<R: RngCore + ?Sized>(
    traj: &RewardTrajectory,
    m: usize,
    rng: &mut R,
    options: SrOptions,
) -> Result<LambdaTargets> {
    if m == 0 {
        return Err(Error::InvalidArgument("particle count must be >= 1".into()));
    }
    let n = traj.len();
    let bootstrap = gmm_of(&traj.bootstrap, "bootstrap")?;
    for t in 1..n {
        gmm_of(&traj.values[t], "critic value")?;
    }
    let key = rng.next_u64();
    let (gamma, lambda) = (traj.gamma, traj.lambda);
    let mut x: Vec<(f64, f64)> = (0..m).map(|i| draw_component(bootstrap, key, n as u64, i as u64)).collect();
    let mut targets = Vec::with_capacity(n);
    for t in (0..n).rev() {
        match &traj.ends[t] {
            StepEnd::Continue => {}
            StepEnd::Terminal => x.iter_mut().for_each(|p| *p = (0.0, VARIANCE_FLOOR)),
            StepEnd::Truncated(z) => {
                let g = gmm_of(z, "truncation bootstrap")?;
                x = (0..m).map(|i| draw_component(g, key, n as u64 + 1 + t as u64, i as u64)).collect();
            }
        }
        let r = traj.rewards[t];
        for p in &mut x {
            *p = (r + gamma * p.0, (gamma * gamma * p.1).max(VARIANCE_FLOOR));
        }
        targets.push(ValueDistribution::Gmm(GaussianMixture::equal_weight(&x)?));
        if t == 0 {
            break;
        }
        if options.working_set == WorkingSet::Resample {
            resample_in_place(&mut x, key, t as u64);
        }
        let source = gmm_of(&traj.values[t], "critic value")?;
        for (i, p) in x.iter_mut().enumerate() {
            if keyed_uniform(key, t as u64, i as u64, SALT_REPLACE) < 1.0 - lambda {
                *p = draw_component(source, key, t as u64, i as u64);
            }
        }
    }
    targets.reverse();
    Ok(LambdaTargets { targets })
}

/// Which SR(λ) form to validate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrForm {
    Dirac,
    Gmm { particles: usize },
}

/// Pools `replications` seeded SR(λ) runs and reports, per step, the energy
/// distance between the pooled targets and the exact λ-mixture. The returned
/// report carries the largest per-step distance.
pub fn sr_lambda_distribution_check<R: RngCore + ?Sized>(
    traj: &RewardTrajectory,
    form: SrForm,
    replications: usize,
    rng: &mut R,
) -> Result<(DistanceReport, Vec<f64>)> {
    if replications == 0 {
        return Err(Error::InvalidArgument("replications must be >= 1".into()));
    }
    let n = traj.len();
    let mut pools: Vec<Vec<Component>> = vec![Vec::new(); n];
    let mut per_run = 0;
    for _ in 0..replications {
        let targets = match form {
            SrForm::Dirac => sr_lambda_dirac(traj, rng)?,
            SrForm::Gmm { particles } => sr_lambda_gmm(traj, particles, rng)?,
        };
        for (pool, z) in pools.iter_mut().zip(&targets.targets) {
            per_run = z.size();
            pool.extend(z.to_components());
        }
    }
    let mut distances = Vec::with_capacity(n);
    for (t, pool) in pools.into_iter().enumerate() {
        let pooled = WeightedMixture::from_unnormalized(pool)?.compact();
        let exact = exact_lambda_mixture(traj, t)?.compact();
        distances.push(metrics::energy(&pooled.into(), &exact.into()));
    }
    let worst = distances.iter().copied().fold(0.0, f64::max);
    Ok((
        DistanceReport::new(worst, DistanceMethod::ClosedForm, Some(replications * per_run)),
        distances,
    ))
}
