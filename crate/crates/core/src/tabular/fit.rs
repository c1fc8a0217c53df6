//! Fitting per-state critics to SR(λ) targets from sampled rollouts.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::dist::{Component, DiracMixture, GaussianMixture, ValueDistribution};
use crate::error::{Error, Result};
use crate::flops::FlopCounter;
use crate::math;
use crate::metrics;
use crate::nn::heads::{gmm_from_raw, gmm_raw_grad, quantile_fractions};
use crate::nn::{check_lr, AdamState};
use crate::srlambda::{sr_lambda_dirac, sr_lambda_gmm, RewardTrajectory, StepEnd};

use super::{fixpoint, rollout, Policy, TabularMdp, ValueTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitLoss {
    HuberQuantile,
    EnergySamples,
    EnergyGmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Dirac { m: usize },
    Gmm { k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub loss: FitLoss,
    pub repr: Representation,
    pub steps: usize,
    /// Adam learning rate at step 0; decays geometrically to
    /// `lr·final_lr_fraction` at the last step.
    pub lr: f64,
    pub final_lr_fraction: f64,
    /// Rollouts per gradient step.
    pub batch: usize,
    pub lambda: f64,
    pub kappa: f64,
    /// SR(λ) particle count for Gaussian-mixture targets.
    pub particles: usize,
    pub start_state: usize,
    pub eval_state: usize,
    pub eval_every: usize,
}

impl FitConfig {
    pub fn new(loss: FitLoss, repr: Representation) -> Self {
        let particles = match repr {
            Representation::Gmm { k } => k,
            Representation::Dirac { m } => m,
        };
        Self {
            loss,
            repr,
            steps: 5000,
            lr: 0.02,
            final_lr_fraction: 0.05,
            batch: 16,
            lambda: 0.95,
            kappa: 1.0,
            particles,
            start_state: 0,
            eval_state: 0,
            eval_every: 50,
        }
    }

    fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        match (self.loss, self.repr) {
            (FitLoss::HuberQuantile | FitLoss::EnergySamples, Representation::Dirac { m }) if m >= 1 => {}
            (FitLoss::EnergyGmm, Representation::Gmm { k }) if k >= 1 => {}
            (loss, repr) => {
                return Err(Error::InvalidArgument(format!("loss {loss:?} cannot fit representation {repr:?}")));
            }
        }
        check_lr(self.lr)?;
        if self.steps == 0 || self.batch == 0 || self.eval_every == 0 || self.particles == 0 {
            return Err(Error::InvalidArgument("steps, batch, eval_every and particles must be >= 1".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::InvalidArgument("final_lr_fraction must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) || !(self.kappa > 0.0) {
            return Err(Error::InvalidArgument("lambda must be in [0, 1] and kappa > 0".into()));
        }
        if self.start_state >= mdp.n_states() || self.eval_state >= mdp.n_states() {
            return Err(Error::InvalidArgument("start or evaluation state out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub table: ValueTable,
    pub curve: Vec<CurvePoint>,
    pub truth: ValueDistribution,
    pub final_energy: f64,
}

struct Critic {
    repr: Representation,
    width: usize,
    params: Vec<f64>,
}

impl Critic {
    fn new<R: Rng + ?Sized>(repr: Representation, n_states: usize, rng: &mut R) -> Self {
        let width = match repr {
            Representation::Dirac { m } => m,
            Representation::Gmm { k } => 3 * k,
        };
        let mut params = vec![0.0; width * n_states];
        for chunk in params.chunks_mut(width) {
            match repr {
                Representation::Dirac { .. } => {
                    chunk.iter_mut().for_each(|p| *p = rng.random_range(-0.1..0.1));
                    math::sort_f64(chunk);
                }
                Representation::Gmm { k } => {
                    // Equal weights, spread means, variance 0.1.
                    for i in 0..k {
                        chunk[k + i] = rng.random_range(-0.5..0.5);
                        chunk[2 * k + i] = math::ln(math::exp(0.1) - 1.0);
                    }
                }
            }
        }
        Self { repr, width, params }
    }

    fn slice(&self, x: usize) -> &[f64] {
        &self.params[x * self.width..(x + 1) * self.width]
    }

    fn dist(&self, mdp: &TabularMdp, x: usize) -> Result<ValueDistribution> {
        Ok(match self.repr {
            Representation::Dirac { m } if mdp.is_terminal(x) => DiracMixture::constant(0.0, m).into(),
            Representation::Gmm { .. } if mdp.is_terminal(x) => GaussianMixture::single(0.0, 0.0).into(),
            Representation::Dirac { .. } => DiracMixture::new(self.slice(x).to_vec())?.into(),
            Representation::Gmm { .. } => gmm_from_raw(self.slice(x), &mut FlopCounter::new()).into(),
        })
    }
}

/// Loss of one critic entry against one target and its gradient with respect
/// to that entry's parameters.
fn loss_grad(cfg: &FitConfig, params: &[f64], target: &ValueDistribution, ops: &mut FlopCounter) -> Result<(f64, Vec<f64>)> {
    Ok(match cfg.loss {
        FitLoss::HuberQuantile => {
            let taus = quantile_fractions(params.len());
            let preds: Vec<(f64, f64)> = params.iter().copied().zip(taus).collect();
            let atoms = target.as_dirac().map(DiracMixture::atoms).unwrap_or(&[]);
            metrics::huber_quantile_loss_grad(atoms, &preds, cfg.kappa, ops)
        }
        FitLoss::EnergySamples => {
            let atoms = target.as_dirac().map(DiracMixture::atoms).unwrap_or(&[]);
            metrics::energy_samples_pairwise(params, atoms, ops)
        }
        FitLoss::EnergyGmm => {
            let critic = gmm_from_raw(params, ops);
            let (loss, g) = metrics::energy_gmm_grad(critic.components(), &target.to_components(), ops);
            (loss, gmm_raw_grad(params, &g, ops))
        }
    })
}

/// Fits one distribution per state by Adam on SR(λ) targets built from
/// rollouts of `pi` from `cfg.start_state`, recording the energy distance of
/// the evaluation state's fit to the exact return law.
pub fn fit_tabular_critic<R: Rng + ?Sized>(mdp: &TabularMdp, pi: &Policy, cfg: &FitConfig, rng: &mut R) -> Result<FitResult> {
    cfg.validate(mdp)?;
    let (exact, _) = fixpoint(mdp, pi, false, 1e-12, 10_000)?;
    let truth = exact.state(cfg.eval_state).clone();
    let n = mdp.n_states();
    let mut critic = Critic::new(cfg.repr, n, rng);
    let mut adam = AdamState::new(critic.params.len(), cfg.lr);
    let mut curve = Vec::new();
    let mut ops = FlopCounter::new();
    for step in 0..cfg.steps {
        let mut grads = vec![0.0; critic.params.len()];
        let mut visits = vec![0usize; n];
        let mut total = 0.0;
        let mut count = 0usize;
        for _ in 0..cfg.batch {
            let episode = rollout(mdp, pi, cfg.start_state, rng)?;
            if episode.is_empty() {
                continue;
            }
            let values = episode.iter().map(|t| critic.dist(mdp, t.state)).collect::<Result<Vec<_>>>()?;
            let ends =
                episode.iter().map(|t| if mdp.is_terminal(t.next) { StepEnd::Terminal } else { StepEnd::Continue }).collect();
            let bootstrap = critic.dist(mdp, episode[episode.len() - 1].next)?;
            let traj = RewardTrajectory::with_ends(
                episode.iter().map(|t| t.reward).collect(),
                ends,
                values,
                bootstrap,
                mdp.gamma(),
                cfg.lambda,
            )?;
            let targets = match cfg.repr {
                Representation::Dirac { .. } => sr_lambda_dirac(&traj, rng)?,
                Representation::Gmm { .. } => sr_lambda_gmm(&traj, cfg.particles, rng)?,
            };
            for (t, target) in episode.iter().zip(&targets.targets) {
                let (loss, g) = loss_grad(cfg, critic.slice(t.state), target, &mut ops)?;
                let w = critic.width;
                grads[t.state * w..(t.state + 1) * w].iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                visits[t.state] += 1;
                total += loss;
                count += 1;
            }
        }
        let mean_loss = total / count.max(1) as f64;
        if !mean_loss.is_finite() || mean_loss > 1e6 {
            return Err(Error::Divergence(format!("step {step}: mean loss {mean_loss}")));
        }
        for (x, &v) in visits.iter().enumerate() {
            if v > 1 {
                let w = critic.width;
                grads[x * w..(x + 1) * w].iter_mut().for_each(|g| *g /= v as f64);
            }
        }
        adam.lr = cfg.lr * libm::pow(cfg.final_lr_fraction, step as f64 / cfg.steps as f64);
        adam.step(&mut critic.params, &grads)?;
        if step % cfg.eval_every == 0 || step + 1 == cfg.steps {
            let fitted = critic.dist(mdp, cfg.eval_state)?;
            curve.push(CurvePoint { step, energy: metrics::energy(&fitted, &truth) });
        }
    }
    let entries = (0..n).map(|x| critic.dist(mdp, x)).collect::<Result<Vec<_>>>()?;
    let table = ValueTable::per_state(entries)?;
    let final_energy = metrics::energy(table.state(cfg.eval_state), &truth);
    Ok(FitResult { table, curve, truth, final_energy })
}

/// Samples `n` values from the distribution implied by treating `atoms` as
/// exact quantiles at `τ_i = (2i − 1)/(2m)`: the quantile function is linear
/// between fractions and flat beyond the outermost ones.
pub fn impute_from_quantiles<R: Rng + ?Sized>(atoms: &[f64], n: usize, rng: &mut R) -> Result<DiracMixture> {
    if atoms.is_empty() || n == 0 {
        return Err(Error::InvalidArgument("imputation needs atoms and a sample count".into()));
    }
    let mut q = atoms.to_vec();
    math::sort_f64(&mut q);
    let taus = quantile_fractions(q.len());
    let m = q.len();
    let samples = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u <= taus[0] {
                q[0]
            } else if u >= taus[m - 1] {
                q[m - 1]
            } else {
                let i = (libm::floor(u * m as f64 - 0.5) as usize).min(m - 2);
                let f = (u - taus[i]) / (taus[i + 1] - taus[i]);
                q[i] + f * (q[i + 1] - q[i])
            }
        })
        .collect();
    DiracMixture::new(samples)
}

/// Weight, mean and pooled standard deviation of the components on one side of zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cluster {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Splits a distribution's components by the sign of their means and
/// summarizes each side: `[negative, non-negative]`.
pub fn mode_clusters(d: &ValueDistribution) -> [Cluster; 2] {
    let comps = d.to_components();
    let side = |neg: bool| {
        let part: Vec<&Component> = comps.iter().filter(|c| (c.mean < 0.0) == neg).collect();
        let w: f64 = part.iter().map(|c| c.weight).sum();
        if w == 0.0 {
            return Cluster { weight: 0.0, mean: f64::NAN, std: f64::NAN };
        }
        let mean = part.iter().map(|c| c.weight * c.mean).sum::<f64>() / w;
        let second = part.iter().map(|c| c.weight * (c.variance + c.mean * c.mean)).sum::<f64>() / w;
        Cluster { weight: w, mean, std: math::sqrt((second - mean * mean).max(0.0)) }
    };
    [side(true), side(false)]
}
