use alloc::vec::Vec;

use rand::Rng;

use super::train::{update_minibatch, Sample};
use super::{policy_kind, TrainConfig, Variant};
use crate::dist::{DiracMixture, GaussianMixture, ValueDistribution};
use crate::envs::EnvSpec;
use crate::error::Result;
use crate::flops::{FlopCounter, Phase};
use crate::nn::{Activation, AdamState, NetSpec, Network};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct FlopReport {
    pub variant: Variant,
    pub parameters: usize,
    /// One forward pass for one observation, including the policy head.
    pub inference: u64,
    /// One minibatch update: forward, losses, backward, clipping, Adam.
    pub update: u64,
}

/// Counts the cost of one inference pass and one minibatch update for the
/// configured variant on observations of `env`'s shape. Inputs are synthetic
/// but fixed, so the counts are deterministic.
pub fn count_flops(cfg: &TrainConfig, env: &EnvSpec) -> Result<FlopReport> {
    cfg.validate()?;
    let spec = NetSpec {
        input: env.obs_dim,
        hidden: cfg.hidden.clone(),
        activation: Activation::Tanh,
        policy: policy_kind(&env.action_space),
        value: cfg.value_head(),
    };
    let mut g = rng::stream(cfg.seed, 0xF10);
    let mut net = Network::new(spec, &mut g)?;
    let obs = |g: &mut rng::StreamRng| (0..env.obs_dim).map(|_| g.random_range(-1.0..1.0)).collect::<Vec<f64>>();

    let mut ops = FlopCounter::new();
    let x = obs(&mut g);
    let out = net.infer(&x, &mut ops)?;
    net.policy_dist(&out, &mut ops);

    let mut samples = Vec::with_capacity(cfg.minibatch);
    for _ in 0..cfg.minibatch {
        let x = obs(&mut g);
        let out = net.infer(&x, &mut FlopCounter::new())?;
        let dist = net.policy_dist(&out, &mut FlopCounter::new());
        let action = dist.sample(&mut g);
        let target = match cfg.variant {
            Variant::PpoScalar => None,
            Variant::Gmac => {
                let pairs: Vec<(f64, f64)> =
                    (0..cfg.sr_particles).map(|_| (g.random_range(-1.0..1.0), g.random_range(0.05..0.5))).collect();
                Some(ValueDistribution::Gmm(GaussianMixture::equal_weight(&pairs)?))
            }
            Variant::Iqac | Variant::IqacE => {
                let atoms = (0..cfg.quantiles).map(|_| g.random_range(-1.0..1.0)).collect();
                Some(ValueDistribution::Dirac(DiracMixture::new(atoms)?))
            }
        };
        samples.push(Sample {
            obs: x,
            old_log_prob: dist.log_prob(&action),
            action,
            advantage: g.random_range(-1.0..1.0),
            old_value: 0.0,
            ret: g.random_range(-1.0..1.0),
            target,
        });
    }
    let mut adam = AdamState::new(net.parameter_count(), cfg.lr);
    let batch: Vec<&Sample> = samples.iter().collect();
    ops.set_phase(Phase::Update);
    update_minibatch(cfg, &mut net, &mut adam, &batch, &mut ops)?;
    Ok(FlopReport {
        variant: cfg.variant,
        parameters: net.parameter_count(),
        inference: ops.flops(Phase::Inference),
        update: ops.flops(Phase::Update),
    })
}

/// Analytic extra cost of a `k`-component GMM critic, with `m`-particle
/// targets, over a scalar critic, for one minibatch of `batch` samples on a
/// torso of final width `width`.
///
/// Per sample:
/// - each of the `3k − 1` extra value outputs costs `2w + 1` forward,
///   `2w + 1` for its weight and bias gradients and `2w` for the input
///   gradient;
/// - building the mixture costs `9k` and pulling the gradient back `15k`;
/// - the closed-form loss evaluates `km + k² + m²` folded-normal terms at 24
///   FLOPs each, plus `8k + 4` to combine, instead of the scalar loss's 11.
///
/// Per batch, each extra parameter costs 16 in Adam and 3 in norm clipping.
pub fn gmm_head_overhead(k: usize, m: usize, width: usize, batch: usize) -> u64 {
    let (k, m, w, b) = (k as u64, m as u64, width as u64, batch as u64);
    let extra_out = 3 * k - 1;
    let layer = extra_out * (6 * w + 2) + extra_out;
    let head = 24 * k;
    let loss = (24 * (k * m + k * k + m * m) + 8 * k + 4).saturating_sub(11);
    let extra_params = extra_out * (w + 1);
    b * (layer + head + loss) + extra_params * 19
}
