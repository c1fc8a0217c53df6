use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{
    critic_distribution, gae_with_rewards, intrinsic_reward_cramer, normalize, policy_kind, ppo_clip_loss,
    RunningScale, TrainConfig, Trajectory, Variant,
};
use crate::dist::ValueDistribution;
use crate::envs::{EnvKind, EnvSpec, RolloutStep, VectorRunner};
use crate::error::{Error, Result};
use crate::flops::{FlopCounter, Phase};
use crate::metrics;
use crate::nn::{clip_grad_norm, heads, Action, Activation, AdamState, NetSpec, Network, StepOutcome, ValueHeadKind};
use crate::rng::{self, StreamRng};
use crate::srlambda::{sr_lambda_dirac, sr_lambda_gmm, StepEnd};

/// Completed-episode returns kept for the reported running mean.
const RETURN_WINDOW: usize = 100;

/// One record per training iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: u64,
    /// Environment steps taken so far, across all environments.
    pub frames: u64,
    /// Episodes that finished during this iteration.
    pub episodes: usize,
    /// Mean undiscounted return of the last completed episodes (up to 100).
    pub mean_return: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Mean gradient norm before clipping.
    pub grad_norm: f64,
    /// Optimizer steps skipped because of a non-finite gradient.
    pub skipped_updates: u64,
    /// Mean normalized intrinsic reward; 0 when disabled.
    pub intrinsic_reward: f64,
    pub flops_inference: u64,
    pub flops_update: u64,
}

/// A single training sample after targets and advantages are fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub action: Action,
    pub old_log_prob: f64,
    pub advantage: f64,
    /// Critic mean when the sample was collected.
    pub old_value: f64,
    /// `advantage + old_value`; the scalar critic's target.
    pub ret: f64,
    /// SR(λ) target; `None` for the scalar critic.
    pub target: Option<ValueDistribution>,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct MinibatchStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub skipped: bool,
}

/// Gradient of the per-sample value loss with respect to the raw value-head
/// outputs, and the loss itself.
fn value_loss_grad(
    cfg: &TrainConfig,
    raw: &[f64],
    sample: &Sample,
    taus: &[f64],
    ops: &mut FlopCounter,
) -> Result<(f64, Vec<f64>)> {
    let need_target = || sample.target.as_ref().ok_or_else(|| Error::InvalidArgument("missing SR(λ) target".into()));
    Ok(match cfg.variant {
        Variant::PpoScalar => {
            // Clipped value loss 0.5·max((v − R)², (v_clip − R)²).
            let v = raw[0];
            let dv = v - sample.old_value;
            let v_clip = sample.old_value + dv.clamp(-cfg.clip, cfg.clip);
            let (e1, e2) = (v - sample.ret, v_clip - sample.ret);
            ops.arith(8);
            ops.compare(3);
            if e1 * e1 >= e2 * e2 {
                (0.5 * e1 * e1, vec![e1])
            } else {
                let inside = dv.abs() < cfg.clip;
                (0.5 * e2 * e2, vec![if inside { e2 } else { 0.0 }])
            }
        }
        Variant::Gmac => {
            let critic = heads::gmm_from_raw(raw, ops);
            let target = need_target()?.to_components();
            let (loss, g) = metrics::energy_gmm_grad(critic.components(), &target, ops);
            (loss, heads::gmm_raw_grad(raw, &g, ops))
        }
        Variant::Iqac => {
            let atoms = need_target()?.as_dirac().map(|d| d.atoms()).unwrap_or(&[]);
            let preds: Vec<(f64, f64)> = raw.iter().copied().zip(taus.iter().copied()).collect();
            metrics::huber_quantile_loss_grad(atoms, &preds, cfg.huber_kappa, ops)
        }
        Variant::IqacE => {
            let atoms = need_target()?.as_dirac().map(|d| d.atoms()).unwrap_or(&[]);
            metrics::energy_samples_pairwise(raw, atoms, ops)
        }
    })
}

/// The minibatch objective (clipped surrogate, entropy bonus and weighted
/// value loss) and its gradient with respect to every network parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grads: Vec<f64>,
}

pub fn minibatch_objective(cfg: &TrainConfig, net: &Network, batch: &[&Sample], ops: &mut FlopCounter) -> Result<Objective> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let b = batch.len() as f64;
    let taus = match net.spec().value {
        ValueHeadKind::Quantile { m } => heads::quantile_fractions(m),
        _ => Vec::new(),
    };
    let advs: Vec<f64> = batch.iter().map(|s| s.advantage).collect();
    let advs = if cfg.normalize_advantages && batch.len() > 1 {
        ops.arith(4 * advs.len() as u64 + 2);
        ops.transcendental(1);
        normalize(&advs)
    } else {
        advs
    };
    let mut passes = Vec::with_capacity(batch.len());
    let mut new_lp = Vec::with_capacity(batch.len());
    for s in batch {
        let (out, tape) = net.forward(&s.obs, ops)?;
        let dist = net.policy_dist(&out, ops);
        new_lp.push(dist.log_prob(&s.action));
        passes.push((out, tape, dist));
    }
    let old_lp: Vec<f64> = batch.iter().map(|s| s.old_log_prob).collect();
    let clip = ppo_clip_loss(&new_lp, &old_lp, &advs, cfg.clip)?;
    // ratio: sub + exp; surrogate and bound: 2 muls; min: compare; accumulate
    ops.arith(5 * batch.len() as u64);
    ops.transcendental(batch.len() as u64);
    ops.compare(batch.len() as u64);

    let mut grads = vec![0.0; net.parameter_count()];
    let mut value_loss = 0.0;
    let mut entropy = 0.0;
    for (i, ((out, tape, dist), s)) in passes.into_iter().zip(batch).enumerate() {
        entropy += dist.entropy();
        let (vl, mut d_value) = value_loss_grad(cfg, &out.value, s, &taus, ops)?;
        value_loss += vl;
        let scale = cfg.value_coef / b;
        d_value.iter_mut().for_each(|g| *g *= scale);
        ops.arith(d_value.len() as u64);
        let (d_policy, d_log_std) = dist.pullback(&s.action, clip.grad[i], -cfg.entropy_coef / b, net.log_std(), ops);
        net.backward(tape, &d_policy, &d_value, &d_log_std, &mut grads, ops)?;
    }
    value_loss /= b;
    entropy /= b;
    let total = clip.loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
    Ok(Objective { total, policy_loss: clip.loss, value_loss, entropy, clip_fraction: clip.clip_fraction, grads })
}

/// One optimizer step on a minibatch: objective gradient, norm clipping, Adam.
pub(crate) fn update_minibatch(
    cfg: &TrainConfig,
    net: &mut Network,
    adam: &mut AdamState,
    batch: &[&Sample],
    ops: &mut FlopCounter,
) -> Result<MinibatchStats> {
    let Objective { total, policy_loss, value_loss, entropy, clip_fraction, mut grads } =
        minibatch_objective(cfg, net, batch, ops)?;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss {total} (policy {policy_loss}, value {value_loss}, entropy {entropy}) at optimizer step {}",
            adam.step
        )));
    }
    let grad_norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
    ops.mul_add(grads.len() as u64);
    ops.arith(grads.len() as u64 + 1);
    ops.transcendental(1);
    let outcome = adam.step_counted(net.params_mut(), &grads, ops)?;
    Ok(MinibatchStats {
        policy_loss,
        value_loss,
        entropy,
        clip_fraction,
        grad_norm,
        skipped: matches!(outcome, StepOutcome::SkippedNonFinite { .. }),
    })
}

struct StepExtra {
    log_prob: f64,
    value: Vec<f64>,
}

/// Actor-critic learner bound to a set of environments.
pub struct Agent {
    config: TrainConfig,
    env_spec: EnvSpec,
    net: Network,
    adam: AdamState,
    runner: VectorRunner,
    act_rng: StreamRng,
    shuffle_rng: StreamRng,
    sr_rng: StreamRng,
    intrinsic: RunningScale,
    iteration: u64,
    frames: u64,
    recent: VecDeque<f64>,
}

impl Agent {
    pub fn new(config: TrainConfig, env: &EnvKind) -> Result<Self> {
        config.validate()?;
        let envs = env.build_many(rng::derive_seed(config.seed, 2), config.envs)?;
        let runner = VectorRunner::new(envs)?;
        let env_spec = runner.spec().clone();
        let spec = NetSpec {
            input: env_spec.obs_dim,
            hidden: config.hidden.clone(),
            activation: Activation::Tanh,
            policy: policy_kind(&env_spec.action_space),
            value: config.value_head(),
        };
        let net = Network::new(spec, &mut rng::stream(config.seed, 1))?;
        let adam = AdamState::new(net.parameter_count(), config.lr);
        Ok(Self {
            env_spec,
            net,
            adam,
            runner,
            act_rng: rng::stream(config.seed, 3),
            shuffle_rng: rng::stream(config.seed, 4),
            sr_rng: rng::stream(config.seed, 5),
            intrinsic: RunningScale::new(),
            iteration: 0,
            frames: 0,
            recent: VecDeque::with_capacity(RETURN_WINDOW),
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn env_spec(&self) -> &EnvSpec {
        &self.env_spec
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.adam
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Replaces the learned state, e.g. from a checkpoint.
    pub fn restore(&mut self, net: Network, adam: AdamState, iteration: u64) -> Result<()> {
        if net.spec() != self.net.spec() || adam.len() != net.parameter_count() {
            return Err(Error::InvalidArgument("checkpoint does not match this agent".into()));
        }
        self.net = net;
        self.adam = adam;
        self.iteration = iteration;
        Ok(())
    }

    /// The action the current policy considers most likely.
    pub fn greedy_action(&self, obs: &[f64]) -> Result<Action> {
        greedy_action(&self.net, obs)
    }

    /// Critic distribution for an observation.
    pub fn critic(&self, obs: &[f64]) -> Result<ValueDistribution> {
        let out = self.net.infer(obs, &mut FlopCounter::new())?;
        critic_distribution(self.net.spec().value, &out.value, &mut FlopCounter::new())
    }

    fn collect(&mut self, ops: &mut FlopCounter) -> Result<(Vec<Trajectory>, usize)> {
        let net = &self.net;
        let act_rng = &mut self.act_rng;
        let rollouts = self.runner.rollout(self.config.rollout_steps, |_, obs| {
            let out = net.infer(obs, ops)?;
            let dist = net.policy_dist(&out, ops);
            let action = dist.sample(act_rng);
            let log_prob = dist.log_prob(&action);
            Ok((action, StepExtra { log_prob, value: out.value }))
        })?;
        let head = net.spec().value;
        let mut episodes = 0;
        let mut trajectories = Vec::with_capacity(rollouts.len());
        for r in rollouts {
            episodes += r.episodes.len();
            for e in &r.episodes {
                if self.recent.len() == RETURN_WINDOW {
                    self.recent.pop_front();
                }
                self.recent.push_back(e.ret);
            }
            let bootstrap = critic_distribution(head, &net.infer(&r.next_obs, ops)?.value, ops)?;
            let n = r.steps.len();
            let mut tr = Trajectory {
                obs: Vec::with_capacity(n),
                actions: Vec::with_capacity(n),
                rewards: Vec::with_capacity(n),
                ends: Vec::with_capacity(n),
                log_probs: Vec::with_capacity(n),
                critic: Vec::with_capacity(n),
                bootstrap,
            };
            for RolloutStep { obs, action, extra, reward, terminal, final_obs, .. } in r.steps {
                let end = match (terminal, final_obs) {
                    (true, _) => StepEnd::Terminal,
                    (false, Some(cut)) => StepEnd::Truncated(critic_distribution(head, &net.infer(&cut, ops)?.value, ops)?),
                    (false, None) => StepEnd::Continue,
                };
                tr.critic.push(critic_distribution(head, &extra.value, ops)?);
                tr.obs.push(obs);
                tr.actions.push(action);
                tr.rewards.push(reward);
                tr.ends.push(end);
                tr.log_probs.push(extra.log_prob);
            }
            tr.validate()?;
            trajectories.push(tr);
        }
        Ok((trajectories, episodes))
    }

    /// Collects one rollout from every environment, computes frozen targets
    /// and advantages, then runs the configured epochs of minibatch updates.
    pub fn train_iteration(&mut self) -> Result<IterationMetrics> {
        let cfg = self.config.clone();
        let mut ops = FlopCounter::new();
        ops.set_phase(Phase::Inference);
        let (trajectories, episodes) = self.collect(&mut ops)?;

        let mut samples = Vec::with_capacity(cfg.envs * cfg.rollout_steps);
        let mut intrinsic_sum = 0.0;
        for tr in trajectories {
            let targets = match cfg.variant {
                Variant::PpoScalar => None,
                Variant::Gmac => Some(sr_lambda_gmm(&tr.reward_trajectory(cfg.gamma, cfg.lambda)?, cfg.sr_particles, &mut self.sr_rng)?.targets),
                Variant::Iqac | Variant::IqacE => Some(sr_lambda_dirac(&tr.reward_trajectory(cfg.gamma, cfg.lambda)?, &mut self.sr_rng)?.targets),
            };
            let rewards = match (&targets, cfg.intrinsic_coef > 0.0) {
                (Some(t), true) => {
                    let bonus = intrinsic_reward_cramer(&tr.critic, t, &mut self.intrinsic)?;
                    intrinsic_sum += bonus.iter().sum::<f64>();
                    tr.rewards.iter().zip(&bonus).map(|(r, b)| r + cfg.intrinsic_coef * b).collect()
                }
                _ => tr.rewards.clone(),
            };
            let adv = gae_with_rewards(&tr, &rewards, cfg.gamma, cfg.lambda).advantages;
            let values = tr.values();
            let mut targets = targets.map(Vec::into_iter);
            for (t, ((obs, action), old_log_prob)) in tr.obs.into_iter().zip(tr.actions).zip(tr.log_probs).enumerate() {
                samples.push(Sample {
                    obs,
                    action,
                    old_log_prob,
                    advantage: adv[t],
                    old_value: values[t],
                    ret: adv[t] + values[t],
                    target: targets.as_mut().and_then(Iterator::next),
                });
            }
        }

        ops.set_phase(Phase::Update);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut agg = MinibatchStats::default();
        let mut batches = 0usize;
        let mut skipped = 0u64;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut self.shuffle_rng);
            for chunk in order.chunks(cfg.minibatch) {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
                let st = update_minibatch(&cfg, &mut self.net, &mut self.adam, &batch, &mut ops).map_err(|e| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!("iteration {}: {msg}", self.iteration + 1)),
                    other => other,
                })?;
                agg.policy_loss += st.policy_loss;
                agg.value_loss += st.value_loss;
                agg.entropy += st.entropy;
                agg.clip_fraction += st.clip_fraction;
                agg.grad_norm += st.grad_norm;
                skipped += st.skipped as u64;
                batches += 1;
            }
        }
        let nb = batches as f64;
        self.iteration += 1;
        self.frames += samples.len() as u64;
        Ok(IterationMetrics {
            iteration: self.iteration,
            frames: self.frames,
            episodes,
            mean_return: (!self.recent.is_empty()).then(|| self.recent.iter().sum::<f64>() / self.recent.len() as f64),
            policy_loss: agg.policy_loss / nb,
            value_loss: agg.value_loss / nb,
            entropy: agg.entropy / nb,
            clip_fraction: agg.clip_fraction / nb,
            grad_norm: agg.grad_norm / nb,
            skipped_updates: skipped,
            intrinsic_reward: intrinsic_sum / samples.len() as f64,
            flops_inference: ops.flops(Phase::Inference),
            flops_update: ops.flops(Phase::Update),
        })
    }
}

/// The mode of a network's policy at `obs`.
pub fn greedy_action(net: &Network, obs: &[f64]) -> Result<Action> {
    let mut ops = FlopCounter::new();
    let out = net.infer(obs, &mut ops)?;
    Ok(net.policy_dist(&out, &mut ops).mode())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::ActionSpace;
    use crate::nn::PolicyKind;

    #[test]
    fn non_finite_loss_aborts_the_update() {
        let cfg = TrainConfig::defaults(Variant::PpoScalar, &ActionSpace::Discrete(2));
        let spec = NetSpec { input: 2, hidden: vec![4], activation: Activation::Tanh, policy: PolicyKind::Discrete { actions: 2 }, value: ValueHeadKind::Scalar };
        let mut net = Network::new(spec, &mut rng::stream(0, 0)).unwrap();
        let before = net.params().to_vec();
        let mut adam = AdamState::new(net.parameter_count(), 1e-3);
        let s = Sample {
            obs: vec![0.5, -0.5],
            action: Action::Discrete(1),
            old_log_prob: -0.7,
            advantage: 1.0,
            old_value: 0.0,
            ret: f64::NAN,
            target: None,
        };
        let err = update_minibatch(&cfg, &mut net, &mut adam, &[&s], &mut FlopCounter::new()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(net.params(), before.as_slice());
    }
}
