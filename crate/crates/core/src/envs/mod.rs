//! Small environments for both action-space types, and a runner that steps
//! several copies in lockstep.
//!
//! Episodes end in one of two ways. `terminal` means the process stopped and
//! the return beyond this step is zero. `truncated` means the step cap cut the
//! episode short, so targets should bootstrap from the observation stored in
//! [`RolloutStep::final_obs`].

mod grid;
mod lqr;

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::Action;
use crate::rng::{self, StreamRng};
use crate::tabular::TabularMdp;

pub use grid::{GridLayout, Gridworld};
pub use lqr::{riccati_gain, Lqr1d, LqrStart, LQR_ACTION_LIMIT, LQR_STATE_LIMIT};

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { dim: usize, low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub step_cap: usize,
    /// Every observation coordinate lies in this interval.
    pub obs_range: (f64, f64),
    /// `None` when rewards are unbounded (Gaussian reward noise).
    pub reward_range: Option<(f64, f64)>,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.step_cap == 0 {
            return Err(Error::InvalidArgument("observation dimension and step cap must be positive".into()));
        }
        match self.action_space {
            ActionSpace::Discrete(0) => Err(Error::InvalidArgument("no actions".into())),
            ActionSpace::Continuous { dim, low, high } if dim == 0 || !low.is_finite() || !high.is_finite() || low >= high => {
                Err(Error::InvalidArgument("continuous action bounds must be finite and ordered".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

pub trait Environment {
    fn spec(&self) -> &EnvSpec;
    /// Starts a new episode and returns its first observation.
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<StepResult>;
}

pub(crate) fn discrete_action(action: &Action, n: usize) -> Result<usize> {
    match action {
        Action::Discrete(a) if *a < n => Ok(*a),
        Action::Discrete(a) => Err(Error::InvalidArgument(format!("action {a} out of range for {n} actions"))),
        Action::Continuous(_) => Err(Error::InvalidArgument("continuous action given to a discrete environment".into())),
    }
}

pub(crate) fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// A tabular MDP exposed through one-hot observations.
pub struct TabularEnv {
    mdp: TabularMdp,
    start: usize,
    state: usize,
    steps: usize,
    spec: EnvSpec,
    rng: StreamRng,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp, start: usize, step_cap: usize, seed: u64) -> Result<Self> {
        if start >= mdp.n_states() || mdp.is_terminal(start) {
            return Err(Error::InvalidArgument("start must be a non-terminal state".into()));
        }
        let spec = EnvSpec {
            obs_dim: mdp.n_states(),
            action_space: ActionSpace::Discrete(mdp.n_actions()),
            step_cap,
            obs_range: (0.0, 1.0),
            reward_range: None,
        };
        spec.validate()?;
        Ok(Self { mdp, start, state: start, steps: 0, spec, rng: rng::stream(seed, 0) })
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

impl Environment for TabularEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = self.start;
        self.steps = 0;
        one_hot(self.mdp.n_states(), self.state)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        let a = discrete_action(action, self.mdp.n_actions())?;
        let (reward, next) = self.mdp.sample_step(self.state, a, &mut self.rng);
        self.state = next;
        self.steps += 1;
        let terminal = self.mdp.is_terminal(next);
        Ok(StepResult {
            obs: one_hot(self.mdp.n_states(), next),
            reward,
            terminal,
            truncated: !terminal && self.steps >= self.spec.step_cap,
        })
    }
}

/// The five-state chain: four zero-reward steps, then `±1` with equal
/// probability, then `N(0, 0.1²)`. Every episode lasts exactly five steps.
pub fn five_state_env(seed: u64) -> TabularEnv {
    TabularEnv::new(TabularMdp::five_state(1.0).expect("valid chain"), 0, 16, seed).expect("valid start")
}

/// Environment choice as it appears in run configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvKind {
    FiveState,
    Gridworld { size: usize, layout: GridLayout, slip: f64, step_cap: Option<usize> },
    Lqr1d { noise: f64, horizon: usize },
}

impl EnvKind {
    pub fn build(&self, seed: u64) -> Result<Box<dyn Environment + Send>> {
        Ok(match self {
            EnvKind::FiveState => Box::new(five_state_env(seed)),
            EnvKind::Gridworld { size, layout, slip, step_cap } => {
                let mut g = Gridworld::new(*size, *layout, *slip, seed)?;
                if let Some(cap) = step_cap {
                    g = g.with_step_cap(*cap)?;
                }
                Box::new(g)
            }
            EnvKind::Lqr1d { noise, horizon } => Box::new(Lqr1d::new(*noise, seed)?.with_horizon(*horizon)?),
        })
    }

    /// `count` copies with independent seed streams derived from `seed`.
    pub fn build_many(&self, seed: u64, count: usize) -> Result<Vec<Box<dyn Environment + Send>>> {
        (0..count).map(|i| self.build(rng::derive_seed(seed, i as u64))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep<T> {
    pub obs: Vec<f64>,
    pub action: Action,
    /// Whatever the policy returned alongside the action (log-probability,
    /// critic output, ...).
    pub extra: T,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
    /// The observation the cap cut off; set only when `truncated`.
    pub final_obs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub ret: f64,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvRollout<T> {
    pub steps: Vec<RolloutStep<T>>,
    /// Observation after the last recorded step, for bootstrapping.
    pub next_obs: Vec<f64>,
    pub episodes: Vec<EpisodeStats>,
}

/// Steps a set of environments with a shared spec, resetting each as its
/// episodes end.
pub struct VectorRunner {
    envs: Vec<Box<dyn Environment + Send>>,
    obs: Vec<Vec<f64>>,
    running: Vec<EpisodeStats>,
}

impl VectorRunner {
    pub fn new(mut envs: Vec<Box<dyn Environment + Send>>) -> Result<Self> {
        let first = envs.first().ok_or_else(|| Error::InvalidArgument("no environments".into()))?.spec().clone();
        if envs.iter().any(|e| e.spec() != &first) {
            return Err(Error::InvalidArgument("environments have different specs".into()));
        }
        let obs = envs.iter_mut().map(|e| e.reset()).collect();
        let running = vec![EpisodeStats { ret: 0.0, len: 0 }; envs.len()];
        Ok(Self { envs, obs, running })
    }

    pub fn spec(&self) -> &EnvSpec {
        self.envs[0].spec()
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    /// Current observation of each environment.
    pub fn observations(&self) -> &[Vec<f64>] {
        &self.obs
    }

    /// Runs `steps` steps in every environment. `policy(env_index, obs)`
    /// picks the action.
    pub fn rollout<T, F>(&mut self, steps: usize, mut policy: F) -> Result<Vec<EnvRollout<T>>>
    where
        F: FnMut(usize, &[f64]) -> Result<(Action, T)>,
    {
        let mut out: Vec<EnvRollout<T>> = (0..self.envs.len())
            .map(|_| EnvRollout { steps: Vec::with_capacity(steps), next_obs: Vec::new(), episodes: Vec::new() })
            .collect();
        for _ in 0..steps {
            for (i, env) in self.envs.iter_mut().enumerate() {
                let (action, extra) = policy(i, &self.obs[i])?;
                let res = env.step(&action)?;
                if !res.reward.is_finite() {
                    return Err(Error::NonFinite("environment reward".into()));
                }
                let run = &mut self.running[i];
                run.ret += res.reward;
                run.len += 1;
                let ended = res.terminal || res.truncated;
                let next = if ended {
                    out[i].episodes.push(*run);
                    *run = EpisodeStats { ret: 0.0, len: 0 };
                    env.reset()
                } else {
                    res.obs.clone()
                };
                let obs = core::mem::replace(&mut self.obs[i], next);
                out[i].steps.push(RolloutStep {
                    obs,
                    action,
                    extra,
                    reward: res.reward,
                    terminal: res.terminal,
                    truncated: res.truncated && !res.terminal,
                    final_obs: (res.truncated && !res.terminal).then_some(res.obs),
                });
            }
        }
        for (o, r) in self.obs.iter().zip(out.iter_mut()) {
            r.next_obs = o.clone();
        }
        Ok(out)
    }
}

/// Plays whole episodes with `policy` and returns their undiscounted returns.
pub fn evaluate<F>(env: &mut dyn Environment, episodes: usize, mut policy: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Action>,
{
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut ret = 0.0;
        loop {
            let res = env.step(&policy(&obs)?)?;
            ret += res.reward;
            if res.terminal || res.truncated {
                break;
            }
            obs = res.obs;
        }
        returns.push(ret);
    }
    Ok(returns)
}
