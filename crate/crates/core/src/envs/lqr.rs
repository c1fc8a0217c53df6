use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ActionSpace, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::math;
use crate::nn::Action;
use crate::rng::{self, StreamRng};

const A: f64 = 1.0;
const B: f64 = 0.5;
const STATE_COST: f64 = 1.0;
const ACTION_COST: f64 = 0.1;
pub const LQR_ACTION_LIMIT: f64 = 2.0;
/// The state is clamped here so observations and rewards stay bounded.
pub const LQR_STATE_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LqrStart {
    /// `x₀ ~ U(−w, w)`.
    Uniform(f64),
    Fixed(f64),
}

/// Stationary gain `k` (act with `u = −k·x`) and cost-to-go coefficient `p`
/// for `x′ = a·x + b·u`, per-step cost `q·x² + r·u²` and discount `gamma`.
pub fn riccati_gain(a: f64, b: f64, q: f64, r: f64, gamma: f64) -> (f64, f64) {
    let mut p = q;
    for _ in 0..10_000 {
        let next = q + gamma * a * a * p - math::powi(gamma * a * b * p, 2) / (r + gamma * b * b * p);
        let done = (next - p).abs() <= 1e-14 * next.abs().max(1.0);
        p = next;
        if done {
            break;
        }
    }
    (gamma * a * b * p / (r + gamma * b * b * p), p)
}

/// Scalar linear system `x′ = x + 0.5·u + σ·ε` with cost `x² + 0.1·u²`,
/// actions clipped to `[−2, 2]`. The reward is the negated cost of the
/// current state and clipped action. Episodes are truncated at the horizon.
pub struct Lqr1d {
    noise: f64,
    start: LqrStart,
    x: f64,
    steps: usize,
    spec: EnvSpec,
    rng: StreamRng,
}

impl Lqr1d {
    pub fn new(noise: f64, seed: u64) -> Result<Self> {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::InvalidArgument("noise must be finite and non-negative".into()));
        }
        let max_cost = STATE_COST * LQR_STATE_LIMIT * LQR_STATE_LIMIT + ACTION_COST * LQR_ACTION_LIMIT * LQR_ACTION_LIMIT;
        let spec = EnvSpec {
            obs_dim: 1,
            action_space: ActionSpace::Continuous { dim: 1, low: -LQR_ACTION_LIMIT, high: LQR_ACTION_LIMIT },
            step_cap: 25,
            obs_range: (-LQR_STATE_LIMIT, LQR_STATE_LIMIT),
            reward_range: Some((-max_cost, 0.0)),
        };
        Ok(Self { noise, start: LqrStart::Uniform(1.0), x: 0.0, steps: 0, spec, rng: rng::stream(seed, 0) })
    }

    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        self.spec.step_cap = horizon;
        Ok(self)
    }

    pub fn with_start(mut self, start: LqrStart) -> Result<Self> {
        let ok = match start {
            LqrStart::Uniform(w) => w >= 0.0 && w <= LQR_STATE_LIMIT,
            LqrStart::Fixed(x) => x.abs() <= LQR_STATE_LIMIT,
        };
        if !ok {
            return Err(Error::InvalidArgument("start outside the state limit".into()));
        }
        self.start = start;
        Ok(self)
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Undiscounted Riccati gain for these dynamics.
    pub fn optimal_gain() -> f64 {
        riccati_gain(A, B, STATE_COST, ACTION_COST, 1.0).0
    }
}

impl Environment for Lqr1d {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        self.steps = 0;
        self.x = match self.start {
            LqrStart::Uniform(w) => self.rng.random_range(-1.0..=1.0) * w,
            LqrStart::Fixed(x) => x,
        };
        vec![self.x]
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        let u = match action {
            Action::Continuous(u) if u.len() == 1 && u[0].is_finite() => u[0].clamp(-LQR_ACTION_LIMIT, LQR_ACTION_LIMIT),
            Action::Continuous(_) => return Err(Error::InvalidArgument("expected one finite action value".into())),
            Action::Discrete(_) => return Err(Error::InvalidArgument("discrete action given to a continuous environment".into())),
        };
        let reward = -(STATE_COST * self.x * self.x + ACTION_COST * u * u);
        let eps: f64 = if self.noise > 0.0 { self.rng.sample(StandardNormal) } else { 0.0 };
        self.x = (A * self.x + B * u + self.noise * eps).clamp(-LQR_STATE_LIMIT, LQR_STATE_LIMIT);
        self.steps += 1;
        Ok(StepResult { obs: vec![self.x], reward, terminal: false, truncated: self.steps >= self.spec.step_cap })
    }
}
