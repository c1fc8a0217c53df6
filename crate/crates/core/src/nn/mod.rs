//! A small actor-critic MLP: shared torso, a policy head and a value head,
//! with hand-written reverse-mode gradients.

mod adam;
pub mod heads;

pub use adam::{clip_grad_norm, AdamState, StepOutcome};
pub(crate) use adam::check_lr;
pub use heads::{Action, PolicyDist, PolicyKind, ValueHeadKind};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::flops::FlopCounter;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => math::tanh(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn count(self, n: u64, ops: &mut FlopCounter) {
        match self {
            Activation::Tanh => ops.transcendental(n),
            Activation::Relu => ops.compare(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub policy: PolicyKind,
    pub value: ValueHeadKind,
}

impl NetSpec {
    /// Two hidden layers of 64 tanh units.
    pub fn standard(input: usize, policy: PolicyKind, value: ValueHeadKind) -> Self {
        Self { input, hidden: vec![64, 64], activation: Activation::Tanh, policy, value }
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("layer sizes must be >= 1".into()));
        }
        if self.policy.outputs() == 0 || self.value.outputs() == 0 {
            return Err(Error::InvalidArgument("head sizes must be >= 1".into()));
        }
        Ok(())
    }

    fn log_std_len(&self) -> usize {
        match self.policy {
            PolicyKind::Gaussian { dim } => dim,
            PolicyKind::Discrete { .. } => 0,
        }
    }

    /// `(fan_in, fan_out)` of every dense layer: torso, then policy, then value.
    fn dense_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 2);
        let mut prev = self.input;
        for &h in &self.hidden {
            shapes.push((prev, h));
            prev = h;
        }
        shapes.push((prev, self.policy.outputs()));
        shapes.push((prev, self.value.outputs()));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.dense_shapes().iter().map(|(i, o)| i * o + o).sum::<usize>() + self.log_std_len()
    }
}

/// Offsets of one dense layer's weights (`out × in`, row-major) and biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetSpec,
    params: Vec<f64>,
    layers: Vec<Dense>,
    log_std: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub policy: Vec<f64>,
    pub value: Vec<f64>,
}

/// Activations saved by [`Network::forward`]. [`Network::backward`] consumes
/// it, so a tape cannot be replayed.
#[derive(Debug)]
pub struct Tape {
    input: Vec<f64>,
    hidden: Vec<Vec<f64>>,
}

fn layout(spec: &NetSpec) -> (Vec<Dense>, usize) {
    let mut offset = 0;
    let layers = spec
        .dense_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let d = Dense { fan_in, fan_out, w: offset, b: offset + fan_in * fan_out };
            offset += fan_in * fan_out + fan_out;
            d
        })
        .collect();
    (layers, offset)
}

/// `rows × cols` matrix with orthonormal rows or columns, whichever is fewer,
/// scaled by `gain`.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (tall, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // Columns of a tall × short Gaussian matrix, orthonormalized by modified Gram–Schmidt.
    let mut q: Vec<Vec<f64>> = (0..short).map(|_| (0..tall).map(|_| rng.sample(StandardNormal)).collect()).collect();
    for j in 0..short {
        for i in 0..j {
            let dot: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            let qi = q[i].clone();
            q[j].iter_mut().zip(&qi).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = math::sqrt(q[j].iter().map(|x| x * x).sum());
        q[j].iter_mut().for_each(|x| *x /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain * if rows >= cols { q[c][r] } else { q[r][c] };
        }
    }
    out
}

impl Network {
    /// Orthogonal weights (gain √2 for hidden layers, 0.01 for the policy
    /// head, 1 for the value head), zero biases and zero log-stds.
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let n = net.layers.len();
        for (i, d) in net.layers.clone().into_iter().enumerate() {
            let gain = if i + 2 == n {
                0.01
            } else if i + 1 == n {
                1.0
            } else {
                core::f64::consts::SQRT_2
            };
            let w = orthogonal(d.fan_out, d.fan_in, gain, rng);
            net.params[d.w..d.w + w.len()].copy_from_slice(&w);
        }
        Ok(net)
    }

    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let (layers, log_std) = layout(&spec);
        let params = vec![0.0; log_std + spec.log_std_len()];
        Ok(Self { spec, params, layers, log_std })
    }

    pub fn from_parts(spec: NetSpec, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        if params.len() != net.params.len() {
            return Err(Error::DimensionMismatch { expected: net.params.len(), got: params.len() });
        }
        if let Some(p) = params.iter().find(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {p}")));
        }
        net.params = params;
        Ok(net)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.params[self.log_std..]
    }

    fn dense(&self, d: Dense, x: &[f64], ops: &mut FlopCounter) -> Vec<f64> {
        let w = &self.params[d.w..d.b];
        let b = &self.params[d.b..d.b + d.fan_out];
        let out = (0..d.fan_out)
            .map(|o| b[o] + w[o * d.fan_in..(o + 1) * d.fan_in].iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect();
        ops.mul_add((d.fan_in * d.fan_out) as u64);
        ops.arith(d.fan_out as u64);
        out
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input {
            return Err(Error::DimensionMismatch { expected: self.spec.input, got: x.len() });
        }
        Ok(())
    }

    fn run(&self, x: &[f64], ops: &mut FlopCounter) -> (Vec<Vec<f64>>, Output) {
        let act = self.spec.activation;
        let n_hidden = self.spec.hidden.len();
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(n_hidden);
        for i in 0..n_hidden {
            let prev = if i == 0 { x } else { &hidden[i - 1] };
            let mut h = self.dense(self.layers[i], prev, ops);
            h.iter_mut().for_each(|v| *v = act.apply(*v));
            act.count(h.len() as u64, ops);
            hidden.push(h);
        }
        let top: &[f64] = hidden.last().map(Vec::as_slice).unwrap_or(x);
        let policy = self.dense(self.layers[n_hidden], top, ops);
        let value = self.dense(self.layers[n_hidden + 1], top, ops);
        (hidden, Output { policy, value })
    }

    /// Forward pass without recording a tape.
    pub fn infer(&self, x: &[f64], ops: &mut FlopCounter) -> Result<Output> {
        self.check_input(x)?;
        Ok(self.run(x, ops).1)
    }

    pub fn forward(&self, x: &[f64], ops: &mut FlopCounter) -> Result<(Output, Tape)> {
        self.check_input(x)?;
        let (hidden, out) = self.run(x, ops);
        Ok((out, Tape { input: x.to_vec(), hidden }))
    }

    /// Accumulates into `grads` the parameter gradient of a loss whose
    /// gradients with respect to the head outputs and log-stds are given.
    pub fn backward(
        &self,
        tape: Tape,
        d_policy: &[f64],
        d_value: &[f64],
        d_log_std: &[f64],
        grads: &mut [f64],
        ops: &mut FlopCounter,
    ) -> Result<()> {
        let n_hidden = self.spec.hidden.len();
        let pol = self.layers[n_hidden];
        let val = self.layers[n_hidden + 1];
        if grads.len() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), got: grads.len() });
        }
        if d_policy.len() != pol.fan_out || d_value.len() != val.fan_out {
            return Err(Error::DimensionMismatch {
                expected: pol.fan_out + val.fan_out,
                got: d_policy.len() + d_value.len(),
            });
        }
        if !d_log_std.is_empty() {
            if d_log_std.len() != self.spec.log_std_len() {
                return Err(Error::DimensionMismatch { expected: self.spec.log_std_len(), got: d_log_std.len() });
            }
            grads[self.log_std..].iter_mut().zip(d_log_std).for_each(|(g, d)| *g += d);
            ops.arith(d_log_std.len() as u64);
        }
        let top: &[f64] = tape.hidden.last().map(Vec::as_slice).unwrap_or(&tape.input);
        let mut d_top = vec![0.0; top.len()];
        self.dense_backward(pol, top, d_policy, Some(&mut d_top), grads, ops);
        self.dense_backward(val, top, d_value, Some(&mut d_top), grads, ops);
        let act = self.spec.activation;
        for i in (0..n_hidden).rev() {
            let h = &tape.hidden[i];
            let d_pre: Vec<f64> = d_top.iter().zip(h).map(|(d, y)| d * act.derivative_from_output(*y)).collect();
            ops.mul_add(h.len() as u64);
            ops.arith(h.len() as u64);
            let prev: &[f64] = if i == 0 { &tape.input } else { &tape.hidden[i - 1] };
            let mut d_prev = vec![0.0; prev.len()];
            let want_input_grad = i > 0;
            self.dense_backward(self.layers[i], prev, &d_pre, want_input_grad.then_some(&mut d_prev), grads, ops);
            d_top = d_prev;
        }
        Ok(())
    }

    fn dense_backward(
        &self,
        d: Dense,
        x: &[f64],
        d_out: &[f64],
        d_in: Option<&mut Vec<f64>>,
        grads: &mut [f64],
        ops: &mut FlopCounter,
    ) {
        let w = &self.params[d.w..d.b];
        for (o, &g) in d_out.iter().enumerate() {
            let row = &mut grads[d.w + o * d.fan_in..d.w + (o + 1) * d.fan_in];
            row.iter_mut().zip(x).for_each(|(gw, xi)| *gw += g * xi);
            grads[d.b + o] += g;
        }
        ops.mul_add((d.fan_in * d.fan_out) as u64);
        ops.arith(d.fan_out as u64);
        if let Some(d_in) = d_in {
            for (o, &g) in d_out.iter().enumerate() {
                d_in.iter_mut().zip(&w[o * d.fan_in..(o + 1) * d.fan_in]).for_each(|(di, wi)| *di += g * wi);
            }
            ops.mul_add((d.fan_in * d.fan_out) as u64);
        }
    }

    /// Policy distribution for a forward output.
    pub fn policy_dist(&self, out: &Output, ops: &mut FlopCounter) -> PolicyDist {
        PolicyDist::from_outputs(self.spec.policy, &out.policy, self.log_std(), ops)
    }
}
