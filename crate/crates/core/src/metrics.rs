//! Distances between one-dimensional distributions and the critic loss kernels
//! built on them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dist::{self, Component, GaussianMixture, ValueDistribution, WeightedMixture};
use crate::error::{Error, Result};
use crate::flops::FlopCounter;
use crate::math::{self, SQRT_2_OVER_PI};

/// How a distance value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMethod {
    ClosedForm,
    Sample,
    NumericCdf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceReport {
    pub value: f64,
    pub method: DistanceMethod,
    pub sample_count: Option<usize>,
}

impl DistanceReport {
    pub fn new(value: f64, method: DistanceMethod, sample_count: Option<usize>) -> Self {
        Self { value: clamp_cancellation(value), method, sample_count }
    }
}

fn clamp_cancellation(v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

/// Which expression to use for the folded-normal mean.
///
/// `AsPrinted` reproduces a variant whose Φ argument omits the combined
/// standard deviation and flips the sign of the linear term. It does not equal
/// `E|X|` and exists only so the discrepancy can be demonstrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FoldedNormalForm {
    #[default]
    Standard,
    AsPrinted,
}

/// `E|X|` for `X ~ N(mu, var)`.
pub fn folded_normal_abs_mean(mu: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return mu.abs();
    }
    let s = math::sqrt(var);
    s * SQRT_2_OVER_PI * math::exp(-mu * mu / (2.0 * var)) + mu * math::erf(mu / (s * core::f64::consts::SQRT_2))
}

/// Folded-normal kernel in the selected form.
pub fn folded_normal_with(form: FoldedNormalForm, mu: f64, var: f64) -> f64 {
    match form {
        FoldedNormalForm::Standard => folded_normal_abs_mean(mu, var),
        FoldedNormalForm::AsPrinted => {
            let s = math::sqrt(var.max(0.0));
            s * SQRT_2_OVER_PI * math::exp(-mu * mu / (2.0 * var.max(f64::MIN_POSITIVE)))
                + mu * (1.0 - 2.0 * math::normal_cdf(mu / core::f64::consts::SQRT_2))
        }
    }
}

/// Folded-normal mean with its partial derivatives `(f, ∂f/∂mu, ∂f/∂var)`.
#[inline]
fn folded_normal_with_grad(mu: f64, var: f64, ops: &mut FlopCounter) -> (f64, f64, f64) {
    if var <= 0.0 {
        ops.compare(2);
        return (mu.abs(), if mu > 0.0 { 1.0 } else if mu < 0.0 { -1.0 } else { 0.0 }, 0.0);
    }
    let s = math::sqrt(var);
    let e = math::exp(-mu * mu / (2.0 * var));
    let erf = math::erf(mu / (s * core::f64::consts::SQRT_2));
    let f = s * SQRT_2_OVER_PI * e + mu * erf;
    // d/dvar = N(mu; 0, var) density
    let dvar = math::INV_SQRT_2PI * e / s;
    ops.transcendental(3);
    ops.arith(7);
    ops.mul_add(2);
    (f, erf, dvar)
}

fn delta_components(a: &[Component], b: &[Component]) -> f64 {
    let mut acc = 0.0;
    for ca in a {
        for cb in b {
            acc += ca.weight * cb.weight * folded_normal_abs_mean(ca.mean - cb.mean, ca.variance + cb.variance);
        }
    }
    acc
}

/// `δ(U, V) = Σ_ij w_ui w_vj E|Z_ij|` with `Z_ij ~ N(μ_ui − μ_vj, σ²_ui + σ²_vj)`.
pub fn delta_gmm(u: &GaussianMixture, v: &GaussianMixture) -> f64 {
    delta_components(u.components(), v.components())
}

/// Closed-form energy distance between two Gaussian mixtures.
pub fn energy_gmm(u: &GaussianMixture, v: &GaussianMixture) -> f64 {
    energy_components(u.components(), v.components())
}

/// Energy distance with the folded-normal kernel in the given form.
pub fn energy_gmm_with(form: FoldedNormalForm, u: &GaussianMixture, v: &GaussianMixture) -> f64 {
    let d = |a: &[Component], b: &[Component]| {
        let mut acc = 0.0;
        for ca in a {
            for cb in b {
                acc += ca.weight * cb.weight * folded_normal_with(form, ca.mean - cb.mean, ca.variance + cb.variance);
            }
        }
        acc
    };
    let (a, b) = (u.components(), v.components());
    2.0 * d(a, b) - d(a, a) - d(b, b)
}

/// Closed-form energy distance between arbitrary weighted mixtures of Gaussian
/// and point-mass components.
pub fn energy_components(a: &[Component], b: &[Component]) -> f64 {
    clamp_cancellation(2.0 * delta_components(a, b) - delta_components(a, a) - delta_components(b, b))
}

/// Energy distance between two value distributions.
///
/// Duplicate components are merged first; when both sides are pure point
/// masses the CDF integral is evaluated exactly in `O(n log n)`.
pub fn energy(p: &ValueDistribution, q: &ValueDistribution) -> f64 {
    let a = WeightedMixture::from_unnormalized(p.to_components()).map(|w| w.compact());
    let b = WeightedMixture::from_unnormalized(q.to_components()).map(|w| w.compact());
    match (a, b) {
        (Ok(a), Ok(b)) => {
            if a.is_point_masses() && b.is_point_masses() && a.len() * b.len() > 4096 {
                2.0 * point_mass_cramer_sq(a.components(), b.components())
            } else {
                energy_components(a.components(), b.components())
            }
        }
        _ => f64::NAN,
    }
}

/// `∫ (F_P − F_Q)² dz` for two weighted point-mass sets.
fn point_mass_cramer_sq(a: &[Component], b: &[Component]) -> f64 {
    let mut events: Vec<(f64, f64)> = a
        .iter()
        .map(|c| (c.mean, c.weight))
        .chain(b.iter().map(|c| (c.mean, -c.weight)))
        .collect();
    events.sort_unstable_by(|x, y| x.0.total_cmp(&y.0));
    let mut diff = 0.0;
    let mut acc = 0.0;
    for w in 0..events.len() {
        diff += events[w].1;
        if w + 1 < events.len() {
            acc += diff * diff * (events[w + 1].0 - events[w].0);
        }
    }
    acc
}

/// Sample energy distance, evaluated in `O(n log n)` via sorted prefix sums.
pub fn energy_samples(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidArgument("energy_samples needs non-empty sample sets".into()));
    }
    let mut x = xs.to_vec();
    let mut y = ys.to_vec();
    math::sort_f64(&mut x);
    math::sort_f64(&mut y);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let cross = sorted_cross_abs_sum(&x, &y);
    let within = |s: &[f64]| {
        let k = s.len() as f64;
        2.0 * s.iter().enumerate().map(|(i, &v)| v * (2.0 * i as f64 - k + 1.0)).sum::<f64>()
    };
    Ok(clamp_cancellation(2.0 * cross / (n * m) - within(&x) / (n * n) - within(&y) / (m * m)))
}

fn sorted_cross_abs_sum(x: &[f64], y: &[f64]) -> f64 {
    let total: f64 = y.iter().sum();
    let mut prefix = 0.0;
    let mut j = 0;
    let mut acc = 0.0;
    let m = y.len() as f64;
    for &xi in x {
        while j < y.len() && y[j] <= xi {
            prefix += y[j];
            j += 1;
        }
        let below = j as f64;
        acc += xi * below - prefix + (total - prefix) - xi * (m - below);
    }
    acc
}

/// Sample energy distance by direct pairwise summation, with its gradient
/// with respect to `xs`. This is the kernel used as a critic loss.
pub fn energy_samples_pairwise(xs: &[f64], ys: &[f64], ops: &mut FlopCounter) -> (f64, Vec<f64>) {
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let mut grad = vec![0.0; xs.len()];
    let mut cross = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let mut g = 0.0;
        for &y in ys {
            let d = x - y;
            cross += d.abs();
            g += sign(d);
        }
        grad[i] += 2.0 * g / (n * m);
    }
    let mut self_x = 0.0;
    for i in 0..xs.len() {
        let mut g = 0.0;
        for k in 0..xs.len() {
            let d = xs[i] - xs[k];
            self_x += d.abs();
            g += sign(d);
        }
        grad[i] -= 2.0 * g / (n * n);
    }
    let mut self_y = 0.0;
    for j in 0..ys.len() {
        for k in 0..ys.len() {
            self_y += (ys[j] - ys[k]).abs();
        }
    }
    let pairs_xy = (xs.len() * ys.len()) as u64;
    let pairs_xx = (xs.len() * xs.len()) as u64;
    let pairs_yy = (ys.len() * ys.len()) as u64;
    // sub, abs, accumulate per pair; sign + accumulate for gradient pairs
    ops.arith(2 * (pairs_xy + pairs_xx + pairs_yy) + 2 * (pairs_xy + pairs_xx));
    ops.compare(pairs_xy + pairs_xx + pairs_yy + pairs_xy + pairs_xx);
    ops.arith(3 * xs.len() as u64 + 8);
    (2.0 * cross / (n * m) - self_x / (n * n) - self_y / (m * m), grad)
}

#[inline]
fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of the energy distance with respect to the critic mixture's
/// `(weight, mean, variance)` parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmGrad {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

/// `E(critic, target)` and its gradient with respect to the critic parameters.
/// The target may contain point masses.
pub fn energy_gmm_grad(critic: &[Component], target: &[Component], ops: &mut FlopCounter) -> (f64, GmmGrad) {
    let k = critic.len();
    let mut grad = GmmGrad { weights: vec![0.0; k], means: vec![0.0; k], variances: vec![0.0; k] };
    let mut cross = 0.0;
    let mut self_c = 0.0;
    for (i, ci) in critic.iter().enumerate() {
        let (mut sw, mut sm, mut sv) = (0.0, 0.0, 0.0);
        for tj in target {
            let (f, fm, fv) = folded_normal_with_grad(ci.mean - tj.mean, ci.variance + tj.variance, ops);
            sw += tj.weight * f;
            sm += tj.weight * fm;
            sv += tj.weight * fv;
        }
        cross += ci.weight * sw;
        let (mut uw, mut um, mut uv) = (0.0, 0.0, 0.0);
        for cj in critic {
            let (f, fm, fv) = folded_normal_with_grad(ci.mean - cj.mean, ci.variance + cj.variance, ops);
            uw += cj.weight * f;
            um += cj.weight * fm;
            uv += cj.weight * fv;
        }
        self_c += ci.weight * uw;
        grad.weights[i] = 2.0 * sw - 2.0 * uw;
        grad.means[i] = 2.0 * ci.weight * (sm - um);
        grad.variances[i] = 2.0 * ci.weight * (sv - uv);
    }
    let mut self_t = 0.0;
    for ti in target {
        for tj in target {
            let (f, _, _) = folded_normal_with_grad(ti.mean - tj.mean, ti.variance + tj.variance, ops);
            self_t += ti.weight * tj.weight * f;
        }
    }
    let pairs = (k * target.len() + k * k + target.len() * target.len()) as u64;
    ops.mul_add(4 * pairs);
    ops.arith(8 * k as u64 + 4);
    (2.0 * cross - self_c - self_t, grad)
}

/// Cramér `l_p` distance `(∫|F_P − F_Q|^p dz)^{1/p}` by adaptive Gauss–Kronrod
/// quadrature over the union support padded by eight standard deviations.
pub fn cramer_lp_numeric(p: &ValueDistribution, q: &ValueDistribution, exponent: f64) -> Result<DistanceReport> {
    let integral = cramer_lp_integral(p, q, exponent)?;
    Ok(DistanceReport::new(math::powf(integral, 1.0 / exponent), DistanceMethod::NumericCdf, None))
}

/// The integral `∫|F_P − F_Q|^p dz` itself (the squared Cramér distance at p = 2).
pub fn cramer_lp_integral(p: &ValueDistribution, q: &ValueDistribution, exponent: f64) -> Result<f64> {
    if !(exponent >= 1.0) {
        return Err(Error::InvalidArgument(format!("l_p exponent must be >= 1, got {exponent}")));
    }
    let pc = p.to_components();
    let qc = q.to_components();
    let all: Vec<Component> = pc.iter().chain(qc.iter()).copied().collect();
    let (lo, hi) = dist::support_bounds(&all);
    let mut breaks: Vec<f64> = all.iter().filter(|c| c.variance == 0.0).map(|c| c.mean).collect();
    breaks.push(lo);
    breaks.push(hi);
    math::sort_f64(&mut breaks);
    breaks.dedup();

    let integrand = |z: f64| {
        let d = (p.cdf(z) - q.cdf(z)).abs();
        if exponent == 2.0 {
            d * d
        } else {
            math::powf(d, exponent)
        }
    };
    let span = hi - lo;
    if span <= 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let tol = 1e-7 * (b - a) / span;
        total += adaptive_gauss_kronrod(&integrand, a, b, tol)?;
    }
    Ok(total)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod_15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adaptive_gauss_kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    const MAX_INTERVALS: usize = 20_000;
    let mut stack = vec![(a, b, tol)];
    let mut total = 0.0;
    let mut visited = 0;
    while let Some((lo, hi, t)) = stack.pop() {
        visited += 1;
        if visited > MAX_INTERVALS {
            return Err(Error::NumericAccuracy(format!(
                "quadrature on [{a}, {b}] did not converge within {MAX_INTERVALS} intervals"
            )));
        }
        let (value, err) = gauss_kronrod_15(f, lo, hi);
        if err <= t.max(1e-15) || hi - lo < 1e-12 * (1.0 + lo.abs()) {
            total += value;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * t));
            stack.push((mid, hi, 0.5 * t));
        }
    }
    Ok(total)
}

/// Wasserstein-p distance via the inverse-CDF integral on a midpoint grid of
/// `2^14` quantile levels.
pub fn wasserstein_p_numeric(p: &ValueDistribution, q: &ValueDistribution, exponent: f64) -> Result<DistanceReport> {
    if !(exponent >= 1.0) {
        return Err(Error::InvalidArgument(format!("Wasserstein exponent must be >= 1, got {exponent}")));
    }
    const GRID: usize = 1 << 14;
    let qp = quantile_grid(p, GRID);
    let qq = quantile_grid(q, GRID);
    let mean: f64 = qp
        .iter()
        .zip(&qq)
        .map(|(a, b)| math::powf((a - b).abs(), exponent))
        .sum::<f64>()
        / GRID as f64;
    Ok(DistanceReport::new(math::powf(mean, 1.0 / exponent), DistanceMethod::NumericCdf, Some(GRID)))
}

fn quantile_grid(d: &ValueDistribution, n: usize) -> Vec<f64> {
    let levels = (0..n).map(|k| (k as f64 + 0.5) / n as f64);
    match d {
        ValueDistribution::Dirac(dm) => {
            let mut sorted = dm.atoms().to_vec();
            math::sort_f64(&mut sorted);
            let m = sorted.len();
            levels
                .map(|w| sorted[(libm::ceil(w * m as f64) as usize).clamp(1, m) - 1])
                .collect()
        }
        _ => {
            // Bisection, reusing the previous level's answer as a lower bracket.
            let (lo, hi) = d.support_bounds();
            let mut prev = lo - 1.0;
            levels
                .map(|w| {
                    let z = dist::bisect_inverse_cdf(|z| d.cdf(z), w, (prev.max(lo - 1.0), hi));
                    prev = z - 1e-9;
                    z
                })
                .collect()
        }
    }
}

/// Huber quantile loss `(1/N') Σ_i Σ_j ρ_{τ_i}^κ(target_j − prediction_i)`.
pub fn huber_quantile_loss(targets: &[f64], predictions: &[(f64, f64)], kappa: f64) -> Result<f64> {
    check_huber_args(targets, predictions, kappa)?;
    Ok(huber_quantile_loss_grad(targets, predictions, kappa, &mut FlopCounter::new()).0)
}

pub(crate) fn check_huber_args(targets: &[f64], predictions: &[(f64, f64)], kappa: f64) -> Result<()> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("Huber threshold must be > 0, got {kappa}")));
    }
    if targets.is_empty() || predictions.is_empty() {
        return Err(Error::InvalidArgument("Huber quantile loss needs targets and predictions".into()));
    }
    if let Some((_, t)) = predictions.iter().find(|(_, t)| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::InvalidArgument(format!("quantile fraction {t} outside (0, 1)")));
    }
    Ok(())
}

/// Huber quantile loss and its gradient with respect to each prediction value.
///
/// At `δ = 0` the indicator takes the `δ < 0` side; the Huber derivative is 0
/// there either way.
pub fn huber_quantile_loss_grad(
    targets: &[f64],
    predictions: &[(f64, f64)],
    kappa: f64,
    ops: &mut FlopCounter,
) -> (f64, Vec<f64>) {
    let n_prime = targets.len() as f64;
    let mut grad = vec![0.0; predictions.len()];
    let mut loss = 0.0;
    for (i, &(pred, tau)) in predictions.iter().enumerate() {
        let mut g = 0.0;
        for &t in targets {
            let delta = t - pred;
            let weight = if delta <= 0.0 { (tau - 1.0).abs() } else { tau };
            let abs = delta.abs();
            let (huber, dhuber) = if abs <= kappa {
                (0.5 * delta * delta, delta)
            } else {
                (kappa * (abs - 0.5 * kappa), kappa * sign(delta))
            };
            loss += weight * huber / kappa;
            // dρ/dprediction = −dρ/dδ
            g -= weight * dhuber / kappa;
        }
        grad[i] = g / n_prime;
    }
    let pairs = (targets.len() * predictions.len()) as u64;
    // sub, indicator compare, |τ − I|, abs, region compare, quadratic/linear
    // piece, weight·L/κ, accumulate; gradient: weight·L'/κ and accumulate
    ops.arith(9 * pairs);
    ops.compare(3 * pairs);
    ops.mul_add(2 * pairs);
    ops.arith(2 * predictions.len() as u64);
    (loss / n_prime, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DiracMixture;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    /// Simpson's rule on `[mu − 14σ, mu + 14σ]`, split at zero.
    fn folded_normal_by_quadrature(mu: f64, var: f64) -> f64 {
        let s = libm::sqrt(var);
        let f = |x: f64| x.abs() * math::normal_pdf((x - mu) / s) / s;
        let simpson = |a: f64, b: f64| {
            let n = 20_000;
            let h = (b - a) / n as f64;
            let mut acc = f(a) + f(b);
            for i in 1..n {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
            }
            acc * h / 3.0
        };
        let (lo, hi) = (mu - 14.0 * s, mu + 14.0 * s);
        if lo < 0.0 && hi > 0.0 {
            simpson(lo, 0.0) + simpson(0.0, hi)
        } else {
            simpson(lo, hi)
        }
    }

    fn random_gmm<R: Rng>(r: &mut R, k: usize) -> GaussianMixture {
        let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        GaussianMixture::new(
            raw.iter()
                .map(|w| Component::new(w / total, r.random_range(-3.0..3.0), r.random_range(0.05..2.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn folded_normal_examples_match_quadrature() {
        // Oracle values computed by quadrature, then compared to the closed form.
        let q1 = folded_normal_by_quadrature(0.0, 1.0);
        assert!((q1 - 0.797_884_560_802_865_4).abs() < 1e-10);
        assert!((folded_normal_abs_mean(0.0, 1.0) - q1).abs() < 1e-10);
        let q2 = folded_normal_by_quadrature(0.0, 2.0);
        assert!((q2 - 1.128_379_167_095_512_6).abs() < 1e-10);
        assert!((folded_normal_abs_mean(0.0, 2.0) - q2).abs() < 1e-10);
        assert_eq!(folded_normal_abs_mean(5.0, 0.0), 5.0);
        assert!((folded_normal_abs_mean(5.0, 1e-14) - 5.0).abs() < 1e-12);
        for &(mu, var) in &[(0.7, 0.3), (-1.3, 2.2), (3.0, 0.5)] {
            let q = folded_normal_by_quadrature(mu, var);
            assert!((folded_normal_abs_mean(mu, var) - q).abs() < 1e-9, "mu={mu} var={var}");
        }
    }

    #[test]
    fn printed_folded_normal_variant_disagrees() {
        let (mu, var) = (1.2, 0.4);
        let truth = folded_normal_by_quadrature(mu, var);
        let printed = folded_normal_with(FoldedNormalForm::AsPrinted, mu, var);
        assert!((printed - truth).abs() > 0.5);
        assert!((folded_normal_with(FoldedNormalForm::Standard, mu, var) - truth).abs() < 1e-9);
        // at zero mean difference both agree
        assert!(
            (folded_normal_with(FoldedNormalForm::AsPrinted, 0.0, var) - folded_normal_abs_mean(0.0, var)).abs()
                < 1e-15
        );
    }

    #[test]
    fn delta_examples() {
        let n01 = GaussianMixture::single(0.0, 1.0);
        assert!((delta_gmm(&n01, &n01) - 2.0 / libm::sqrt(core::f64::consts::PI)).abs() < 1e-12);
        let a = 1.7;
        let u = GaussianMixture::single(0.0, 1e-16);
        let v = GaussianMixture::single(a, 1e-16);
        assert!((delta_gmm(&u, &v) - a).abs() < 1e-7);
    }

    #[test]
    fn delta_matches_monte_carlo() {
        let mut r = rng::stream(21, 0);
        let u = random_gmm(&mut r, 2);
        let v = random_gmm(&mut r, 2);
        let n = 1_000_000;
        let xs = u.sample(&mut r, n);
        let ys = v.sample(&mut r, n);
        let diffs: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| (x - y).abs()).collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        let se = libm::sqrt(var / n as f64);
        assert!((delta_gmm(&u, &v) - mean).abs() < 3.0 * se);
    }

    #[test]
    fn energy_examples() {
        let mut r = rng::stream(5, 5);
        let u = random_gmm(&mut r, 3);
        assert_eq!(energy_gmm(&u, &u), 0.0);
        let a = -2.5;
        let p0 = vec![Component::point(1.0, 0.0)];
        let pa = vec![Component::point(1.0, a)];
        assert!((energy_components(&p0, &pa) - 2.0 * a.abs()).abs() < 1e-12);
        for _ in 0..5 {
            let u = random_gmm(&mut r, 3);
            let v = random_gmm(&mut r, 3);
            let l2sq = cramer_lp_integral(&u.clone().into(), &v.clone().into(), 2.0).unwrap();
            assert!((energy_gmm(&u, &v) - 2.0 * l2sq).abs() < 1e-4);
        }
    }

    #[test]
    fn energy_samples_examples() {
        assert_eq!(energy_samples(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((energy_samples(&[0.0], &[-3.0]).unwrap() - 6.0).abs() < 1e-15);
        assert!(energy_samples(&[], &[1.0]).is_err());
    }

    #[test]
    fn energy_samples_within_three_se_of_closed_form() {
        let mut r = rng::stream(8, 2);
        let u = random_gmm(&mut r, 2);
        let v = random_gmm(&mut r, 3);
        let exact = energy_gmm(&u, &v);
        let reps = 40;
        let vals: Vec<f64> = (0..reps)
            .map(|_| energy_samples(&u.sample(&mut r, 10_000), &v.sample(&mut r, 10_000)).unwrap())
            .collect();
        // one 10^4-draw estimate against its replication spread
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let sd = libm::sqrt(vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (reps - 1) as f64);
        assert!((vals[0] - exact).abs() < 3.0 * sd + 1e-3, "{} vs {exact} (sd {sd})", vals[0]);
        assert!((mean - exact).abs() < 3.0 * sd / libm::sqrt(reps as f64) + 2e-4);
    }

    #[test]
    fn sorted_and_pairwise_sample_energy_agree() {
        let mut r = rng::stream(2, 2);
        for _ in 0..20 {
            let xs: Vec<f64> = (0..r.random_range(1..40)).map(|_| r.random_range(-3.0..3.0)).collect();
            let ys: Vec<f64> = (0..r.random_range(1..40)).map(|_| r.random_range(-3.0..3.0)).collect();
            let a = energy_samples(&xs, &ys).unwrap();
            let (b, _) = energy_samples_pairwise(&xs, &ys, &mut FlopCounter::new());
            assert!((a - b.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn point_mass_fast_path_matches_pairwise() {
        let mut r = rng::stream(4, 4);
        let a: Vec<f64> = (0..100).map(|_| r.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..70).map(|_| r.random_range(-1.0..3.0)).collect();
        let da: ValueDistribution = DiracMixture::new(a).unwrap().into();
        let db: ValueDistribution = DiracMixture::new(b).unwrap().into();
        let fast = energy(&da, &db);
        let slow = energy_components(&da.to_components(), &db.to_components());
        assert!((fast - slow).abs() < 1e-12);
    }

    #[test]
    fn cramer_examples() {
        let g: ValueDistribution = GaussianMixture::single(0.3, 0.7).into();
        assert!(cramer_lp_numeric(&g, &g, 2.0).unwrap().value < 1e-9);
        let a = 2.25;
        let p: ValueDistribution = DiracMixture::new(vec![0.0]).unwrap().into();
        let q: ValueDistribution = DiracMixture::new(vec![a]).unwrap().into();
        assert!((cramer_lp_numeric(&p, &q, 2.0).unwrap().value - libm::sqrt(a)).abs() < 1e-9);
        assert!(cramer_lp_numeric(&p, &q, 0.5).is_err());
    }

    #[test]
    fn wasserstein_examples() {
        let g: ValueDistribution = GaussianMixture::single(0.0, 1.0).into();
        assert!(wasserstein_p_numeric(&g, &g, 1.0).unwrap().value < 1e-12);
        let a = -1.5;
        let p: ValueDistribution = DiracMixture::new(vec![0.0]).unwrap().into();
        let q: ValueDistribution = DiracMixture::new(vec![a]).unwrap().into();
        for exp in [1.0, 2.0, 3.0] {
            assert!((wasserstein_p_numeric(&p, &q, exp).unwrap().value - a.abs()).abs() < 1e-12);
        }
        let shifted: ValueDistribution = GaussianMixture::single(0.8, 1.0).into();
        assert!((wasserstein_p_numeric(&g, &shifted, 1.0).unwrap().value - 0.8).abs() < 1e-6);
    }

    #[test]
    fn huber_examples() {
        let c = 1.3;
        assert_eq!(huber_quantile_loss(&[c], &[(c, 0.3)], 1.0).unwrap(), 0.0);
        let kappa = 0.7;
        let loss = huber_quantile_loss(&[kappa], &[(0.0, 0.5)], kappa).unwrap();
        assert!((loss - kappa / 4.0).abs() < 1e-15);
        assert!(huber_quantile_loss(&[1.0], &[(0.0, 1.0)], 1.0).is_err());
        assert!(huber_quantile_loss(&[1.0], &[(0.0, 0.5)], 0.0).is_err());
    }

    #[test]
    fn huber_gradient_matches_finite_differences() {
        let mut r = rng::stream(13, 1);
        let targets: Vec<f64> = (0..12).map(|_| r.random_range(-3.0..3.0)).collect();
        let preds: Vec<(f64, f64)> = (0..5)
            .map(|i| (r.random_range(-3.0..3.0), (2.0 * i as f64 + 1.0) / 10.0))
            .collect();
        let (_, grad) = huber_quantile_loss_grad(&targets, &preds, 1.0, &mut FlopCounter::new());
        let h = 1e-5;
        for i in 0..preds.len() {
            let mut up = preds.clone();
            let mut dn = preds.clone();
            up[i].0 += h;
            dn[i].0 -= h;
            let fd = (huber_quantile_loss(&targets, &up, 1.0).unwrap() - huber_quantile_loss(&targets, &dn, 1.0).unwrap())
                / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6, "i={i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn energy_gmm_gradient_matches_finite_differences() {
        let mut r = rng::stream(31, 7);
        let critic = random_gmm(&mut r, 3);
        let mut target = random_gmm(&mut r, 4).components().to_vec();
        target.push(Component::point(0.0, 0.5));
        let cs = critic.components().to_vec();
        let (value, g) = energy_gmm_grad(&cs, &target, &mut FlopCounter::new());
        assert!((value - energy_components(&cs, &target)).abs() < 1e-12);
        let h = 1e-6;
        let eval = |c: &[Component]| {
            2.0 * delta_components(c, &target) - delta_components(c, c) - delta_components(&target, &target)
        };
        for i in 0..cs.len() {
            for field in 0..3 {
                let mut up = cs.clone();
                let mut dn = cs.clone();
                match field {
                    0 => {
                        up[i].weight += h;
                        dn[i].weight -= h;
                    }
                    1 => {
                        up[i].mean += h;
                        dn[i].mean -= h;
                    }
                    _ => {
                        up[i].variance += h;
                        dn[i].variance -= h;
                    }
                }
                let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
                let an = [g.weights[i], g.means[i], g.variances[i]][field];
                assert!((fd - an).abs() < 1e-6, "component {i} field {field}: {fd} vs {an}");
            }
        }
    }

    fn arb_gmm() -> impl Strategy<Value = GaussianMixture> {
        prop::collection::vec((0.05f64..1.0, -4.0f64..4.0, 0.02f64..2.0), 1..4).prop_map(|raw| {
            let total: f64 = raw.iter().map(|r| r.0).sum();
            GaussianMixture::new(raw.iter().map(|&(w, m, v)| Component::new(w / total, m, v)).collect()).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn distances_are_symmetric_and_nonnegative(u in arb_gmm(), v in arb_gmm()) {
            let (a, b) = (energy_gmm(&u, &v), energy_gmm(&v, &u));
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-12);
            let (pu, pv): (ValueDistribution, ValueDistribution) = (u.clone().into(), v.clone().into());
            let c1 = cramer_lp_numeric(&pu, &pv, 2.0).unwrap().value;
            let c2 = cramer_lp_numeric(&pv, &pu, 2.0).unwrap().value;
            prop_assert!((c1 - c2).abs() < 1e-6);
            prop_assert!(energy_gmm(&u, &u) < 1e-9);
        }

        #[test]
        fn sample_energy_is_symmetric(xs in prop::collection::vec(-5.0f64..5.0, 1..30), ys in prop::collection::vec(-5.0f64..5.0, 1..30)) {
            let a = energy_samples(&xs, &ys).unwrap();
            let b = energy_samples(&ys, &xs).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn energy_scales_linearly_under_shared_affine_map(u in arb_gmm(), v in arb_gmm(), shift in -5.0f64..5.0, scale in 0.05f64..0.999) {
            let e = energy_gmm(&u, &v);
            let e2 = energy_gmm(&u.affine(shift, scale).unwrap(), &v.affine(shift, scale).unwrap());
            prop_assert!(e2 <= scale * e + 1e-9);
            prop_assert!((e2 - scale * e).abs() < 1e-9 * (1.0 + e));
        }
    }
}
