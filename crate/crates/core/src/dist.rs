//! Value-distribution representations: Gaussian mixtures, equal-weight Dirac
//! mixtures, and weighted mixtures whose components may be point masses.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;

/// Smallest variance a Gaussian component may carry.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Tolerance on the sum of mixture weights.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

/// One `(weight, mean, variance)` component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    pub const fn new(weight: f64, mean: f64, variance: f64) -> Self {
        Self { weight, mean, variance }
    }

    pub const fn point(weight: f64, at: f64) -> Self {
        Self { weight, mean: at, variance: 0.0 }
    }

    fn cdf(&self, z: f64) -> f64 {
        if self.variance > 0.0 {
            math::normal_cdf((z - self.mean) / math::sqrt(self.variance))
        } else if z >= self.mean {
            1.0
        } else {
            0.0
        }
    }
}

fn check_weights(components: &[Component]) -> Result<()> {
    if components.is_empty() {
        return Err(Error::InvalidDistribution("mixture needs at least one component".into()));
    }
    let mut sum = 0.0;
    for c in components {
        if !(c.weight.is_finite() && c.weight >= 0.0) {
            return Err(Error::InvalidDistribution(format!("bad weight {}", c.weight)));
        }
        if !c.mean.is_finite() {
            return Err(Error::InvalidDistribution(format!("non-finite mean {}", c.mean)));
        }
        if !(c.variance.is_finite() && c.variance >= 0.0) {
            return Err(Error::InvalidDistribution(format!("bad variance {}", c.variance)));
        }
        sum += c.weight;
    }
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::InvalidDistribution(format!("weights sum to {sum}")));
    }
    Ok(())
}

fn mixture_mean(components: &[Component]) -> f64 {
    components.iter().map(|c| c.weight * c.mean).sum()
}

fn mixture_variance(components: &[Component]) -> f64 {
    let m = mixture_mean(components);
    let v: f64 = components
        .iter()
        .map(|c| c.weight * (c.variance + (c.mean - m) * (c.mean - m)))
        .sum();
    v.max(0.0)
}

fn sample_component<R: Rng + ?Sized>(components: &[Component], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, c) in components.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            return k;
        }
    }
    // Rounding left a sliver of mass past the last cumulative weight.
    components.iter().rposition(|c| c.weight > 0.0).unwrap_or(components.len() - 1)
}

/// Picks a component index from a uniform draw `u ∈ [0, 1)`.
pub fn categorical_index(weights: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, w) in weights.enumerate() {
        acc += w;
        if w > 0.0 {
            last_positive = k;
        }
        if u < acc {
            return k;
        }
    }
    last_positive
}

/// K-component Gaussian mixture. Every variance is at least [`VARIANCE_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<Component>,
}

impl GaussianMixture {
    /// Validates weights and raises variances below the floor to the floor.
    pub fn new(mut components: Vec<Component>) -> Result<Self> {
        check_weights(&components)?;
        for c in &mut components {
            c.variance = c.variance.max(VARIANCE_FLOOR);
        }
        Ok(Self { components })
    }

    /// For head outputs, which are valid by construction (softmax weights,
    /// floored variances). Non-finite raw outputs pass through and are caught
    /// by the training loop's finiteness checks.
    pub(crate) fn from_parts_unchecked(components: Vec<Component>) -> Self {
        Self { components }
    }

    /// Convenience constructor from `(weight, mean, variance)` triples.
    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(triples.iter().map(|&(w, m, v)| Component::new(w, m, v)).collect())
    }

    pub fn single(mean: f64, variance: f64) -> Self {
        Self {
            components: alloc::vec![Component::new(1.0, mean, variance.max(VARIANCE_FLOOR))],
        }
    }

    /// Equal-weight mixture of the given `(mean, variance)` pairs.
    pub fn equal_weight(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidDistribution("mixture needs at least one component".into()));
        }
        let w = 1.0 / pairs.len() as f64;
        Self::new(pairs.iter().map(|&(m, v)| Component::new(w, m, v)).collect())
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.components.iter().map(|c| c.weight)
    }

    pub fn mean(&self) -> f64 {
        mixture_mean(&self.components)
    }

    pub fn variance(&self) -> f64 {
        mixture_variance(&self.components)
    }

    pub fn cdf(&self, z: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.cdf(z)).sum::<f64>().clamp(0.0, 1.0)
    }

    pub fn pdf(&self, z: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let s = math::sqrt(c.variance);
                c.weight * math::normal_pdf((z - c.mean) / s) / s
            })
            .sum()
    }

    pub fn affine(&self, shift: f64, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        Ok(Self {
            components: self
                .components
                .iter()
                .map(|c| {
                    Component::new(
                        c.weight,
                        shift + scale * c.mean,
                        (scale * scale * c.variance).max(VARIANCE_FLOOR),
                    )
                })
                .collect(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let c = &self.components[sample_component(&self.components, rng)];
                let z: f64 = rng.sample(StandardNormal);
                c.mean + math::sqrt(c.variance) * z
            })
            .collect()
    }
}

/// Equal-weight mixture of `m` Dirac atoms. Atoms are kept in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracMixture {
    atoms: Vec<f64>,
}

impl DiracMixture {
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidDistribution("Dirac mixture needs at least one atom".into()));
        }
        if let Some(bad) = atoms.iter().find(|a| !a.is_finite()) {
            return Err(Error::InvalidDistribution(format!("non-finite atom {bad}")));
        }
        Ok(Self { atoms })
    }

    /// `m` copies of a single value.
    pub fn constant(value: f64, m: usize) -> Self {
        Self { atoms: alloc::vec![value; m.max(1)] }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn into_atoms(self) -> Vec<f64> {
        self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().sum::<f64>() / self.atoms.len() as f64
    }

    /// Population variance of the atoms.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.atoms.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / self.atoms.len() as f64
    }

    pub fn cdf(&self, z: f64) -> f64 {
        self.atoms.iter().filter(|&&a| a <= z).count() as f64 / self.atoms.len() as f64
    }

    pub fn affine(&self, shift: f64, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        Ok(Self { atoms: self.atoms.iter().map(|a| shift + scale * a).collect() })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.atoms[rng.random_range(0..self.atoms.len())]).collect()
    }

    /// Generalized inverse CDF: the atom at sorted (1-based) index `⌈τ·m⌉`.
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidArgument(format!("quantile level {tau} outside (0, 1)")));
        }
        let mut sorted = self.atoms.clone();
        math::sort_f64(&mut sorted);
        Ok(sorted[quantile_index(tau, sorted.len())])
    }
}

fn quantile_index(tau: f64, m: usize) -> usize {
    let k = libm::ceil(tau * m as f64) as usize;
    k.clamp(1, m) - 1
}

/// Weighted mixture of Gaussian and point-mass (zero-variance) components.
///
/// This is the representation exact operators produce: λ-mixtures of n-step
/// targets and tabular Bellman images.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMixture {
    components: Vec<Component>,
}

impl WeightedMixture {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        check_weights(&components)?;
        Ok(Self { components })
    }

    pub fn point_mass(at: f64) -> Self {
        Self { components: alloc::vec![Component::point(1.0, at)] }
    }

    /// Builds a mixture from components whose weights should already sum to one,
    /// renormalizing away accumulated rounding.
    pub fn from_unnormalized(mut components: Vec<Component>) -> Result<Self> {
        components.retain(|c| c.weight > 0.0);
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidDistribution(format!("total weight {total}")));
        }
        for c in &mut components {
            c.weight /= total;
        }
        Self::new(components)
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mixture_mean(&self.components)
    }

    pub fn variance(&self) -> f64 {
        mixture_variance(&self.components)
    }

    pub fn cdf(&self, z: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.cdf(z)).sum::<f64>().clamp(0.0, 1.0)
    }

    pub fn affine(&self, shift: f64, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        Ok(Self {
            components: self
                .components
                .iter()
                .map(|c| Component::new(c.weight, shift + scale * c.mean, scale * scale * c.variance))
                .collect(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let c = &self.components[sample_component(&self.components, rng)];
                if c.variance > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    c.mean + math::sqrt(c.variance) * z
                } else {
                    c.mean
                }
            })
            .collect()
    }

    pub fn is_point_masses(&self) -> bool {
        self.components.iter().all(|c| c.variance == 0.0)
    }

    /// Merges components with bit-identical `(mean, variance)`.
    pub fn compact(&self) -> Self {
        let mut cs = self.components.clone();
        cs.sort_unstable_by(|a, b| a.mean.total_cmp(&b.mean).then(a.variance.total_cmp(&b.variance)));
        let mut out: Vec<Component> = Vec::with_capacity(cs.len());
        for c in cs {
            match out.last_mut() {
                Some(last) if last.mean == c.mean && last.variance == c.variance => last.weight += c.weight,
                _ => out.push(c),
            }
        }
        Self { components: out }
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("affine scale must be a finite value >= 0, got {scale}")));
    }
    Ok(())
}

/// A value distribution in any of the supported representations.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueDistribution {
    Gmm(GaussianMixture),
    Dirac(DiracMixture),
    Weighted(WeightedMixture),
}

impl From<GaussianMixture> for ValueDistribution {
    fn from(g: GaussianMixture) -> Self {
        Self::Gmm(g)
    }
}

impl From<DiracMixture> for ValueDistribution {
    fn from(d: DiracMixture) -> Self {
        Self::Dirac(d)
    }
}

impl From<WeightedMixture> for ValueDistribution {
    fn from(w: WeightedMixture) -> Self {
        Self::Weighted(w)
    }
}

impl ValueDistribution {
    pub fn mean(&self) -> f64 {
        match self {
            Self::Gmm(g) => g.mean(),
            Self::Dirac(d) => d.mean(),
            Self::Weighted(w) => w.mean(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Self::Gmm(g) => g.variance(),
            Self::Dirac(d) => d.variance(),
            Self::Weighted(w) => w.variance(),
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match self {
            Self::Gmm(g) => g.cdf(z),
            Self::Dirac(d) => d.cdf(z),
            Self::Weighted(w) => w.cdf(z),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        match self {
            Self::Gmm(g) => g.sample(rng, n),
            Self::Dirac(d) => d.sample(rng, n),
            Self::Weighted(w) => w.sample(rng, n),
        }
    }

    /// `shift + scale·Z`, the Bellman operation on a representation.
    pub fn affine(&self, shift: f64, scale: f64) -> Result<Self> {
        Ok(match self {
            Self::Gmm(g) => Self::Gmm(g.affine(shift, scale)?),
            Self::Dirac(d) => Self::Dirac(d.affine(shift, scale)?),
            Self::Weighted(w) => Self::Weighted(w.affine(shift, scale)?),
        })
    }

    /// Point mass at `at` in the same representation as `self`.
    pub fn point_mass_like(&self, at: f64) -> Self {
        match self {
            Self::Gmm(_) => Self::Gmm(GaussianMixture::single(at, VARIANCE_FLOOR)),
            Self::Dirac(d) => Self::Dirac(DiracMixture::constant(at, d.len())),
            Self::Weighted(_) => Self::Weighted(WeightedMixture::point_mass(at)),
        }
    }

    /// Components in weighted form; Dirac atoms become point masses of weight `1/m`.
    pub fn to_components(&self) -> Vec<Component> {
        match self {
            Self::Gmm(g) => g.components().to_vec(),
            Self::Dirac(d) => {
                let w = 1.0 / d.len() as f64;
                d.atoms().iter().map(|&a| Component::point(w, a)).collect()
            }
            Self::Weighted(w) => w.components().to_vec(),
        }
    }

    pub fn to_weighted(&self) -> WeightedMixture {
        match self {
            Self::Weighted(w) => w.clone(),
            other => WeightedMixture { components: other.to_components() },
        }
    }

    /// Number of atoms or components.
    pub fn size(&self) -> usize {
        match self {
            Self::Gmm(g) => g.len(),
            Self::Dirac(d) => d.len(),
            Self::Weighted(w) => w.len(),
        }
    }

    pub fn as_gmm(&self) -> Option<&GaussianMixture> {
        match self {
            Self::Gmm(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_dirac(&self) -> Option<&DiracMixture> {
        match self {
            Self::Dirac(d) => Some(d),
            _ => None,
        }
    }

    /// Interval outside of which the CDF is within ~1e-15 of 0 or 1.
    pub fn support_bounds(&self) -> (f64, f64) {
        support_bounds(&self.to_components())
    }

    /// Generalized inverse CDF `inf{z : F(z) ≥ ω}`.
    pub fn inverse_cdf(&self, omega: f64) -> f64 {
        match self {
            Self::Dirac(d) => {
                let mut sorted = d.atoms().to_vec();
                math::sort_f64(&mut sorted);
                sorted[quantile_index(omega, sorted.len())]
            }
            other => bisect_inverse_cdf(|z| other.cdf(z), omega, other.support_bounds()),
        }
    }
}

/// `[min mean − 8σ_max, max mean + 8σ_max]` over the components.
pub fn support_bounds(components: &[Component]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut smax: f64 = 0.0;
    for c in components {
        lo = lo.min(c.mean);
        hi = hi.max(c.mean);
        smax = smax.max(math::sqrt(c.variance));
    }
    (lo - 8.0 * smax, hi + 8.0 * smax)
}

pub(crate) fn bisect_inverse_cdf(cdf: impl Fn(f64) -> f64, omega: f64, (lo, hi): (f64, f64)) -> f64 {
    let (mut a, mut b) = (lo - 1.0, hi + 1.0);
    if cdf(a) >= omega {
        return a;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if cdf(mid) >= omega {
            b = mid;
        } else {
            a = mid;
        }
    }
    b
}
