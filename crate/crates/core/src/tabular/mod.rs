//! Finite MDPs with stochastic rewards and exact distributional Bellman operators.

mod fit;

pub use fit::{
    fit_tabular_critic, impute_from_quantiles, mode_clusters, Cluster, CurvePoint, FitConfig, FitLoss, FitResult,
    Representation,
};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dist::{categorical_index, Component, ValueDistribution, WeightedMixture};
use crate::error::{Error, Result};
use crate::math;
use crate::metrics;

/// Largest component count kept by the exact operators before reduction.
pub const DEFAULT_COMPONENT_CAP: usize = 256;

/// Rollouts longer than this are taken as evidence the MDP is not episodic.
pub const ROLLOUT_STEP_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub enum RewardLaw {
    Constant(f64),
    /// Uniform over a finite set of values.
    Uniform(Vec<f64>),
    Normal { mean: f64, variance: f64 },
}

impl RewardLaw {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            RewardLaw::Constant(c) => c.is_finite(),
            RewardLaw::Uniform(vs) => !vs.is_empty() && vs.iter().all(|v| v.is_finite()),
            RewardLaw::Normal { mean, variance } => mean.is_finite() && variance.is_finite() && *variance >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid reward law {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            RewardLaw::Constant(c) => *c,
            RewardLaw::Uniform(vs) => vs.iter().sum::<f64>() / vs.len() as f64,
            RewardLaw::Normal { mean, .. } => *mean,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            RewardLaw::Constant(c) => *c,
            RewardLaw::Uniform(vs) => vs[rng.random_range(0..vs.len())],
            RewardLaw::Normal { mean, variance } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + math::sqrt(*variance) * z
            }
        }
    }

    /// `(probability, mean, variance)` outcomes.
    fn outcomes(&self) -> Vec<(f64, f64, f64)> {
        match self {
            RewardLaw::Constant(c) => vec![(1.0, *c, 0.0)],
            RewardLaw::Uniform(vs) => vs.iter().map(|&v| (1.0 / vs.len() as f64, v, 0.0)).collect(),
            RewardLaw::Normal { mean, variance } => vec![(1.0, *mean, *variance)],
        }
    }
}

/// A finite MDP. Terminal states absorb with zero reward; their outgoing
/// transitions are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `P(x′ | x, a)` at `(x·A + a)·S + x′`.
    transitions: Vec<f64>,
    /// Reward law at `x·A + a`.
    rewards: Vec<RewardLaw>,
    gamma: f64,
    terminal: Vec<bool>,
}

impl TabularMdp {
    /// `γ` may be 1 for episodic MDPs.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<RewardLaw>,
        gamma: f64,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("MDP needs at least one state and action".into()));
        }
        let sa = n_states * n_actions;
        if transitions.len() != sa * n_states {
            return Err(Error::DimensionMismatch { expected: sa * n_states, got: transitions.len() });
        }
        if rewards.len() != sa {
            return Err(Error::DimensionMismatch { expected: sa, got: rewards.len() });
        }
        if terminal.len() != n_states {
            return Err(Error::DimensionMismatch { expected: n_states, got: terminal.len() });
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("discount {gamma} outside (0, 1]")));
        }
        for (row, chunk) in transitions.chunks(n_states).enumerate() {
            if terminal[row / n_actions] {
                continue;
            }
            let total: f64 = chunk.iter().sum();
            if chunk.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "transition row for state {} action {} sums to {total}",
                    row / n_actions,
                    row % n_actions
                )));
            }
        }
        for r in &rewards {
            r.validate()?;
        }
        Ok(Self { n_states, n_actions, transitions, rewards, gamma, terminal })
    }

    /// The chain `S1 → S2 → S3 → S4 → S5 → T` with a ±1 coin-flip reward on
    /// leaving S4 and `N(0, 0.1²)` on leaving S5. States are `0..5`, terminal is 5.
    pub fn five_state(gamma: f64) -> Result<Self> {
        let n = 6;
        let mut p = vec![0.0; n * n];
        for x in 0..5 {
            p[x * n + x + 1] = 1.0;
        }
        p[5 * n + 5] = 1.0;
        let mut rewards = vec![RewardLaw::Constant(0.0); n];
        rewards[3] = RewardLaw::Uniform(vec![-1.0, 1.0]);
        rewards[4] = RewardLaw::Normal { mean: 0.0, variance: 0.01 };
        let mut terminal = vec![false; n];
        terminal[5] = true;
        Self::new(n, 1, p, rewards, gamma, terminal)
    }

    /// Deterministic single-action chain with the given rewards, ending in a terminal state.
    pub fn chain(rewards: &[f64], gamma: f64) -> Result<Self> {
        let n = rewards.len() + 1;
        let mut p = vec![0.0; n * n];
        for x in 0..n - 1 {
            p[x * n + x + 1] = 1.0;
        }
        p[(n - 1) * n + n - 1] = 1.0;
        let mut laws: Vec<RewardLaw> = rewards.iter().map(|&r| RewardLaw::Constant(r)).collect();
        laws.push(RewardLaw::Constant(0.0));
        let mut terminal = vec![false; n];
        terminal[n - 1] = true;
        Self::new(n, 1, p, laws, gamma, terminal)
    }

    /// Random non-terminating MDP with Dirichlet transition rows and mixed reward laws.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<Self> {
        let mut transitions = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            transitions.extend(dirichlet(n_states, rng));
        }
        let rewards = (0..n_states * n_actions)
            .map(|_| match rng.random_range(0..3) {
                0 => RewardLaw::Constant(rng.random_range(-1.0..1.0)),
                1 => RewardLaw::Uniform(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]),
                _ => RewardLaw::Normal { mean: rng.random_range(-1.0..1.0), variance: rng.random_range(0.01..0.5) },
            })
            .collect();
        Self::new(n_states, n_actions, transitions, rewards, gamma, vec![false; n_states])
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_terminal(&self, x: usize) -> bool {
        self.terminal[x]
    }

    pub fn transition_row(&self, x: usize, a: usize) -> &[f64] {
        let start = (x * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn reward_law(&self, x: usize, a: usize) -> &RewardLaw {
        &self.rewards[x * self.n_actions + a]
    }

    /// Samples `(reward, next state)` for a non-terminal `x`.
    pub fn sample_step<R: Rng + ?Sized>(&self, x: usize, a: usize, rng: &mut R) -> (f64, usize) {
        let r = self.reward_law(x, a).sample(rng);
        let u: f64 = rng.random();
        (r, categorical_index(self.transition_row(x, a).iter().copied(), u))
    }
}

fn dirichlet<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    // Unit-rate exponentials normalized give a flat Dirichlet draw.
    let e: Vec<f64> = (0..n).map(|_| -math::ln(1.0 - rng.random::<f64>())).collect();
    let total: f64 = e.iter().sum();
    let mut out: Vec<f64> = e.iter().map(|x| x / total).collect();
    // Make the row sum to one to the last bit.
    let rest: f64 = out[..n - 1].iter().sum();
    out[n - 1] = 1.0 - rest;
    out
}

/// A stochastic policy: one probability row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_actions == 0 || probs.len() % n_actions != 0 {
            return Err(Error::InvalidArgument("policy rows must have one entry per action".into()));
        }
        for (x, row) in probs.chunks(n_actions).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("policy row for state {x} sums to {total}")));
            }
        }
        Ok(Self { n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_actions, probs: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (x, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidArgument(format!("action {a} out of range")));
            }
            probs[x * n_actions + a] = 1.0;
        }
        Ok(Self { n_actions, probs })
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn n_states(&self) -> usize {
        self.probs.len() / self.n_actions
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        categorical_index(self.row(x).iter().copied(), u)
    }

    fn check(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_actions != mdp.n_actions || self.n_states() != mdp.n_states {
            return Err(Error::InvalidArgument(format!(
                "policy is {}×{} but MDP has {} states and {} actions",
                self.n_states(),
                self.n_actions,
                mdp.n_states,
                mdp.n_actions
            )));
        }
        Ok(())
    }
}

/// One value distribution per state, or per state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    n_states: usize,
    n_actions: usize,
    per_action: bool,
    entries: Vec<ValueDistribution>,
}

impl ValueTable {
    pub fn per_state(entries: Vec<ValueDistribution>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("value table needs at least one entry".into()));
        }
        Ok(Self { n_states: entries.len(), n_actions: 1, per_action: false, entries })
    }

    pub fn per_state_action(n_actions: usize, entries: Vec<ValueDistribution>) -> Result<Self> {
        if n_actions == 0 || entries.is_empty() || entries.len() % n_actions != 0 {
            return Err(Error::InvalidArgument("value table entries must fill whole state rows".into()));
        }
        Ok(Self { n_states: entries.len() / n_actions, n_actions, per_action: true, entries })
    }

    /// Point masses at zero for every entry.
    pub fn zeros(mdp: &TabularMdp, per_action: bool) -> Self {
        let n = if per_action { mdp.n_states * mdp.n_actions } else { mdp.n_states };
        Self {
            n_states: mdp.n_states,
            n_actions: if per_action { mdp.n_actions } else { 1 },
            per_action,
            entries: vec![WeightedMixture::point_mass(0.0).into(); n],
        }
    }

    /// Random Gaussian mixtures: 1 to 3 components, means in (−5, 5),
    /// variances in (0.1, 2), flat-Dirichlet weights.
    pub fn random<R: Rng + ?Sized>(mdp: &TabularMdp, per_action: bool, rng: &mut R) -> Self {
        let mut t = Self::zeros(mdp, per_action);
        for e in &mut t.entries {
            let k = rng.random_range(1..=3);
            let w = dirichlet(k, rng);
            let comps = w
                .into_iter()
                .map(|w| Component::new(w, rng.random_range(-5.0..5.0), rng.random_range(0.1..2.0)))
                .collect();
            *e = WeightedMixture::new(comps).expect("flat Dirichlet weights are normalized").into();
        }
        t
    }

    pub fn is_per_action(&self) -> bool {
        self.per_action
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn entries(&self) -> &[ValueDistribution] {
        &self.entries
    }

    pub fn get(&self, x: usize, a: usize) -> &ValueDistribution {
        if self.per_action {
            &self.entries[x * self.n_actions + a]
        } else {
            &self.entries[x]
        }
    }

    pub fn state(&self, x: usize) -> &ValueDistribution {
        self.get(x, 0)
    }

    fn check(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states || (self.per_action && self.n_actions != mdp.n_actions) {
            return Err(Error::InvalidArgument("value table shape does not match the MDP".into()));
        }
        Ok(())
    }

    /// Largest per-entry distance under `dist`.
    pub fn sup_distance(&self, other: &Self, dist: impl Fn(&ValueDistribution, &ValueDistribution) -> Result<f64>) -> Result<f64> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::DimensionMismatch { expected: self.entries.len(), got: other.entries.len() });
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.entries.iter().zip(&other.entries) {
            worst = worst.max(dist(a, b)?);
        }
        Ok(worst)
    }
}

/// Reduces a mixture to at most `cap` components by repeatedly merging the
/// adjacent-by-mean pair whose moment-matched merge adds the least energy
/// distance. Merging preserves the mean and variance of the mixture.
pub fn reduce_mixture(mix: &WeightedMixture, cap: usize) -> WeightedMixture {
    let cap = cap.max(1);
    if mix.len() <= cap {
        return mix.clone();
    }
    let mut cs = mix.components().to_vec();
    cs.sort_unstable_by(|a, b| a.mean.total_cmp(&b.mean).then(a.variance.total_cmp(&b.variance)));
    let mut costs: Vec<f64> = (0..cs.len() - 1).map(|i| merge_cost(&cs[i], &cs[i + 1])).collect();
    while cs.len() > cap {
        let (i, _) = costs.iter().enumerate().fold((0, f64::INFINITY), |best, (i, &c)| if c < best.1 { (i, c) } else { best });
        cs[i] = merge(&cs[i], &cs[i + 1]);
        cs.remove(i + 1);
        costs.remove(i);
        if i < costs.len() {
            costs[i] = merge_cost(&cs[i], &cs[i + 1]);
        }
        if i > 0 {
            costs[i - 1] = merge_cost(&cs[i - 1], &cs[i]);
        }
    }
    WeightedMixture::from_unnormalized(cs).expect("merging preserves total weight")
}

fn merge(a: &Component, b: &Component) -> Component {
    let w = a.weight + b.weight;
    let mean = (a.weight * a.mean + b.weight * b.mean) / w;
    let second = (a.weight * (a.variance + a.mean * a.mean) + b.weight * (b.variance + b.mean * b.mean)) / w;
    Component::new(w, mean, (second - mean * mean).max(0.0))
}

fn merge_cost(a: &Component, b: &Component) -> f64 {
    let w = a.weight + b.weight;
    let pair = [Component::new(a.weight / w, a.mean, a.variance), Component::new(b.weight / w, b.mean, b.variance)];
    let m = merge(a, b);
    // Energy of a signed measure is quadratic in its mass.
    w * w * metrics::energy_components(&pair, &[Component::new(1.0, m.mean, m.variance)])
}

/// Successor mixture `Σ_{a′} π(a′|x′) Z(x′, a′)` (or `Z(x′)`), zero at terminals.
fn successor_components(table: &ValueTable, mdp: &TabularMdp, x: usize, choose: &dyn Fn(usize) -> Vec<(usize, f64)>) -> Vec<Component> {
    if mdp.terminal[x] {
        return vec![Component::point(1.0, 0.0)];
    }
    if !table.per_action {
        return table.state(x).to_components();
    }
    let mut out = Vec::new();
    for (a, p) in choose(x) {
        if p > 0.0 {
            out.extend(table.get(x, a).to_components().into_iter().map(|c| Component::new(p * c.weight, c.mean, c.variance)));
        }
    }
    out
}

/// `R(x, a) + γ·Σ_{x′} P(x′|x, a)·succ(x′)` as a weighted mixture.
fn backup(
    table: &ValueTable,
    mdp: &TabularMdp,
    x: usize,
    a: usize,
    choose: &dyn Fn(usize) -> Vec<(usize, f64)>,
) -> Vec<Component> {
    let g = mdp.gamma;
    let outcomes = mdp.reward_law(x, a).outcomes();
    let mut comps = Vec::new();
    for (x2, &p) in mdp.transition_row(x, a).iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let succ = successor_components(table, mdp, x2, choose);
        for &(pr, rm, rv) in &outcomes {
            comps.extend(succ.iter().map(|c| Component::new(p * pr * c.weight, rm + g * c.mean, g * g * c.variance + rv)));
        }
    }
    comps
}

fn finish(comps: Vec<Component>, cap: usize) -> Result<ValueDistribution> {
    let w = WeightedMixture::from_unnormalized(comps)?.compact();
    Ok(reduce_mixture(&w, cap).into())
}

fn apply_with(
    table: &ValueTable,
    mdp: &TabularMdp,
    cap: usize,
    state_weights: &dyn Fn(usize) -> Vec<(usize, f64)>,
    successor_choice: &dyn Fn(usize) -> Vec<(usize, f64)>,
) -> Result<ValueTable> {
    table.check(mdp)?;
    let mut entries = Vec::with_capacity(table.entries.len());
    for x in 0..mdp.n_states {
        let actions: Vec<usize> = if table.per_action { (0..mdp.n_actions).collect() } else { vec![usize::MAX] };
        for a in actions {
            if mdp.terminal[x] {
                entries.push(WeightedMixture::point_mass(0.0).into());
                continue;
            }
            let comps = if a == usize::MAX {
                let mut all = Vec::new();
                for (b, pb) in state_weights(x) {
                    if pb > 0.0 {
                        all.extend(
                            backup(table, mdp, x, b, successor_choice)
                                .into_iter()
                                .map(|c| Component::new(pb * c.weight, c.mean, c.variance)),
                        );
                    }
                }
                all
            } else {
                backup(table, mdp, x, a, successor_choice)
            };
            entries.push(finish(comps, cap)?);
        }
    }
    Ok(ValueTable { entries, ..table.clone() })
}

/// Exact distributional Bellman operator `T^π` on a state or state-action table,
/// reduced to at most [`DEFAULT_COMPONENT_CAP`] components per entry.
pub fn bellman_apply(table: &ValueTable, mdp: &TabularMdp, pi: &Policy) -> Result<ValueTable> {
    bellman_apply_capped(table, mdp, pi, DEFAULT_COMPONENT_CAP)
}

pub fn bellman_apply_capped(table: &ValueTable, mdp: &TabularMdp, pi: &Policy, cap: usize) -> Result<ValueTable> {
    pi.check(mdp)?;
    let by_policy = |x: usize| pi.row(x).iter().copied().enumerate().collect::<Vec<_>>();
    apply_with(table, mdp, cap, &by_policy, &by_policy)
}

/// Index of the action with the largest mean; ties go to the lowest index.
pub fn greedy_action(table: &ValueTable, x: usize) -> usize {
    let mut best = 0;
    let mut best_mean = table.get(x, 0).mean();
    for a in 1..table.n_actions {
        let m = table.get(x, a).mean();
        if m > best_mean + 1e-12 * best_mean.abs().max(1.0) {
            best = a;
            best_mean = m;
        }
    }
    best
}

/// Distributional optimality operator: successors follow the greedy action by mean.
pub fn bellman_optimality_apply(table: &ValueTable, mdp: &TabularMdp) -> Result<ValueTable> {
    if !table.per_action {
        return Err(Error::InvalidArgument("the optimality operator needs a state-action table".into()));
    }
    let greedy = |x: usize| vec![(greedy_action(table, x), 1.0)];
    let unused = |_: usize| Vec::new();
    apply_with(table, mdp, DEFAULT_COMPONENT_CAP, &unused, &greedy)
}

/// Iterates `T^π` from zero until successive tables are within `tol` in sup
/// energy distance.
pub fn fixpoint(mdp: &TabularMdp, pi: &Policy, per_action: bool, tol: f64, max_iters: usize) -> Result<(ValueTable, usize)> {
    let mut table = ValueTable::zeros(mdp, per_action);
    for it in 1..=max_iters {
        let next = bellman_apply(&table, mdp, pi)?;
        let d = next.sup_distance(&table, |a, b| Ok(metrics::energy(a, b)))?;
        table = next;
        if d < tol {
            return Ok((table, it));
        }
    }
    Err(Error::NumericAccuracy(format!("no fixpoint within {max_iters} iterations")))
}

/// Closed-form return law of the five-state chain from state `x` (`0..=5`).
pub fn five_state_return_law(x: usize, gamma: f64) -> ValueDistribution {
    match x {
        0..=3 => {
            let coin = math::powi(gamma, 3 - x as i32);
            let noise = math::powi(gamma, 2 * (4 - x as i32)) * 0.01;
            WeightedMixture::new(vec![Component::new(0.5, -coin, noise), Component::new(0.5, coin, noise)])
                .expect("equal weights")
                .into()
        }
        4 => WeightedMixture::new(vec![Component::new(1.0, 0.0, 0.01)]).expect("unit weight").into(),
        _ => WeightedMixture::point_mass(0.0).into(),
    }
}

/// One transition of a rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next: usize,
}

/// Samples an episode from `start` until a terminal state is entered.
pub fn rollout<R: Rng + ?Sized>(mdp: &TabularMdp, pi: &Policy, start: usize, rng: &mut R) -> Result<Vec<Transition>> {
    let mut out = Vec::new();
    let mut x = start;
    while !mdp.terminal[x] {
        if out.len() >= ROLLOUT_STEP_CAP {
            return Err(Error::NonEpisodic(ROLLOUT_STEP_CAP));
        }
        let a = pi.sample(x, rng);
        let (reward, next) = mdp.sample_step(x, a, rng);
        out.push(Transition { state: x, action: a, reward, next });
        x = next;
    }
    Ok(out)
}

/// Empirical return distribution from `episodes` independent rollouts.
pub fn ground_truth_monte_carlo<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    pi: &Policy,
    state: usize,
    episodes: usize,
    rng: &mut R,
) -> Result<crate::dist::DiracMixture> {
    pi.check(mdp)?;
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be >= 1".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut g = 0.0;
        let mut discount = 1.0;
        for t in rollout(mdp, pi, state, rng)? {
            g += discount * t.reward;
            discount *= mdp.gamma;
        }
        returns.push(g);
    }
    crate::dist::DiracMixture::new(returns)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionTrial {
    pub cramer_before: f64,
    pub cramer_after: f64,
    pub energy_before: f64,
    pub energy_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub gamma: f64,
    pub exponent: f64,
    pub trials: Vec<ContractionTrial>,
    /// Offending trials with both input tables.
    pub violations: Vec<(usize, ValueTable, ValueTable)>,
}

impl ContractionReport {
    pub fn passed(&self) -> usize {
        self.trials.len() - self.violations.len()
    }

    pub fn all_passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Sup-Cramér `l_p` distance between tables.
pub fn sup_cramer(a: &ValueTable, b: &ValueTable, exponent: f64) -> Result<f64> {
    a.sup_distance(b, |p, q| metrics::cramer_lp_numeric(p, q, exponent).map(|r| r.value))
}

/// Checks on random table pairs that `T^π` contracts the sup-Cramér `l_p`
/// distance by `γ^{1/p}` and the sup energy distance by `γ`.
pub fn contraction_check<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    pi: &Policy,
    trials: usize,
    exponent: f64,
    rng: &mut R,
) -> Result<ContractionReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let factor = libm::pow(mdp.gamma, 1.0 / exponent);
    let mut report = ContractionReport { gamma: mdp.gamma, exponent, trials: Vec::new(), violations: Vec::new() };
    for i in 0..trials {
        let z1 = ValueTable::random(mdp, true, rng);
        let z2 = ValueTable::random(mdp, true, rng);
        let t1 = bellman_apply(&z1, mdp, pi)?;
        let t2 = bellman_apply(&z2, mdp, pi)?;
        let trial = ContractionTrial {
            cramer_before: sup_cramer(&z1, &z2, exponent)?,
            cramer_after: sup_cramer(&t1, &t2, exponent)?,
            energy_before: z1.sup_distance(&z2, |p, q| Ok(metrics::energy(p, q)))?,
            energy_after: t1.sup_distance(&t2, |p, q| Ok(metrics::energy(p, q)))?,
        };
        let ok = trial.cramer_after <= factor * trial.cramer_before + 1e-6
            && trial.energy_after <= mdp.gamma * trial.energy_before + 1e-6;
        if !ok {
            report.violations.push((i, z1, z2));
        }
        report.trials.push(trial);
    }
    Ok(report)
}

/// Sup-Cramér `l_2` distances between two tables under repeated application
/// of the optimality operator, on a two-action MDP where the tables differ
/// only by `±ε` in one action whose mean ties with a riskier action.
#[derive(Debug, Clone, PartialEq)]
pub struct InstabilityDemo {
    pub gamma: f64,
    pub distances: Vec<f64>,
}

impl InstabilityDemo {
    /// Ratio of the first post-update distance to the initial one, next to
    /// the contraction factor `√γ` it would need to stay under.
    pub fn first_ratio(&self) -> (f64, f64) {
        (self.distances[1] / self.distances[0], math::sqrt(self.gamma))
    }

    pub fn describe(&self) -> String {
        let (ratio, bound) = self.first_ratio();
        format!("sup-l2 distances {:?}; first-step ratio {ratio:.3} vs sqrt(gamma) {bound:.3}", self.distances)
    }
}

pub fn optimality_instability_demo(gamma: f64, eps: f64, iterations: usize) -> Result<InstabilityDemo> {
    // s0 moves to s1 with reward 0 under both actions; at s1 action 0 ends
    // with reward 0 and action 1 ends with a fair ±1 coin.
    let (s, a) = (3, 2);
    let mut p = vec![0.0; s * a * s];
    for act in 0..a {
        p[act * s + 1] = 1.0;
        p[(a + act) * s + 2] = 1.0;
        p[(2 * a + act) * s + 2] = 1.0;
    }
    let rewards = vec![
        RewardLaw::Constant(0.0),
        RewardLaw::Constant(0.0),
        RewardLaw::Constant(0.0),
        RewardLaw::Uniform(vec![-1.0, 1.0]),
        RewardLaw::Constant(0.0),
        RewardLaw::Constant(0.0),
    ];
    let mdp = TabularMdp::new(s, a, p, rewards, gamma, vec![false, false, true])?;
    let coin: ValueDistribution =
        WeightedMixture::new(vec![Component::point(0.5, -1.0), Component::point(0.5, 1.0)])?.into();
    let zero: ValueDistribution = WeightedMixture::point_mass(0.0).into();
    let make = |shift: f64| {
        ValueTable::per_state_action(
            a,
            vec![zero.clone(), zero.clone(), WeightedMixture::point_mass(shift).into(), coin.clone(), zero.clone(), zero.clone()],
        )
    };
    let (mut z1, mut z2) = (make(eps)?, make(-eps)?);
    let mut distances = vec![sup_cramer(&z1, &z2, 2.0)?];
    for _ in 0..iterations {
        z1 = bellman_optimality_apply(&z1, &mdp)?;
        z2 = bellman_optimality_apply(&z2, &mdp)?;
        distances.push(sup_cramer(&z1, &z2, 2.0)?);
    }
    Ok(InstabilityDemo { gamma, distances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DiracMixture;
    use crate::rng;

    fn point(v: f64) -> ValueDistribution {
        WeightedMixture::point_mass(v).into()
    }

    #[test]
    fn rejects_bad_transition_rows() {
        let p = vec![0.5, 0.4, 0.0, 1.0];
        let r = vec![RewardLaw::Constant(0.0); 2];
        assert!(TabularMdp::new(2, 1, p, r, 0.9, vec![false, false]).is_err());
        assert!(TabularMdp::five_state(1.5).is_err());
    }

    #[test]
    fn all_terminal_successors_give_reward_point_masses() {
        let p = vec![0.0, 1.0, 0.0, 1.0];
        let r = vec![RewardLaw::Constant(2.5), RewardLaw::Constant(0.0)];
        let mdp = TabularMdp::new(2, 1, p, r, 0.9, vec![false, true]).unwrap();
        let pi = Policy::uniform(2, 1);
        let t = bellman_apply(&ValueTable::random(&mdp, false, &mut rng::stream(0, 0)), &mdp, &pi).unwrap();
        assert!(metrics::energy(t.state(0), &point(2.5)) < 1e-15);
        assert!(metrics::energy(t.state(1), &point(0.0)) < 1e-15);
    }

    #[test]
    fn chain_converges_to_discounted_sum() {
        let rewards = [1.0, -2.0, 0.5, 3.0];
        let mdp = TabularMdp::chain(&rewards, 0.9).unwrap();
        let pi = Policy::uniform(5, 1);
        let mut t = ValueTable::zeros(&mdp, false);
        for _ in 0..4 {
            t = bellman_apply(&t, &mdp, &pi).unwrap();
        }
        let want: f64 = rewards.iter().enumerate().map(|(i, r)| 0.9f64.powi(i as i32) * r).sum();
        assert!(metrics::energy(t.state(0), &point(want)) < 1e-15);
    }

    #[test]
    fn five_state_fixpoint_matches_closed_form() {
        for gamma in [1.0, 0.9] {
            let mdp = TabularMdp::five_state(gamma).unwrap();
            let pi = Policy::uniform(6, 1);
            let (t, iters) = fixpoint(&mdp, &pi, false, 1e-14, 50).unwrap();
            assert!(iters <= 7);
            for x in 0..6 {
                assert!(metrics::energy(t.state(x), &five_state_return_law(x, gamma)) < 1e-6);
            }
        }
    }

    #[test]
    fn mean_commutes_with_scalar_bellman() {
        let mut r = rng::stream(1, 1);
        for _ in 0..10 {
            let mdp = TabularMdp::random(4, 2, 0.85, &mut r).unwrap();
            let pi = Policy::new(2, (0..4).flat_map(|_| dirichlet(2, &mut r)).collect()).unwrap();
            for per_action in [false, true] {
                let z = ValueTable::random(&mdp, per_action, &mut r);
                let tz = bellman_apply(&z, &mdp, &pi).unwrap();
                let means = |x: usize| -> f64 {
                    if per_action {
                        (0..2).map(|a| pi.row(x)[a] * z.get(x, a).mean()).sum()
                    } else {
                        z.state(x).mean()
                    }
                };
                for x in 0..4 {
                    let backup_at = |a: usize| -> f64 {
                        mdp.reward_law(x, a).mean()
                            + 0.85 * mdp.transition_row(x, a).iter().enumerate().map(|(y, p)| p * means(y)).sum::<f64>()
                    };
                    if per_action {
                        for a in 0..2 {
                            assert!((tz.get(x, a).mean() - backup_at(a)).abs() < 1e-10);
                        }
                    } else {
                        let want: f64 = (0..2).map(|a| pi.row(x)[a] * backup_at(a)).sum();
                        assert!((tz.state(x).mean() - want).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn fixpoint_is_unique() {
        let mut r = rng::stream(2, 2);
        let mdp = TabularMdp::random(3, 2, 0.8, &mut r).unwrap();
        let pi = Policy::uniform(3, 2);
        let mut a = ValueTable::random(&mdp, true, &mut r);
        let mut b = ValueTable::random(&mdp, true, &mut r);
        for _ in 0..200 {
            a = bellman_apply_capped(&a, &mdp, &pi, 32).unwrap();
            b = bellman_apply_capped(&b, &mdp, &pi, 32).unwrap();
        }
        let d = a.sup_distance(&b, |p, q| Ok(metrics::energy(p, q))).unwrap();
        assert!(d < 1e-6, "sup energy {d}");
    }

    #[test]
    fn reduction_preserves_moments_and_caps_size() {
        let mut r = rng::stream(3, 3);
        let comps: Vec<Component> = (0..300)
            .map(|_| Component::new(r.random_range(0.1..1.0), r.random_range(-3.0..3.0), r.random_range(0.0..0.5)))
            .collect();
        let mix = WeightedMixture::from_unnormalized(comps).unwrap();
        let small = reduce_mixture(&mix, 40);
        assert_eq!(small.len(), 40);
        assert!((small.mean() - mix.mean()).abs() < 1e-12);
        assert!((small.variance() - mix.variance()).abs() < 1e-10);
        assert!(metrics::energy(&small.clone().into(), &mix.into()) < 1e-3);
    }

    #[test]
    fn optimality_operator_breaks_ties_toward_action_zero() {
        let (s, a) = (2, 2);
        let mut p = vec![0.0; s * a * s];
        for act in 0..a {
            p[act * s + 1] = 1.0;
            p[(a + act) * s + 1] = 1.0;
        }
        let mdp = TabularMdp::new(s, a, p, vec![RewardLaw::Constant(0.0); 4], 0.5, vec![false, true]).unwrap();
        let pi = Policy::uniform(2, 2);
        let z = ValueTable::random(&mdp, true, &mut rng::stream(4, 4));
        let single = bellman_optimality_apply(&z, &mdp).unwrap();
        let policy = bellman_apply(&z, &mdp, &pi).unwrap();
        assert_eq!(single, policy);

        // Two actions at s0 with equal means but different spreads, reached from s1.
        let (s, a) = (3, 2);
        let mut p = vec![0.0; s * a * s];
        for act in 0..a {
            p[act * s + 2] = 1.0;
            p[(a + act) * s] = 1.0;
            p[(2 * a + act) * s + 2] = 1.0;
        }
        let mdp = TabularMdp::new(s, a, p, vec![RewardLaw::Constant(0.0); 6], 1.0, vec![false, false, true]).unwrap();
        let wide: ValueDistribution =
            WeightedMixture::new(vec![Component::point(0.5, -1.0), Component::point(0.5, 1.0)]).unwrap().into();
        let z = ValueTable::per_state_action(2, vec![point(0.0), wide, point(0.0), point(0.0), point(0.0), point(0.0)]).unwrap();
        assert_eq!(greedy_action(&z, 0), 0);
        let tz = bellman_optimality_apply(&z, &mdp).unwrap();
        assert!(metrics::energy(tz.get(1, 0), &point(0.0)) < 1e-15);
    }

    #[test]
    fn instability_demo_runs() {
        let demo = optimality_instability_demo(0.9, 1e-3, 3).unwrap();
        assert_eq!(demo.distances.len(), 4);
        assert!(demo.distances.iter().all(|d| d.is_finite() && *d >= 0.0));
        let _ = demo.describe();
    }

    #[test]
    fn monte_carlo_on_deterministic_chain() {
        let mdp = TabularMdp::chain(&[0.0, 0.0, 1.0], 0.5).unwrap();
        let pi = Policy::uniform(4, 1);
        let d = ground_truth_monte_carlo(&mdp, &pi, 0, 50, &mut rng::stream(5, 5)).unwrap();
        assert!(d.atoms().iter().all(|&a| a == 0.25));
    }

    #[test]
    fn non_episodic_mdp_is_diagnosed() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![RewardLaw::Constant(1.0)], 0.9, vec![false]).unwrap();
        let pi = Policy::uniform(1, 1);
        let err = ground_truth_monte_carlo(&mdp, &pi, 0, 1, &mut rng::stream(6, 6)).unwrap_err();
        assert_eq!(err, Error::NonEpisodic(ROLLOUT_STEP_CAP));
    }

    #[test]
    fn five_state_monte_carlo_matches_closed_form() {
        let mdp = TabularMdp::five_state(1.0).unwrap();
        let pi = Policy::uniform(6, 1);
        let mut r = rng::stream(7, 7);
        let d = ground_truth_monte_carlo(&mdp, &pi, 0, 100_000, &mut r).unwrap();
        let se = libm::sqrt(d.variance() / 1e5);
        assert!(d.mean().abs() < 4.0 * se);
        let (neg, pos): (Vec<f64>, Vec<f64>) = d.atoms().iter().partition(|a| **a < 0.0);
        for (cluster, centre) in [(neg, -1.0), (pos, 1.0)] {
            let m = cluster.iter().sum::<f64>() / cluster.len() as f64;
            let sd = libm::sqrt(cluster.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / cluster.len() as f64);
            assert!((m - centre).abs() < 0.01 && (sd - 0.1).abs() < 0.01);
        }
    }

    #[test]
    fn monte_carlo_error_halves_when_episodes_double() {
        // Expected energy distance of an n-sample empirical law is E|X − X′|/n.
        // A single draw is dominated by the mode-count imbalance, a one-degree
        // chi-square, so many seeds are averaged.
        let mdp = TabularMdp::five_state(1.0).unwrap();
        let pi = Policy::uniform(6, 1);
        let truth = five_state_return_law(0, 1.0);
        let mut r = rng::stream(8, 8);
        let (mut small, mut large) = (0.0, 0.0);
        for _ in 0..1000 {
            let a: ValueDistribution = ground_truth_monte_carlo(&mdp, &pi, 0, 100, &mut r).unwrap().into();
            let b: ValueDistribution = ground_truth_monte_carlo(&mdp, &pi, 0, 200, &mut r).unwrap().into();
            small += metrics::energy(&a, &truth);
            large += metrics::energy(&b, &truth);
        }
        let ratio = small / large;
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn contraction_equality_on_self_loop() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![RewardLaw::Constant(0.0)], 0.64, vec![false]).unwrap();
        let pi = Policy::uniform(1, 1);
        let (a, b) = (2.0, -1.0);
        let z1 = ValueTable::per_state_action(1, vec![point(a)]).unwrap();
        let z2 = ValueTable::per_state_action(1, vec![point(b)]).unwrap();
        let t1 = bellman_apply(&z1, &mdp, &pi).unwrap();
        let t2 = bellman_apply(&z2, &mdp, &pi).unwrap();
        let after = sup_cramer(&t1, &t2, 2.0).unwrap();
        assert!((after - 0.8 * libm::sqrt(3.0)).abs() < 1e-9);
        assert!((sup_cramer(&z1, &z2, 2.0).unwrap() - libm::sqrt(3.0)).abs() < 1e-9);
    }

    #[test]
    fn identical_tables_are_at_distance_zero() {
        let mut r = rng::stream(9, 9);
        let mdp = TabularMdp::random(3, 2, 0.9, &mut r).unwrap();
        let pi = Policy::uniform(3, 2);
        let z = ValueTable::random(&mdp, true, &mut r);
        let t = bellman_apply(&z, &mdp, &pi).unwrap();
        assert_eq!(sup_cramer(&z, &z, 2.0).unwrap(), 0.0);
        assert_eq!(sup_cramer(&t, &t, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn contraction_holds_on_random_mdps() {
        let mut r = rng::stream(10, 10);
        for _ in 0..5 {
            let g = r.random_range(0.5..0.99);
            let mdp = TabularMdp::random(6, 2, g, &mut r).unwrap();
            let pi = Policy::uniform(6, 2);
            let report = contraction_check(&mdp, &pi, 3, 2.0, &mut r).unwrap();
            assert!(report.all_passed(), "{:?}", report.trials);
        }
    }

    #[test]
    fn dirac_entries_are_accepted() {
        let mdp = TabularMdp::chain(&[1.0], 0.5).unwrap();
        let pi = Policy::uniform(2, 1);
        let z = ValueTable::per_state(vec![DiracMixture::new(vec![1.0, 3.0]).unwrap().into(), point(0.0)]).unwrap();
        let t = bellman_apply(&z, &mdp, &pi).unwrap();
        assert!(metrics::energy(t.state(0), &point(1.0)) < 1e-15);
    }
}
