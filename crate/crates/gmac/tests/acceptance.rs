//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Criterion numbers given as arguments select a
//! subset:
//!
//! ```text
//! cargo test -p gmac --test acceptance -- 2 4 7
//! ```

use std::time::{Duration, Instant};

use gmac::cli::{flops_table, FlopsArgs};
use gmac::config::{RunConfig, Settings, Source, ToyConfig, ToyLoss};
use gmac::toy::{contraction_trials, fit_seed, load_toy_mdp, summarize};
use gmac::train::{evaluate_network, mean_std};
use gmac_core::agent::{gmm_head_overhead, minibatch_objective, Agent, Sample, TrainConfig, Variant};
use gmac_core::dist::{Component, DiracMixture, GaussianMixture, ValueDistribution};
use gmac_core::envs::{evaluate, ActionSpace, GridLayout, Gridworld, Lqr1d};
use gmac_core::flops::FlopCounter;
use gmac_core::metrics::{cramer_lp_integral, energy_components, energy_gmm, energy_gmm_grad};
use gmac_core::nn::{Action, Activation, NetSpec, Network, PolicyKind};
use gmac_core::rng::{self, StreamRng};
use gmac_core::srlambda::{scalar_lambda_return, sr_lambda_dirac, sr_lambda_gmm, RewardTrajectory};
use rand::Rng;

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "energy fits recover both modes where quantile conflation does not", budget: Duration::from_secs(10 * 120), check: two_mode_fits },
    Criterion { id: 2, name: "SR(lambda) targets average to the scalar lambda-return", budget: Duration::from_secs(60), check: sr_lambda_mean },
    Criterion { id: 3, name: "policy evaluation contracts Cramer and energy distances", budget: Duration::from_secs(60), check: contraction },
    Criterion { id: 4, name: "squared Cramer distance is half the energy distance", budget: Duration::from_secs(60), check: cramer_energy_identity },
    Criterion { id: 5, name: "closed-form GMM energy distance agrees with Monte Carlo", budget: Duration::from_secs(120), check: closed_form_vs_sampled },
    Criterion { id: 6, name: "single-sample Cramer gradients are unbiased", budget: Duration::from_secs(120), check: unbiased_sample_gradient },
    Criterion { id: 7, name: "minibatch loss gradients match finite differences", budget: Duration::from_secs(60), check: gradient_integrity },
    Criterion { id: 8, name: "update cost ordering and GMM head overhead", budget: Duration::from_secs(60), check: flop_ordering },
    Criterion { id: 9, name: "GMAC solves the 5x5 gridworld and keeps up with PPO", budget: Duration::from_secs(20 * 60), check: gridworld_training },
    Criterion { id: 10, name: "GMAC approaches the Riccati controller on lqr1d", budget: Duration::from_secs(10 * 60), check: lqr_training },
];

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for c in CRITERIA.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (c.check)();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok((ok, detail)) if elapsed <= c.budget => (ok, detail),
            Ok((_, detail)) => (false, format!("{detail}; over the {}s budget", c.budget.as_secs())),
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "{} {:>2} {} [{:.1}s]: {detail}",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
        if !pass {
            failed.push(c.id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

fn random_gmm(g: &mut StreamRng, max_k: usize) -> GaussianMixture {
    let k = g.random_range(1..=max_k);
    let raw: Vec<f64> = (0..k).map(|_| g.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let comps = raw.iter().map(|w| Component::new(w / total, g.random_range(-3.0..3.0), g.random_range(0.05..2.0))).collect();
    GaussianMixture::new(comps).expect("valid mixture")
}

fn two_mode_fits() -> Outcome {
    let cfg = ToyConfig::from_settings(&Settings::new())?;
    let (mdp, pi, start) = load_toy_mdp(&cfg.mdp)?;
    let (mut modes, mut variance, mut distance) = (0, 0, 0);
    let mut slowest = 0.0f64;
    let mut notes = Vec::new();
    for seed in 0..10 {
        let t = Instant::now();
        let report = fit_seed(&cfg, &mdp, &pi, start, seed)?;
        slowest = slowest.max(t.elapsed().as_secs_f64());
        let rows = summarize(&report);
        let row = |l: ToyLoss| rows.iter().find(|r| r.loss == l).expect("every loss fitted");
        let energy_fits = [row(ToyLoss::EnergyGmm), row(ToyLoss::EnergySamples)];
        let huber = row(ToyLoss::HuberQuantile);
        let modes_ok = energy_fits.iter().all(|f| {
            f.clusters
                .iter()
                .zip([-1.0, 1.0])
                .all(|(c, at)| (c.mean - at).abs() <= 0.05 && (0.05..=0.2).contains(&c.std))
        });
        if !modes_ok {
            for f in energy_fits {
                let [lo, hi] = f.clusters;
                notes.push(format!(
                    "seed {seed} {}: modes {:.3}/{:.3} std {:.3}/{:.3}",
                    f.loss.name(),
                    lo.mean,
                    hi.mean,
                    lo.std,
                    hi.std
                ));
            }
        }
        modes += modes_ok as usize;
        variance += (huber.variance <= 0.85 * huber.truth_variance) as usize;
        distance += energy_fits.iter().all(|f| f.final_energy < huber.final_energy) as usize;
    }
    let pass = modes == 10 && variance == 10 && distance >= 9 && slowest < 120.0;
    let mut detail = format!(
        "modes placed on {modes}/10 seeds, quantile variance >=15% low on {variance}/10, \
         energy fits closer than quantile fit on {distance}/10, slowest seed {slowest:.1}s"
    );
    if !notes.is_empty() {
        detail += &format!(" ({})", notes.join("; "));
    }
    Ok((pass, detail))
}

fn sr_lambda_mean() -> Outcome {
    const R: usize = 10_000;
    let mut g = rng::stream(2, 0);
    let mut worst_z = 0.0f64;
    let mut worst_exact = 0.0f64;
    let mut pass = true;
    for traj in 0..4 {
        let n = 8;
        let rewards: Vec<f64> = (0..n).map(|_| g.random_range(-1.0..1.0)).collect();
        let mut terminals = vec![false; n];
        if traj % 2 == 1 {
            terminals[g.random_range(2..n)] = true;
        }
        let dirac = |g: &mut StreamRng| -> ValueDistribution {
            DiracMixture::new((0..8).map(|_| g.random_range(-2.0..2.0)).collect()).unwrap().into()
        };
        let gmm = |g: &mut StreamRng| -> ValueDistribution { random_gmm(g, 3).into() };
        let dirac_values: Vec<_> = (0..n).map(|_| dirac(&mut g)).collect();
        let dirac_boot = dirac(&mut g);
        let gmm_values: Vec<_> = (0..n).map(|_| gmm(&mut g)).collect();
        let gmm_boot = gmm(&mut g);
        for lambda in [0.0, 0.3, 0.95, 1.0] {
            for gmm_form in [false, true] {
                let (values, boot) = if gmm_form { (&gmm_values, &gmm_boot) } else { (&dirac_values, &dirac_boot) };
                let tr = RewardTrajectory::new(rewards.clone(), &terminals, values.clone(), boot.clone(), 0.9, lambda)?;
                let mut sum = vec![0.0; n];
                let mut sq = vec![0.0; n];
                for _ in 0..R {
                    let targets = if gmm_form { sr_lambda_gmm(&tr, 4, &mut g)? } else { sr_lambda_dirac(&tr, &mut g)? };
                    for (t, z) in targets.targets.iter().enumerate() {
                        let m = z.mean();
                        sum[t] += m;
                        sq[t] += m * m;
                    }
                }
                for t in 0..n {
                    let mean = sum[t] / R as f64;
                    let se = ((sq[t] / R as f64 - mean * mean).max(0.0) / (R as f64 - 1.0)).sqrt();
                    let diff = (mean - scalar_lambda_return(&tr, t)).abs();
                    // Atom replacement is deterministic at the ends of the
                    // lambda range; particle draws from a mixture are not.
                    if !gmm_form && (lambda == 0.0 || lambda == 1.0) {
                        worst_exact = worst_exact.max(diff);
                        pass &= diff < 1e-9;
                    } else {
                        let z = if se > 0.0 { diff / se } else if diff < 1e-12 { 0.0 } else { f64::INFINITY };
                        worst_z = worst_z.max(z);
                        pass &= z <= 4.0;
                    }
                }
            }
        }
    }
    Ok((pass, format!("largest deviation {worst_z:.2} SE (atoms at lambda 0.3/0.95, particles at all lambda), atoms exact to {worst_exact:.1e} at lambda 0/1")))
}

fn contraction() -> Outcome {
    let report = contraction_trials(100, 0)?;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let cramer = report.trials.iter().map(|t| ratio(t.cramer_after, t.cramer_before)).fold(0.0, f64::max);
    let energy = report.trials.iter().map(|t| ratio(t.energy_after, t.energy_before)).fold(0.0, f64::max);
    Ok((
        report.trials.len() == 100 && report.all_passed(),
        format!(
            "{}/{} trials within bounds; worst ratios {cramer:.4} (bound {:.4}) and {energy:.4} (bound {:.4})",
            report.passed(),
            report.trials.len(),
            report.gamma.sqrt(),
            report.gamma
        ),
    ))
}

fn cramer_energy_identity() -> Outcome {
    let mut g = rng::stream(4, 0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (a, b) = (random_gmm(&mut g, 4), random_gmm(&mut g, 4));
        let l2sq = cramer_lp_integral(&a.clone().into(), &b.clone().into(), 2.0)?;
        worst = worst.max((l2sq - energy_gmm(&a, &b) / 2.0).abs());
    }
    Ok((worst < 1e-4, format!("largest |l2^2 - E/2| over 200 pairs {worst:.2e}")))
}

fn closed_form_vs_sampled() -> Outcome {
    const N: usize = 1_000_000;
    let mut g = rng::stream(5, 0);
    let mut worst = 0.0f64;
    let mut within = 0;
    for _ in 0..50 {
        let (a, b) = (random_gmm(&mut g, 3), random_gmm(&mut g, 3));
        let (u, u2, v, v2) = (a.sample(&mut g, N), a.sample(&mut g, N), b.sample(&mut g, N), b.sample(&mut g, N));
        let (mut sum, mut sq) = (0.0, 0.0);
        for i in 0..N {
            let h = 2.0 * (u[i] - v[i]).abs() - (u[i] - u2[i]).abs() - (v[i] - v2[i]).abs();
            sum += h;
            sq += h * h;
        }
        let mean = sum / N as f64;
        let se = ((sq / N as f64 - mean * mean) / (N as f64 - 1.0)).sqrt();
        let z = (mean - energy_gmm(&a, &b)).abs() / se;
        worst = worst.max(z);
        within += (z <= 3.0) as usize;
    }
    Ok((within == 50, format!("{within}/50 pairs within 3 SE; largest deviation {worst:.2} SE")))
}

/// Exact gradient of `l2^2(P, Q) = E(P, Q)/2` in Q's weights, means and
/// variances by central differences of the closed form.
fn fd_cramer_gradient(q: &[Component], p: &[Component]) -> Vec<f64> {
    let h = 1e-5;
    let mut out = Vec::with_capacity(3 * q.len());
    for field in 0..3 {
        for k in 0..q.len() {
            let at = |d: f64| {
                let mut qq = q.to_vec();
                match field {
                    0 => qq[k].weight += d,
                    1 => qq[k].mean += d,
                    _ => qq[k].variance += d,
                }
                energy_components(&qq, p) / 2.0
            };
            out.push((at(h) - at(-h)) / (2.0 * h));
        }
    }
    out
}

fn unbiased_sample_gradient() -> Outcome {
    const R: usize = 10_000;
    let mut g = rng::stream(6, 0);
    let mut worst = 0.0f64;
    let mut pass = true;
    for _ in 0..3 {
        let q = GaussianMixture::from_triples(&[
            (0.2, g.random_range(-2.0..2.0), g.random_range(0.2..1.0)),
            (0.3, g.random_range(-2.0..2.0), g.random_range(0.2..1.0)),
            (0.5, g.random_range(-2.0..2.0), g.random_range(0.2..1.0)),
        ])?;
        let p = random_gmm(&mut g, 3);
        let exact = fd_cramer_gradient(q.components(), p.components());
        let mut sum = vec![0.0; exact.len()];
        let mut sq = vec![0.0; exact.len()];
        for x in p.sample(&mut g, R) {
            let (_, grad) = energy_gmm_grad(q.components(), &[Component::new(1.0, x, 0.0)], &mut FlopCounter::new());
            let flat = grad.weights.iter().chain(&grad.means).chain(&grad.variances).map(|d| d / 2.0);
            for (i, d) in flat.enumerate() {
                sum[i] += d;
                sq[i] += d * d;
            }
        }
        for i in 0..exact.len() {
            let mean = sum[i] / R as f64;
            let se = ((sq[i] / R as f64 - mean * mean).max(0.0) / (R as f64 - 1.0)).sqrt();
            let z = (mean - exact[i]).abs() / se.max(1e-300);
            worst = worst.max(z);
            pass &= z <= 4.0;
        }
    }
    Ok((pass, format!("27 components over 3 mixtures; largest deviation {worst:.2} SE")))
}

fn fd_batch(cfg: &TrainConfig, policy: PolicyKind, g: &mut StreamRng) -> Result<(Network, Vec<Sample>), Box<dyn std::error::Error>> {
    let spec = NetSpec { input: 4, hidden: vec![6, 5], activation: Activation::Tanh, policy, value: cfg.value_head() };
    let net = Network::new(spec, g)?;
    let mut samples = Vec::new();
    for _ in 0..6 {
        let obs: Vec<f64> = (0..4).map(|_| g.random_range(-1.0..1.0)).collect();
        let out = net.infer(&obs, &mut FlopCounter::new())?;
        let dist = net.policy_dist(&out, &mut FlopCounter::new());
        let action = dist.sample(g);
        let target = match cfg.variant {
            Variant::PpoScalar => None,
            Variant::Gmac => {
                let pairs: Vec<(f64, f64)> =
                    (0..cfg.sr_particles).map(|_| (g.random_range(-1.0..1.0), g.random_range(0.05..0.5))).collect();
                Some(GaussianMixture::equal_weight(&pairs)?.into())
            }
            Variant::Iqac | Variant::IqacE => {
                Some(DiracMixture::new((0..cfg.quantiles).map(|_| g.random_range(-1.0..1.0)).collect())?.into())
            }
        };
        samples.push(Sample {
            obs,
            old_log_prob: dist.log_prob(&action) + g.random_range(-0.3..0.3),
            action,
            advantage: g.random_range(-1.0..1.0),
            old_value: g.random_range(-1.0..1.0),
            ret: g.random_range(-1.0..1.0),
            target,
        });
    }
    Ok((net, samples))
}

fn gradient_integrity() -> Outcome {
    let mut g = rng::stream(7, 0);
    let h = 1e-6;
    let mut checked = 0;
    let mut failures = Vec::new();
    for variant in Variant::ALL {
        for (space, policy) in [
            (ActionSpace::Discrete(3), PolicyKind::Discrete { actions: 3 }),
            (ActionSpace::Continuous { dim: 2, low: -2.0, high: 2.0 }, PolicyKind::Gaussian { dim: 2 }),
        ] {
            let mut cfg = TrainConfig::defaults(variant, &space);
            cfg.quantiles = 8;
            cfg.gmm_components = 3;
            cfg.sr_particles = 4;
            cfg.entropy_coef = 0.01;
            let (mut net, samples) = fd_batch(&cfg, policy, &mut g)?;
            let batch: Vec<&Sample> = samples.iter().collect();
            let grads = minibatch_objective(&cfg, &net, &batch, &mut FlopCounter::new())?.grads;
            for j in 0..net.parameter_count() {
                let x = net.params()[j];
                net.params_mut()[j] = x + h;
                let up = minibatch_objective(&cfg, &net, &batch, &mut FlopCounter::new())?.total;
                net.params_mut()[j] = x - h;
                let down = minibatch_objective(&cfg, &net, &batch, &mut FlopCounter::new())?.total;
                net.params_mut()[j] = x;
                let fd = (up - down) / (2.0 * h);
                checked += 1;
                if (fd - grads[j]).abs() > 1e-5f64.max(1e-3 * grads[j].abs()) {
                    failures.push(format!("{} param {j}: analytic {} numeric {fd}", variant.name(), grads[j]));
                }
            }
        }
    }
    let detail = format!("{checked} partial derivatives over 4 variants and 2 policy heads, {} mismatched", failures.len());
    let detail = if failures.is_empty() { detail } else { format!("{detail}: {}", failures[..failures.len().min(3)].join("; ")) };
    Ok((failures.is_empty(), detail))
}

fn flop_ordering() -> Outcome {
    let args = FlopsArgs {
        variants: "all".into(),
        env: "gridworld".into(),
        grid_size: 5,
        minibatch: 64,
        quantiles: 64,
        components: 5,
        particles: 5,
    };
    let rows = flops_table(&args)?;
    let update = |v: Variant| rows.iter().find(|r| r.variant == v).map(|r| r.update as f64).expect("every variant counted");
    let width = *TrainConfig::defaults(Variant::Gmac, &ActionSpace::Discrete(4)).hidden.last().expect("hidden layers");
    let overhead = gmm_head_overhead(args.components, args.particles, width, args.minibatch) as f64;
    let expected = update(Variant::PpoScalar) + overhead;
    let (iqac, iqac_e, gmac) = (update(Variant::Iqac), update(Variant::IqacE), update(Variant::Gmac));
    let off = (gmac - expected).abs() / expected;
    Ok((
        iqac > iqac_e && iqac_e > gmac && off <= 0.05,
        format!("update FLOPs iqac {iqac} > iqac_e {iqac_e} > gmac {gmac}; gmac is {:.2}% from ppo + head overhead {expected}", 100.0 * off),
    ))
}

fn run_config(env: &str, variant: &str, seed: u64) -> Result<RunConfig, Box<dyn std::error::Error>> {
    let mut s = Settings::new();
    s.set("env", env, Source::Flag);
    s.set("variant", variant, Source::Flag);
    s.set("seed", seed.to_string(), Source::Flag);
    Ok(RunConfig::from_settings(&s)?)
}

/// Trains for `iterations`, evaluating the greedy policy every `every`
/// iterations. Returns the first iteration whose evaluation reached
/// `target` and the final evaluation mean.
fn train_and_track(cfg: &RunConfig, iterations: u64, every: u64, episodes: usize, target: f64) -> Result<(Option<u64>, f64), Box<dyn std::error::Error>> {
    let mut agent = Agent::new(cfg.train.clone(), &cfg.env)?;
    let mut reached = None;
    let mut last = f64::NAN;
    for i in 1..=iterations {
        agent.train_iteration()?;
        if i % every == 0 || i == iterations {
            let (mean, _) = mean_std(&evaluate_network(&cfg.env, agent.network(), episodes, cfg.eval_seed)?);
            if reached.is_none() && mean >= target {
                reached = Some(i);
            }
            last = mean;
        }
    }
    Ok((reached, last))
}

fn gridworld_training() -> Outcome {
    let optimal = Gridworld::new(5, GridLayout::Dense, 0.0, 0)?.optimal_return();
    let target = 0.95 * optimal;
    let mut reached = 0;
    let mut diffs = Vec::new();
    let mut finals = Vec::new();
    for seed in 0..5 {
        let (hit, gmac) = train_and_track(&run_config("gridworld", "gmac", seed)?, 2000, 50, 20, target)?;
        let (_, ppo) = train_and_track(&run_config("gridworld", "ppo_scalar", seed)?, 2000, 2000, 20, f64::INFINITY)?;
        reached += hit.is_some() as usize;
        diffs.push(gmac - ppo);
        finals.push(format!("{gmac:.3}/{ppo:.3}"));
    }
    let (mean_diff, sd) = mean_std(&diffs);
    let se = sd / (diffs.len() as f64).sqrt();
    Ok((
        reached >= 4 && mean_diff >= -se,
        format!(
            "reached {target:.4} (95% of optimal {optimal:.4}) on {reached}/5 seeds; final gmac/ppo {}; \
             mean paired difference {mean_diff:.4} vs -SE {:.4}",
            finals.join(" "),
            -se
        ),
    ))
}

fn lqr_training() -> Outcome {
    const EPISODES: usize = 100;
    const ITERATIONS: u64 = 300;
    let mut within = 0;
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let cfg = run_config("lqr1d", "gmac", seed)?;
        let k = Lqr1d::optimal_gain();
        let mut env = cfg.env.build(cfg.eval_seed)?;
        let riccati = evaluate(env.as_mut(), EPISODES, |obs| {
            Ok(Action::Continuous(vec![(-k * obs[0]).clamp(-2.0, 2.0)]))
        })?;
        let riccati_cost = -mean_std(&riccati).0;
        let mut agent = Agent::new(cfg.train.clone(), &cfg.env)?;
        for _ in 0..ITERATIONS {
            agent.train_iteration()?;
        }
        let cost = -mean_std(&evaluate_network(&cfg.env, agent.network(), EPISODES, cfg.eval_seed)?).0;
        let ratio = cost / riccati_cost;
        within += (ratio <= 1.2) as usize;
        ratios.push(format!("{ratio:.3}"));
    }
    Ok((within >= 4, format!("cost relative to the Riccati policy after {ITERATIONS} iterations: {} ({within}/5 within 1.2)", ratios.join(" "))))
}
