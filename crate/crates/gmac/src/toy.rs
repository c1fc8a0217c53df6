//! The tabular lab: fits per-state critics on a small MDP with each loss and
//! compares them with the exact return law.

use gmac_core::dist::{DiracMixture, ValueDistribution};
use gmac_core::math;
use gmac_core::metrics;
use gmac_core::rng;
use gmac_core::tabular::{
    contraction_check, fit_tabular_critic, impute_from_quantiles, mode_clusters, Cluster, ContractionReport,
    FitConfig, FitLoss, FitResult, Policy, Representation, TabularMdp,
};

use crate::config::{MdpSource, ToyConfig, ToyLoss};
use crate::error::{Error, Result};
use crate::export::{csv_bytes, CSV_SCHEMA_VERSION};
use crate::mdp_file::load_mdp;
use crate::run::RunWriter;

/// Samples drawn from the implied distribution of fitted quantiles.
pub const IMPUTED_SAMPLES: usize = 1000;

#[derive(Debug, Clone)]
pub struct ToyFit {
    pub loss: ToyLoss,
    pub result: FitResult,
    /// Huber-quantile fits only: the evaluation state's atoms resampled by
    /// inverse-CDF interpolation.
    pub imputed: Option<DiracMixture>,
}

impl ToyFit {
    /// The fitted distribution of the evaluation state.
    pub fn fitted(&self, state: usize) -> &ValueDistribution {
        self.result.table.state(state)
    }
}

#[derive(Debug, Clone)]
pub struct SeedReport {
    pub seed: u64,
    pub eval_state: usize,
    pub truth: ValueDistribution,
    pub fits: Vec<ToyFit>,
}

impl SeedReport {
    pub fn fit(&self, loss: ToyLoss) -> Option<&ToyFit> {
        self.fits.iter().find(|f| f.loss == loss)
    }
}

pub fn load_toy_mdp(src: &MdpSource) -> Result<(TabularMdp, Policy, usize)> {
    match src {
        MdpSource::FiveState { gamma } => {
            let mdp = TabularMdp::five_state(*gamma).map_err(|e| Error::Config(format!("key 'gamma': {e}")))?;
            let pi = Policy::uniform(mdp.n_states(), 1);
            Ok((mdp, pi, 0))
        }
        MdpSource::File(path) => {
            let f = load_mdp(path)?;
            Ok((f.mdp, f.policy, f.start))
        }
    }
}

pub fn fit_config(cfg: &ToyConfig, loss: ToyLoss, start: usize) -> FitConfig {
    let (fl, repr) = match loss {
        ToyLoss::EnergyGmm => (FitLoss::EnergyGmm, Representation::Gmm { k: cfg.components }),
        ToyLoss::EnergySamples => (FitLoss::EnergySamples, Representation::Dirac { m: cfg.samples }),
        ToyLoss::HuberQuantile => (FitLoss::HuberQuantile, Representation::Dirac { m: cfg.quantiles }),
    };
    let mut fc = FitConfig::new(fl, repr);
    fc.steps = cfg.steps;
    fc.lr = cfg.lr;
    fc.batch = cfg.batch;
    fc.lambda = cfg.lambda;
    fc.start_state = start;
    fc.eval_state = start;
    fc
}

fn loss_stream(loss: ToyLoss) -> u64 {
    match loss {
        ToyLoss::EnergyGmm => 1,
        ToyLoss::EnergySamples => 2,
        ToyLoss::HuberQuantile => 3,
    }
}

/// Runs every configured loss for one seed, one thread per loss.
pub fn fit_seed(cfg: &ToyConfig, mdp: &TabularMdp, pi: &Policy, start: usize, seed: u64) -> Result<SeedReport> {
    let fits = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .losses
            .iter()
            .map(|&loss| {
                s.spawn(move || -> Result<ToyFit> {
                    let mut g = rng::stream(seed, loss_stream(loss));
                    let result = fit_tabular_critic(mdp, pi, &fit_config(cfg, loss, start), &mut g)?;
                    let imputed = match (loss, result.table.state(start)) {
                        (ToyLoss::HuberQuantile, ValueDistribution::Dirac(d)) => {
                            Some(impute_from_quantiles(d.atoms(), IMPUTED_SAMPLES, &mut g)?)
                        }
                        _ => None,
                    };
                    Ok(ToyFit { loss, result, imputed })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fit thread panicked")).collect::<Result<Vec<_>>>()
    })?;
    let truth = fits.first().map(|f| f.result.truth.clone()).ok_or_else(|| Error::Config("no loss selected".into()))?;
    Ok(SeedReport { seed, eval_state: start, truth, fits })
}

/// Density of `d` on an evenly spaced `grid`. Point masses are spread over
/// the grid cell they fall in.
pub fn density(d: &ValueDistribution, grid: &[f64]) -> Vec<f64> {
    let h = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    let mut out = vec![0.0; grid.len()];
    for c in d.to_components() {
        if c.variance > 0.0 {
            for (o, &z) in out.iter_mut().zip(grid) {
                *o += c.weight * math::exp(-0.5 * (z - c.mean).powi(2) / c.variance) / (2.0 * std::f64::consts::PI * c.variance).sqrt();
            }
        } else {
            let i = ((c.mean - grid[0]) / h).round();
            if i >= 0.0 && (i as usize) < grid.len() {
                out[i as usize] += c.weight / h;
            }
        }
    }
    out
}

fn grid_for(report: &SeedReport, points: usize) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut widen = |d: &ValueDistribution| {
        let (a, b) = d.support_bounds();
        lo = lo.min(a);
        hi = hi.max(b);
    };
    widen(&report.truth);
    for f in &report.fits {
        widen(f.fitted(report.eval_state));
    }
    let pad = 0.1 * (hi - lo).max(1.0);
    let (lo, hi) = (lo - pad, hi + pad);
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

/// Wide table: `z`, then the exact law and each fit's density.
pub fn density_csv(report: &SeedReport, points: usize) -> Result<Vec<u8>> {
    let grid = grid_for(report, points);
    let mut header = vec!["schema_version".to_string(), "z".into(), "truth".into()];
    let mut columns = vec![density(&report.truth, &grid)];
    for f in &report.fits {
        header.push(f.loss.name().into());
        columns.push(density(f.fitted(report.eval_state), &grid));
        if let Some(imp) = &f.imputed {
            header.push(format!("{}_imputed", f.loss.name()));
            columns.push(density(&ValueDistribution::Dirac(imp.clone()), &grid));
        }
    }
    let rows = grid.iter().enumerate().map(|(i, z)| {
        let mut row = vec![CSV_SCHEMA_VERSION.to_string(), z.to_string()];
        row.extend(columns.iter().map(|c| c[i].to_string()));
        row
    });
    csv_bytes(&header, rows)
}

/// Wide table: `step`, then each fit's energy distance to the exact law.
pub fn distance_csv(report: &SeedReport) -> Result<Vec<u8>> {
    let mut header = vec!["schema_version".to_string(), "step".into()];
    header.extend(report.fits.iter().map(|f| format!("{}_energy_distance", f.loss.name())));
    let curve = &report.fits[0].result.curve;
    let rows = curve.iter().enumerate().map(|(i, p)| {
        let mut row = vec![CSV_SCHEMA_VERSION.to_string(), p.step.to_string()];
        row.extend(report.fits.iter().map(|f| f.result.curve[i].energy.to_string()));
        row
    });
    csv_bytes(&header, rows)
}

/// Per fit: distances, moments and the two mode clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub seed: u64,
    pub loss: ToyLoss,
    pub final_energy: f64,
    pub mean: f64,
    pub variance: f64,
    pub truth_variance: f64,
    pub clusters: [Cluster; 2],
    /// Energy distance of the imputed samples, Huber-quantile fits only.
    pub imputed_energy: Option<f64>,
}

pub fn summarize(report: &SeedReport) -> Vec<FitSummary> {
    report
        .fits
        .iter()
        .map(|f| {
            let d = f.fitted(report.eval_state);
            FitSummary {
                seed: report.seed,
                loss: f.loss,
                final_energy: f.result.final_energy,
                mean: d.mean(),
                variance: d.variance(),
                truth_variance: report.truth.variance(),
                clusters: mode_clusters(d),
                imputed_energy: f.imputed.as_ref().map(|imp| metrics::energy(&ValueDistribution::Dirac(imp.clone()), &report.truth)),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[FitSummary]) -> Result<Vec<u8>> {
    let header: Vec<String> = [
        "schema_version",
        "seed",
        "loss",
        "final_energy_distance",
        "mean",
        "variance",
        "truth_variance",
        "low_mode_weight",
        "low_mode_mean",
        "low_mode_std",
        "high_mode_weight",
        "high_mode_mean",
        "high_mode_std",
        "imputed_energy_distance",
    ]
    .map(String::from)
    .to_vec();
    let rows = rows.iter().map(|r| {
        let [lo, hi] = r.clusters;
        vec![
            CSV_SCHEMA_VERSION.to_string(),
            r.seed.to_string(),
            r.loss.name().into(),
            r.final_energy.to_string(),
            r.mean.to_string(),
            r.variance.to_string(),
            r.truth_variance.to_string(),
            lo.weight.to_string(),
            lo.mean.to_string(),
            lo.std.to_string(),
            hi.weight.to_string(),
            hi.mean.to_string(),
            hi.std.to_string(),
            r.imputed_energy.map(|e| e.to_string()).unwrap_or_default(),
        ]
    });
    csv_bytes(&header, rows)
}

/// Random 4-state, 2-action MDP at γ = 0.9 with a uniform policy.
pub fn contraction_trials(trials: usize, seed: u64) -> Result<ContractionReport> {
    let mut g = rng::stream(seed, 0xC0);
    let mdp = TabularMdp::random(4, 2, 0.9, &mut g)?;
    let pi = Policy::uniform(4, 2);
    Ok(contraction_check(&mdp, &pi, trials, 2.0, &mut g)?)
}

pub fn contraction_csv(report: &ContractionReport) -> Result<Vec<u8>> {
    let header: Vec<String> =
        ["schema_version", "trial", "cramer_before", "cramer_after", "energy_before", "energy_after"].map(String::from).to_vec();
    let rows = report.trials.iter().enumerate().map(|(i, t)| {
        vec![
            CSV_SCHEMA_VERSION.to_string(),
            i.to_string(),
            t.cramer_before.to_string(),
            t.cramer_after.to_string(),
            t.energy_before.to_string(),
            t.energy_after.to_string(),
        ]
    });
    csv_bytes(&header, rows)
}

/// Everything the `toy` command produced, for reporting.
#[derive(Debug, Clone)]
pub struct ToyOutcome {
    pub summaries: Vec<FitSummary>,
    pub contraction: Option<ContractionReport>,
}

pub fn run_toy(cfg: &ToyConfig, mut progress: impl FnMut(&str)) -> Result<ToyOutcome> {
    let (mdp, pi, start) = load_toy_mdp(&cfg.mdp)?;
    let mut w = RunWriter::create(&cfg.out_dir)?;
    let mut summaries = Vec::new();
    for seed in cfg.seed..cfg.seed + cfg.seeds as u64 {
        let report = fit_seed(cfg, &mdp, &pi, start, seed)?;
        w.write_file(&format!("density-seed{seed}.csv"), &density_csv(&report, cfg.grid_points)?)?;
        w.write_file(&format!("distance-seed{seed}.csv"), &distance_csv(&report)?)?;
        for s in summarize(&report) {
            progress(&format!(
                "seed {seed} {:<15} energy distance {:.5}  variance {:.4} (exact {:.4})",
                s.loss.name(),
                s.final_energy,
                s.variance,
                s.truth_variance
            ));
            summaries.push(s);
        }
    }
    w.write_file("summary.csv", &summary_csv(&summaries)?)?;
    let contraction = if cfg.contraction_trials > 0 {
        let report = contraction_trials(cfg.contraction_trials, cfg.seed)?;
        progress(&format!(
            "contraction: {}/{} random trials within the sqrt(gamma) Cramér and gamma energy bounds",
            report.passed(),
            report.trials.len()
        ));
        w.write_file("contraction.csv", &contraction_csv(&report)?)?;
        Some(report)
    } else {
        None
    };
    w.commit()?;
    Ok(ToyOutcome { summaries, contraction })
}
