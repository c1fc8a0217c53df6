//! Versioned CSV tables. Every table starts with a `schema_version` column;
//! the columns of a given version never change.

use crate::error::{Error, Result};
use crate::run::{read_metrics, RunDir, RunWriter, METRICS};

pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const METRICS_CSV: &str = "metrics.csv";
pub const EVALUATIONS_CSV: &str = "evaluations.csv";

pub fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::format("<csv>", e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Error::format("<csv>", e.to_string()))
}

pub const METRICS_COLUMNS: [&str; 14] = [
    "schema_version",
    "iteration",
    "frames",
    "episodes",
    "mean_return",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_fraction",
    "grad_norm",
    "skipped_updates",
    "intrinsic_reward",
    "flops_inference",
    "flops_update",
];

pub const EVALUATION_COLUMNS: [&str; 6] = ["schema_version", "checkpoint", "iteration", "seed", "episode", "return"];

/// Writes `metrics.csv` and `evaluations.csv` into the run directory and
/// adds them to its manifest. Returns the written file names.
pub fn export_run(run: RunDir) -> Result<Vec<&'static str>> {
    run.verify_all()?;
    let records = read_metrics(&run.dir().join(METRICS))?;
    let header: Vec<String> = METRICS_COLUMNS.map(String::from).to_vec();
    let metrics = csv_bytes(
        &header,
        records.iter().map(|r| {
            vec![
                CSV_SCHEMA_VERSION.to_string(),
                r.iteration.to_string(),
                r.frames.to_string(),
                r.episodes.to_string(),
                r.mean_return.map(|v| v.to_string()).unwrap_or_default(),
                r.policy_loss.to_string(),
                r.value_loss.to_string(),
                r.entropy.to_string(),
                r.clip_fraction.to_string(),
                r.grad_norm.to_string(),
                r.skipped_updates.to_string(),
                r.intrinsic_reward.to_string(),
                r.flops_inference.to_string(),
                r.flops_update.to_string(),
            ]
        }),
    )?;
    let header: Vec<String> = EVALUATION_COLUMNS.map(String::from).to_vec();
    let evals = csv_bytes(
        &header,
        run.manifest().evaluations.iter().flat_map(|e| {
            e.returns.iter().enumerate().map(move |(i, r)| {
                vec![
                    CSV_SCHEMA_VERSION.to_string(),
                    e.checkpoint.clone(),
                    e.iteration.to_string(),
                    e.seed.to_string(),
                    i.to_string(),
                    r.to_string(),
                ]
            })
        }),
    )?;
    let mut w = RunWriter::reopen(run);
    w.write_file(METRICS_CSV, &metrics)?;
    w.write_file(EVALUATIONS_CSV, &evals)?;
    w.commit()?;
    Ok(vec![METRICS_CSV, EVALUATIONS_CSV])
}
