//! Training runs and checkpoint evaluation.

use gmac_core::agent::{greedy_action, Agent, IterationMetrics};
use gmac_core::envs::{evaluate, EnvKind};
use gmac_core::nn::Network;

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, Settings};
use crate::error::{Error, Result};
use crate::run::{Evaluation, MetricsRecord, RunDir, RunWriter, SNAPSHOT};

pub const CRASH_REPORT: &str = "crash.json";
pub const CRASH_CHECKPOINT: &str = "crash-checkpoint.bin";

pub fn checkpoint_name(iteration: u64) -> String {
    format!("checkpoint-{iteration:06}.bin")
}

/// Undiscounted returns of the greedy policy over `episodes` episodes of a
/// fresh environment seeded with `seed`.
pub fn evaluate_network(env: &EnvKind, net: &Network, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let mut e = env.build(seed)?;
    Ok(evaluate(e.as_mut(), episodes, |obs| greedy_action(net, obs))?)
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn evaluation(cfg: &RunConfig, name: &str, iteration: u64, net: &Network) -> Result<Evaluation> {
    let returns = evaluate_network(&cfg.env, net, cfg.eval_episodes, cfg.eval_seed)?;
    let (mean, std) = mean_std(&returns);
    Ok(Evaluation { checkpoint: name.into(), iteration, episodes: cfg.eval_episodes, seed: cfg.eval_seed, mean, std, returns })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: MetricsRecord,
    pub evaluations: Vec<Evaluation>,
}

/// Trains for `cfg.iterations`, logging one metrics line per iteration and
/// checkpointing (with a greedy evaluation) every `checkpoint_every`
/// iterations and at the end. A numeric failure writes a crash report and
/// the last good state before returning the error.
pub fn run_training(cfg: &RunConfig, progress: impl FnMut(&MetricsRecord)) -> Result<TrainOutcome> {
    train_with(cfg, progress, Agent::train_iteration)
}

fn train_with(
    cfg: &RunConfig,
    mut progress: impl FnMut(&MetricsRecord),
    mut step: impl FnMut(&mut Agent) -> gmac_core::Result<IterationMetrics>,
) -> Result<TrainOutcome> {
    let mut w = RunWriter::create(&cfg.out_dir)?;
    w.write_file(SNAPSHOT, cfg.snapshot().as_bytes())?;
    let mut agent = Agent::new(cfg.train.clone(), &cfg.env)?;
    let mut last = None;
    for i in 1..=cfg.iterations {
        let m = match step(&mut agent) {
            Ok(m) => MetricsRecord::from(&m),
            Err(e) => {
                let report = serde_json::json!({
                    "iteration": i,
                    "error": e.to_string(),
                    "last_metrics": last,
                    "checkpoint": CRASH_CHECKPOINT,
                });
                let ckpt = Checkpoint { iteration: agent.iteration(), net: agent.network().clone(), adam: agent.optimizer().clone() };
                w.write_checkpoint(CRASH_CHECKPOINT, &ckpt)?;
                w.write_file(CRASH_REPORT, serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())?;
                w.commit()?;
                return Err(e.into());
            }
        };
        w.append_metrics(&m)?;
        progress(&m);
        last = Some(m);
        if i == cfg.iterations || (cfg.checkpoint_every > 0 && i % cfg.checkpoint_every == 0) {
            let name = checkpoint_name(i);
            let ckpt = Checkpoint { iteration: i, net: agent.network().clone(), adam: agent.optimizer().clone() };
            w.write_checkpoint(&name, &ckpt)?;
            w.record_evaluation(evaluation(cfg, &name, i, &ckpt.net)?);
            w.commit()?;
        }
    }
    Ok(TrainOutcome { last: last.expect("at least one iteration"), evaluations: w.manifest().evaluations.clone() })
}

/// Re-reads a run's config snapshot, checking its hash.
pub fn run_config(run: &RunDir) -> Result<RunConfig> {
    let bytes = run.read_verified(SNAPSHOT)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::format(run.dir().join(SNAPSHOT), e.to_string()))?;
    RunConfig::from_settings(&Settings::parse(&text, &run.dir().join(SNAPSHOT))?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub evaluation: Evaluation,
    /// The evaluation stored at training time with the same checkpoint,
    /// episode count and seed, if any.
    pub recorded: Option<Evaluation>,
}

/// Evaluates `checkpoint` (default: the latest) of a run. Episode count and
/// seed default to the run's own.
pub fn evaluate_run(run: &RunDir, checkpoint: Option<&str>, episodes: Option<usize>, seed: Option<u64>) -> Result<EvalReport> {
    let mut cfg = run_config(run)?;
    let name = match checkpoint {
        Some(n) => n.to_string(),
        None => run
            .checkpoints()
            .last()
            .map(|s| s.to_string())
            .ok_or_else(|| Error::Integrity(format!("{} lists no checkpoints", run.dir().display())))?,
    };
    let ckpt = run.checkpoint(&name)?;
    cfg.eval_episodes = episodes.unwrap_or(cfg.eval_episodes);
    cfg.eval_seed = seed.unwrap_or(cfg.eval_seed);
    if cfg.eval_episodes == 0 {
        return Err(Error::Config("episodes must be >= 1".into()));
    }
    let evaluation = evaluation(&cfg, &name, ckpt.iteration, &ckpt.net)?;
    let recorded = run
        .manifest()
        .evaluations
        .iter()
        .find(|e| e.checkpoint == name && e.episodes == evaluation.episodes && e.seed == evaluation.seed)
        .cloned();
    Ok(EvalReport { evaluation, recorded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Source;
    use crate::run::read_metrics;

    #[test]
    fn numeric_failure_leaves_a_crash_dump() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Settings::new();
        for (k, v) in [("env", "five_state"), ("variant", "gmac"), ("envs", "2"), ("rollout_steps", "8"), ("minibatch", "8")] {
            s.set(k, v, Source::Flag);
        }
        s.set("out_dir", dir.path().join("run").display().to_string(), Source::Flag);
        let cfg = RunConfig::from_settings(&s).unwrap();
        let mut calls = 0;
        let err = train_with(&cfg, |_| {}, |agent| {
            calls += 1;
            if calls == 3 {
                return Err(gmac_core::Error::NonFinite("critic output NaN".into()));
            }
            agent.train_iteration()
        })
        .unwrap_err();
        assert!(err.to_string().contains("NaN"));
        let run = RunDir::open(&cfg.out_dir).unwrap();
        run.verify_all().unwrap();
        let report: serde_json::Value = serde_json::from_slice(&run.read_verified(CRASH_REPORT).unwrap()).unwrap();
        assert_eq!(report["iteration"], 3);
        assert_eq!(report["last_metrics"]["iteration"], 2);
        assert_eq!(run.checkpoint(CRASH_CHECKPOINT).unwrap().iteration, 2);
        assert_eq!(read_metrics(&cfg.out_dir.join(crate::run::METRICS)).unwrap().len(), 2);
    }
}
