use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmac_core::agent::{count_flops, gmm_head_overhead, FlopReport, TrainConfig, Variant};
use gmac_core::envs::{EnvKind, GridLayout};

use crate::config::{RunConfig, Settings, Source, ToyConfig};
use crate::error::{Error, Result};
use crate::export::export_run;
use crate::run::RunDir;
use crate::toy::run_toy;
use crate::train::{evaluate_run, run_training};

#[derive(Debug, Parser)]
#[command(name = "gmac", version, about = "Distributional actor-critic experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit tabular critics on a small MDP and compare them with the exact return law.
    Toy(ToyArgs),
    /// Train an agent and write a run directory.
    Train(TrainArgs),
    /// Roll out a checkpoint's greedy policy and report return statistics.
    Eval(EvalArgs),
    /// Count FLOPs of one inference pass and one minibatch update per variant.
    Flops(FlopsArgs),
    /// Convert a run's logs to CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Set any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    /// File, then `GMAC_*` variables, then `--set`.
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::new(),
        };
        s.apply_env(std::env::vars());
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            s.set(k.trim(), v.trim(), Source::Flag);
        }
        Ok(s)
    }
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// five_state or an MDP file.
    #[arg(long)]
    pub mdp: Option<String>,
    /// energy_gmm, energy_samples, huber_quantile or all.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print only the final summary.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory holding manifest.json.
    #[arg(long)]
    pub run: PathBuf,
    /// Checkpoint file name; defaults to the latest.
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Evaluation environment seed; defaults to the run's.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// `all` or a comma-separated list.
    #[arg(long, default_value = "all")]
    pub variants: String,
    /// five_state, gridworld or lqr1d.
    #[arg(long, default_value = "gridworld")]
    pub env: String,
    #[arg(long, default_value_t = 5)]
    pub grid_size: usize,
    #[arg(long, default_value_t = 64)]
    pub minibatch: usize,
    #[arg(long, default_value_t = 64)]
    pub quantiles: usize,
    #[arg(long, default_value_t = 5)]
    pub components: usize,
    #[arg(long, default_value_t = 5)]
    pub particles: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: PathBuf,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Toy(a) => toy(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Flops(a) => flops(a),
        Command::Export(a) => {
            let written = export_run(RunDir::open(&a.run)?)?;
            for f in written {
                println!("{}", a.run.join(f).display());
            }
            Ok(())
        }
    }
}

fn toy(a: ToyArgs) -> Result<()> {
    let mut s = a.config.settings()?;
    s.set_opt("mdp", a.mdp);
    s.set_opt("loss", a.loss);
    s.set_opt("seed", a.seed);
    s.set_opt("seeds", a.seeds);
    s.set_opt("steps", a.steps);
    s.set_opt("out_dir", a.out.map(|p| p.display().to_string()));
    let cfg = ToyConfig::from_settings(&s)?;
    let outcome = run_toy(&cfg, |line| println!("{line}"))?;
    if let Some(c) = &outcome.contraction {
        if !c.all_passed() {
            return Err(Error::Core(gmac_core::Error::NumericAccuracy(format!(
                "{} of {} contraction trials violated the bound",
                c.violations.len(),
                c.trials.len()
            ))));
        }
    }
    println!("wrote {}", cfg.out_dir.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut s = a.config.settings()?;
    s.set_opt("variant", a.variant);
    s.set_opt("env", a.env);
    s.set_opt("seed", a.seed);
    s.set_opt("iterations", a.iterations);
    s.set_opt("out_dir", a.out.map(|p| p.display().to_string()));
    let cfg = RunConfig::from_settings(&s)?;
    let quiet = a.quiet;
    let outcome = run_training(&cfg, |m| {
        if !quiet {
            let ret = m.mean_return.map(|r| format!("{r:.4}")).unwrap_or_else(|| "-".into());
            println!(
                "iter {:>5} frames {:>8} return {ret:>9} value_loss {:.4} entropy {:.3} clip {:.3}",
                m.iteration, m.frames, m.value_loss, m.entropy, m.clip_fraction
            );
        }
    })?;
    for e in &outcome.evaluations {
        println!("{}: greedy return {:.4} ± {:.4} over {} episodes", e.checkpoint, e.mean, e.std, e.episodes);
    }
    println!("wrote {}", cfg.out_dir.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let run = RunDir::open(&a.run)?;
    let r = evaluate_run(&run, a.checkpoint.as_deref(), a.episodes, a.seed)?;
    let e = &r.evaluation;
    let min = e.returns.iter().copied().fold(f64::INFINITY, f64::min);
    let max = e.returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "{} (iteration {}): mean {} std {} min {min} max {max} over {} episodes, seed {}",
        e.checkpoint, e.iteration, e.mean, e.std, e.episodes, e.seed
    );
    match &r.recorded {
        Some(rec) if rec.returns == e.returns => println!("matches the returns recorded at training time"),
        Some(_) => {
            return Err(Error::Integrity(format!("{}: returns differ from those recorded at training time", e.checkpoint)));
        }
        None => println!("no recorded evaluation with these settings"),
    }
    Ok(())
}

fn flops_env(a: &FlopsArgs) -> Result<EnvKind> {
    Ok(match a.env.as_str() {
        "five_state" => EnvKind::FiveState,
        "gridworld" => EnvKind::Gridworld { size: a.grid_size, layout: GridLayout::Dense, slip: 0.0, step_cap: None },
        "lqr1d" => EnvKind::Lqr1d { noise: 0.1, horizon: 25 },
        other => return Err(Error::Config(format!("unknown environment '{other}'"))),
    })
}

pub fn flops_table(a: &FlopsArgs) -> Result<Vec<FlopReport>> {
    let variants = if a.variants == "all" {
        Variant::ALL.to_vec()
    } else {
        a.variants.split(',').map(|v| Variant::parse(v.trim())).collect::<gmac_core::Result<Vec<_>>>()?
    };
    let env = flops_env(a)?.build(0)?;
    variants
        .into_iter()
        .map(|v| {
            let mut cfg = TrainConfig::defaults(v, &env.spec().action_space);
            cfg.minibatch = a.minibatch;
            cfg.quantiles = a.quantiles;
            cfg.gmm_components = a.components;
            cfg.sr_particles = a.particles;
            Ok(count_flops(&cfg, env.spec())?)
        })
        .collect()
}

fn flops(a: FlopsArgs) -> Result<()> {
    let rows = flops_table(&a)?;
    println!("{:<12} {:>10} {:>14} {:>16}", "variant", "params", "inference", "update");
    for r in &rows {
        println!("{:<12} {:>10} {:>14} {:>16}", r.variant.name(), r.parameters, r.inference, r.update);
    }
    let width = TrainConfig::defaults(Variant::Gmac, &gmac_core::envs::ActionSpace::Discrete(1)).hidden.last().copied().unwrap_or(0);
    let overhead = gmm_head_overhead(a.components, a.particles, width, a.minibatch);
    println!("gmm head overhead bound per update (K={}, m={}, batch {}): {overhead}", a.components, a.particles, a.minibatch);
    println!(
        "note: counts are for the small MLP used here, not a convolutional network at Atari batch sizes; \
         only the ordering of the update costs is meaningful"
    );
    Ok(())
}
