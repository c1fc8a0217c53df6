//! Flat `key = value` configuration.
//!
//! Values come from, in increasing precedence: built-in defaults, a config
//! file, `GMAC_<KEY>` environment variables, and command-line flags. Every
//! command owns a fixed key list; anything outside it is rejected before
//! work starts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gmac_core::agent::{TrainConfig, Variant};
use gmac_core::envs::{EnvKind, GridLayout};

use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "GMAC_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    File,
    Env,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::File => "config file",
            Source::Env => "environment",
            Source::Flag => "command line",
        })
    }
}

/// Raw string values by key. Later writes win.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, (String, Source)>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines. `#` starts a comment; blank lines are
    /// skipped; a key may appear once per file.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut s = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::format(origin, format!("line {}: {msg}", i + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || !k.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_') {
                return Err(bad(&format!("malformed key '{k}'")));
            }
            if s.values.contains_key(k) {
                return Err(bad(&format!("duplicate key '{k}'")));
            }
            s.set(k, v, Source::File);
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>, source: Source) {
        self.values.insert(key.to_string(), (value.into(), source));
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v.to_string(), Source::Flag);
        }
    }

    /// Applies every `GMAC_<KEY>` variable, lower-casing the key.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) {
        for (k, v) in vars {
            if let Some(key) = k.strip_prefix(ENV_PREFIX) {
                self.set(&key.to_ascii_lowercase(), v, Source::Env);
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    fn source(&self, key: &str) -> Option<Source> {
        self.values.get(key).map(|(_, s)| *s)
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[KeyDoc]) -> Result<()> {
        for (k, (_, src)) in &self.values {
            if !known.iter().any(|d| d.key == k) {
                return Err(Error::Config(format!("unknown key '{k}' (from {src})")));
            }
        }
        Ok(())
    }
}

/// One documented key.
#[derive(Debug, Clone, Copy)]
pub struct KeyDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

const fn key(key: &'static str, default: &'static str, doc: &'static str) -> KeyDoc {
    KeyDoc { key, default, doc }
}

/// Typed access that remembers which keys were read.
struct Reader<'a> {
    s: &'a Settings,
    used: BTreeSet<&'static str>,
}

impl<'a> Reader<'a> {
    fn new(s: &'a Settings) -> Self {
        Self { s, used: BTreeSet::new() }
    }

    fn opt<T: FromStr>(&mut self, key: &'static str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.used.insert(key);
        match self.s.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| {
                let src = self.s.source(key).expect("present key has a source");
                Error::Config(format!("key '{key}' (from {src}): cannot parse '{v}': {e}"))
            }),
        }
    }

    fn or<T: FromStr>(&mut self, key: &'static str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&mut self, key: &'static str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.opt(key)?.ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    /// Rejects keys that are known to the command but were never read,
    /// i.e. do not apply to the chosen environment or variant.
    fn reject_unused(&self, known: &[KeyDoc], why: &str) -> Result<()> {
        for d in known {
            if self.s.get(d.key).is_some() && !self.used.contains(d.key) {
                return Err(Error::Config(format!("key '{}' does not apply {why}", d.key)));
            }
        }
        Ok(())
    }
}

/// Comma-separated layer widths.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Widths(Vec<usize>);

impl FromStr for Widths {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|w| w.trim().parse::<usize>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>().map(Widths)
    }
}

fn core_err(key: &str, e: gmac_core::Error) -> Error {
    Error::Config(format!("key '{key}': {e}"))
}

pub const TRAIN_KEYS: &[KeyDoc] = &[
    key("env", "(required)", "five_state, gridworld or lqr1d"),
    key("variant", "(required)", "ppo_scalar, iqac, iqac_e or gmac"),
    key("seed", "0", "master seed; every random stream is derived from it"),
    key("iterations", "300", "training iterations"),
    key("out_dir", "runs/<variant>-<env>-seed<seed>", "run directory"),
    key("checkpoint_every", "100", "iterations between checkpoints; the final one is always written"),
    key("eval_episodes", "20", "greedy-policy episodes per checkpoint evaluation"),
    key("eval_seed", "999", "seed of the evaluation environment"),
    key("grid_size", "5", "gridworld side length (>= 3)"),
    key("grid_layout", "dense", "dense, sparse or two_room"),
    key("grid_slip", "0", "probability an action is replaced by a random one"),
    key("grid_step_cap", "4*size^2", "gridworld truncation length"),
    key("lqr_noise", "0.1", "lqr1d process noise standard deviation"),
    key("lqr_horizon", "25", "lqr1d truncation length"),
    key("gamma", "0.99", "discount"),
    key("lambda", "0.95", "shared by GAE and the distributional targets"),
    key("clip", "0.2", "PPO ratio clip"),
    key("epochs", "4", "passes over each rollout"),
    key("minibatch", "128", "samples per gradient step"),
    key("rollout_steps", "64", "steps per environment per iteration"),
    key("envs", "8", "parallel environments"),
    key("lr", "2.5e-4 discrete, 1e-4 continuous", "Adam learning rate"),
    key("entropy_coef", "0.01 discrete, 0 continuous", "entropy bonus weight"),
    key("value_coef", "0.5", "critic loss weight"),
    key("max_grad_norm", "0.5", "global gradient norm clip"),
    key("normalize_advantages", "true", "standardize advantages per minibatch"),
    key("gmm_components", "5", "mixture components of the gmac critic"),
    key("sr_particles", "5", "particles per gmac target"),
    key("quantiles", "64", "atoms of the iqac and iqac_e critics"),
    key("huber_kappa", "1", "Huber threshold of iqac"),
    key("intrinsic_coef", "0", "weight of the Cramér exploration bonus (distributional variants)"),
    key("hidden", "64,64", "hidden layer widths"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub train: TrainConfig,
    pub iterations: u64,
    pub out_dir: PathBuf,
    pub checkpoint_every: u64,
    pub eval_episodes: usize,
    pub eval_seed: u64,
}

pub fn env_name(env: &EnvKind) -> &'static str {
    match env {
        EnvKind::FiveState => "five_state",
        EnvKind::Gridworld { .. } => "gridworld",
        EnvKind::Lqr1d { .. } => "lqr1d",
    }
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        s.reject_unknown(TRAIN_KEYS)?;
        let mut r = Reader::new(s);
        let env_name: String = r.required("env")?;
        let variant = Variant::parse(&r.required::<String>("variant")?).map_err(|e| core_err("variant", e))?;
        let env = match env_name.as_str() {
            "five_state" => EnvKind::FiveState,
            "gridworld" => {
                let layout = GridLayout::parse(&r.or("grid_layout", "dense".to_string())?).map_err(|e| core_err("grid_layout", e))?;
                EnvKind::Gridworld {
                    size: r.or("grid_size", 5)?,
                    layout,
                    slip: r.or("grid_slip", 0.0)?,
                    step_cap: r.opt("grid_step_cap")?,
                }
            }
            "lqr1d" => EnvKind::Lqr1d { noise: r.or("lqr_noise", 0.1)?, horizon: r.or("lqr_horizon", 25)? },
            other => return Err(Error::Config(format!("key 'env': unknown environment '{other}'"))),
        };
        // Builds one instance to validate the environment parameters.
        let probe = env.build(0).map_err(|e| core_err("env", e))?;
        let mut t = TrainConfig::defaults(variant, &probe.spec().action_space);
        t.seed = r.or("seed", 0)?;
        t.gamma = r.or("gamma", t.gamma)?;
        t.lambda = r.or("lambda", t.lambda)?;
        t.clip = r.or("clip", t.clip)?;
        t.epochs = r.or("epochs", t.epochs)?;
        t.minibatch = r.or("minibatch", t.minibatch)?;
        t.rollout_steps = r.or("rollout_steps", t.rollout_steps)?;
        t.envs = r.or("envs", t.envs)?;
        t.lr = r.or("lr", t.lr)?;
        t.entropy_coef = r.or("entropy_coef", t.entropy_coef)?;
        t.value_coef = r.or("value_coef", t.value_coef)?;
        t.max_grad_norm = r.or("max_grad_norm", t.max_grad_norm)?;
        t.normalize_advantages = r.or("normalize_advantages", t.normalize_advantages)?;
        t.hidden = r.or("hidden", Widths(t.hidden.clone()))?.0;
        t.intrinsic_coef = r.or("intrinsic_coef", t.intrinsic_coef)?;
        match variant {
            Variant::Gmac => {
                t.gmm_components = r.or("gmm_components", t.gmm_components)?;
                t.sr_particles = r.or("sr_particles", t.sr_particles)?;
            }
            Variant::Iqac => {
                t.quantiles = r.or("quantiles", t.quantiles)?;
                t.huber_kappa = r.or("huber_kappa", t.huber_kappa)?;
            }
            Variant::IqacE => t.quantiles = r.or("quantiles", t.quantiles)?,
            Variant::PpoScalar => {}
        }
        t.validate().map_err(|e| Error::Config(e.to_string()))?;
        let iterations = r.or("iterations", 300)?;
        let out_dir = r.or("out_dir", PathBuf::from(format!("runs/{}-{env_name}-seed{}", variant.name(), t.seed)))?;
        let cfg = RunConfig {
            iterations,
            out_dir,
            checkpoint_every: r.or("checkpoint_every", 100)?,
            eval_episodes: r.or("eval_episodes", 20)?,
            eval_seed: r.or("eval_seed", 999)?,
            env,
            train: t,
        };
        r.reject_unused(TRAIN_KEYS, &format!("to env '{env_name}' with variant '{}'", variant.name()))?;
        if cfg.iterations == 0 || cfg.eval_episodes == 0 {
            return Err(Error::Config("iterations and eval_episodes must be >= 1".into()));
        }
        Ok(cfg)
    }

    /// Every resolved key, in documentation order. Parsing the snapshot gives
    /// back an equal config.
    pub fn snapshot(&self) -> String {
        let t = &self.train;
        let mut lines: Vec<(&str, String)> = vec![("env", env_name(&self.env).into()), ("variant", t.variant.name().into())];
        lines.push(("seed", t.seed.to_string()));
        lines.push(("iterations", self.iterations.to_string()));
        lines.push(("out_dir", self.out_dir.display().to_string()));
        lines.push(("checkpoint_every", self.checkpoint_every.to_string()));
        lines.push(("eval_episodes", self.eval_episodes.to_string()));
        lines.push(("eval_seed", self.eval_seed.to_string()));
        match &self.env {
            EnvKind::FiveState => {}
            EnvKind::Gridworld { size, layout, slip, step_cap } => {
                lines.push(("grid_size", size.to_string()));
                lines.push(("grid_layout", layout.name().into()));
                lines.push(("grid_slip", slip.to_string()));
                if let Some(cap) = step_cap {
                    lines.push(("grid_step_cap", cap.to_string()));
                }
            }
            EnvKind::Lqr1d { noise, horizon } => {
                lines.push(("lqr_noise", noise.to_string()));
                lines.push(("lqr_horizon", horizon.to_string()));
            }
        }
        lines.push(("gamma", t.gamma.to_string()));
        lines.push(("lambda", t.lambda.to_string()));
        lines.push(("clip", t.clip.to_string()));
        lines.push(("epochs", t.epochs.to_string()));
        lines.push(("minibatch", t.minibatch.to_string()));
        lines.push(("rollout_steps", t.rollout_steps.to_string()));
        lines.push(("envs", t.envs.to_string()));
        lines.push(("lr", t.lr.to_string()));
        lines.push(("entropy_coef", t.entropy_coef.to_string()));
        lines.push(("value_coef", t.value_coef.to_string()));
        lines.push(("max_grad_norm", t.max_grad_norm.to_string()));
        lines.push(("normalize_advantages", t.normalize_advantages.to_string()));
        match t.variant {
            Variant::Gmac => {
                lines.push(("gmm_components", t.gmm_components.to_string()));
                lines.push(("sr_particles", t.sr_particles.to_string()));
            }
            Variant::Iqac => {
                lines.push(("quantiles", t.quantiles.to_string()));
                lines.push(("huber_kappa", t.huber_kappa.to_string()));
            }
            Variant::IqacE => lines.push(("quantiles", t.quantiles.to_string())),
            Variant::PpoScalar => {}
        }
        lines.push(("intrinsic_coef", t.intrinsic_coef.to_string()));
        lines.push(("hidden", t.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",")));
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub const TOY_KEYS: &[KeyDoc] = &[
    key("mdp", "five_state", "five_state, or the path of an MDP text file"),
    key("gamma", "1", "discount of the built-in five-state chain"),
    key("loss", "all", "energy_gmm, energy_samples, huber_quantile or all"),
    key("seed", "0", "first seed"),
    key("seeds", "1", "number of consecutive seeds"),
    key("steps", "5000", "gradient steps per fit"),
    key("lr", "0.02", "initial Adam learning rate; decays geometrically to 5%"),
    key("batch", "16", "rollouts per gradient step"),
    key("lambda", "0.95", "SR(λ) mixing parameter"),
    key("components", "5", "mixture components for energy_gmm"),
    key("samples", "16", "atoms for energy_samples"),
    key("quantiles", "15", "atoms for huber_quantile"),
    key("grid_points", "401", "points of the exported density grid"),
    key("contraction_trials", "100", "random trials of the Bellman contraction check (0 skips it)"),
    key("out_dir", "toy", "output directory"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum MdpSource {
    FiveState { gamma: f64 },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub mdp: MdpSource,
    pub losses: Vec<ToyLoss>,
    pub seed: u64,
    pub seeds: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub lambda: f64,
    pub components: usize,
    pub samples: usize,
    pub quantiles: usize,
    pub grid_points: usize,
    pub contraction_trials: usize,
    pub out_dir: PathBuf,
}

/// The tabular fitting methods compared by the toy lab.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyLoss {
    EnergyGmm,
    EnergySamples,
    HuberQuantile,
}

impl ToyLoss {
    pub const ALL: [ToyLoss; 3] = [ToyLoss::EnergyGmm, ToyLoss::EnergySamples, ToyLoss::HuberQuantile];

    pub fn name(self) -> &'static str {
        match self {
            ToyLoss::EnergyGmm => "energy_gmm",
            ToyLoss::EnergySamples => "energy_samples",
            ToyLoss::HuberQuantile => "huber_quantile",
        }
    }
}

impl ToyConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        s.reject_unknown(TOY_KEYS)?;
        let mut r = Reader::new(s);
        let mdp_key: String = r.or("mdp", "five_state".to_string())?;
        let mdp = if mdp_key == "five_state" {
            MdpSource::FiveState { gamma: r.or("gamma", 1.0)? }
        } else {
            MdpSource::File(PathBuf::from(mdp_key))
        };
        let loss: String = r.or("loss", "all".to_string())?;
        let losses = match loss.as_str() {
            "all" => ToyLoss::ALL.to_vec(),
            name => vec![*ToyLoss::ALL
                .iter()
                .find(|l| l.name() == name)
                .ok_or_else(|| Error::Config(format!("key 'loss': unknown loss '{name}'")))?],
        };
        let cfg = ToyConfig {
            mdp,
            losses,
            seed: r.or("seed", 0)?,
            seeds: r.or("seeds", 1)?,
            steps: r.or("steps", 5000)?,
            lr: r.or("lr", 0.02)?,
            batch: r.or("batch", 16)?,
            lambda: r.or("lambda", 0.95)?,
            components: r.or("components", 5)?,
            samples: r.or("samples", 16)?,
            quantiles: r.or("quantiles", 15)?,
            grid_points: r.or("grid_points", 401)?,
            contraction_trials: r.or("contraction_trials", 100)?,
            out_dir: r.or("out_dir", PathBuf::from("toy"))?,
        };
        r.reject_unused(TOY_KEYS, "to an MDP loaded from a file")?;
        if cfg.seeds == 0 || cfg.steps == 0 || cfg.batch == 0 || cfg.grid_points < 2 {
            return Err(Error::Config("seeds, steps and batch must be >= 1 and grid_points >= 2".into()));
        }
        if cfg.components == 0 || cfg.samples == 0 || cfg.quantiles == 0 {
            return Err(Error::Config("components, samples and quantiles must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&cfg.lambda) || !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
            return Err(Error::Config("lambda must lie in [0, 1] and lr must be positive".into()));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(pairs: &[(&str, &str)]) -> Settings {
        let mut s = Settings::new();
        for (k, v) in pairs {
            s.set(k, *v, Source::Flag);
        }
        s
    }

    #[test]
    fn parses_comments_and_rejects_duplicates() {
        let s = Settings::parse("# run\nenv = gridworld  # inline\n\nvariant=gmac\n", Path::new("x")).unwrap();
        assert_eq!(s.get("env"), Some("gridworld"));
        assert_eq!(s.get("variant"), Some("gmac"));
        assert!(Settings::parse("env = a\nenv = b\n", Path::new("x")).is_err());
        assert!(Settings::parse("just text\n", Path::new("x")).is_err());
        assert!(Settings::parse("Env = a\n", Path::new("x")).is_err());
    }

    #[test]
    fn precedence_is_file_then_env_then_flag() {
        let mut s = Settings::parse("seed = 1\nlr = 0.1\n", Path::new("x")).unwrap();
        s.apply_env([("GMAC_SEED".into(), "2".into()), ("HOME".into(), "/".into())]);
        assert_eq!(s.get("seed"), Some("2"));
        s.set_opt("seed", Some(3));
        assert_eq!(s.get("seed"), Some("3"));
        assert_eq!(s.get("lr"), Some("0.1"));
        assert_eq!(s.get("home"), None);
    }

    #[test]
    fn unknown_and_inapplicable_keys_are_rejected() {
        let base = [("env", "gridworld"), ("variant", "gmac")];
        assert!(RunConfig::from_settings(&settings(&base)).is_ok());
        let mut s = settings(&base);
        s.set("learning_rate", "0.1", Source::Env);
        let err = RunConfig::from_settings(&s).unwrap_err().to_string();
        assert!(err.contains("learning_rate") && err.contains("environment"), "{err}");
        let mut s = settings(&base);
        s.set("lqr_noise", "0.1", Source::Flag);
        assert!(RunConfig::from_settings(&s).is_err());
        let mut s = settings(&base);
        s.set("quantiles", "8", Source::Flag);
        assert!(RunConfig::from_settings(&s).is_err());
    }

    #[test]
    fn missing_and_malformed_values_are_rejected() {
        assert!(RunConfig::from_settings(&settings(&[("env", "gridworld")])).is_err());
        assert!(RunConfig::from_settings(&settings(&[("env", "maze"), ("variant", "gmac")])).is_err());
        assert!(RunConfig::from_settings(&settings(&[("env", "lqr1d"), ("variant", "gmac"), ("lr", "fast")])).is_err());
        assert!(RunConfig::from_settings(&settings(&[("env", "lqr1d"), ("variant", "gmac"), ("gamma", "1.5")])).is_err());
        assert!(RunConfig::from_settings(&settings(&[("env", "gridworld"), ("variant", "gmac"), ("grid_size", "2")])).is_err());
        assert!(RunConfig::from_settings(&settings(&[("env", "gridworld"), ("variant", "ppo_scalar"), ("intrinsic_coef", "0.1")])).is_err());
    }

    #[test]
    fn variant_and_action_space_pick_defaults() {
        let c = RunConfig::from_settings(&settings(&[("env", "lqr1d"), ("variant", "gmac")])).unwrap();
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!(c.train.entropy_coef, 0.0);
        let c = RunConfig::from_settings(&settings(&[("env", "gridworld"), ("variant", "iqac"), ("seed", "4")])).unwrap();
        assert_eq!(c.train.lr, 2.5e-4);
        assert_eq!(c.out_dir, PathBuf::from("runs/iqac-gridworld-seed4"));
    }

    #[test]
    fn snapshot_round_trips() {
        for (env, variant, extra) in [
            ("gridworld", "gmac", ("grid_step_cap", "30")),
            ("lqr1d", "iqac", ("lr", "0.000123")),
            ("five_state", "iqac_e", ("hidden", "16, 8")),
            ("gridworld", "ppo_scalar", ("gamma", "0.9")),
        ] {
            let c = RunConfig::from_settings(&settings(&[("env", env), ("variant", variant), extra])).unwrap();
            let back = RunConfig::from_settings(&Settings::parse(&c.snapshot(), Path::new("snap")).unwrap()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn toy_keys() {
        let c = ToyConfig::from_settings(&settings(&[("loss", "energy_gmm")])).unwrap();
        assert_eq!(c.losses, vec![ToyLoss::EnergyGmm]);
        assert_eq!(c.mdp, MdpSource::FiveState { gamma: 1.0 });
        assert!(ToyConfig::from_settings(&settings(&[("loss", "l2")])).is_err());
        assert!(ToyConfig::from_settings(&settings(&[("mdp", "chain.mdp"), ("gamma", "0.9")])).is_err());
        assert!(ToyConfig::from_settings(&settings(&[("variant", "gmac")])).is_err());
    }

    #[test]
    fn every_train_key_is_documented_once() {
        let mut seen = BTreeSet::new();
        for d in TRAIN_KEYS.iter().chain(TOY_KEYS) {
            assert!(!d.doc.is_empty());
            seen.insert(d.key);
        }
        let snap = RunConfig::from_settings(&settings(&[("env", "gridworld"), ("variant", "gmac"), ("grid_step_cap", "9")])).unwrap().snapshot();
        for line in snap.lines() {
            let k = line.split(" = ").next().unwrap();
            assert!(TRAIN_KEYS.iter().any(|d| d.key == k), "{k}");
        }
    }
}
