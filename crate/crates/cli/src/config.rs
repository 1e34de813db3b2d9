//! Run configuration: flat key=value files merged over command-line flags
//! merged over defaults, schema-validated before any computation runs.
//!
//! Precedence is file > flags > defaults: a config file pins a run exactly,
//! so stray flags cannot silently change a recorded experiment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use sdiqrng::detection::{Config, ExperimentParams, LossFold};
use sdiqrng::engine::EngineOptions;
use sdiqrng::extract::EPS_SEC_DEFAULT;
use sdiqrng::states::OverlapKind;

/// Model and run parameters shared by most subcommands. Any value given in
/// `--run-config` overrides the corresponding flag.
#[derive(Args, Clone, Debug, Default)]
pub struct ModelFlags {
    /// Run configuration file (key=value lines; overrides these flags)
    #[arg(long)]
    pub run_config: Option<PathBuf>,
    /// Receiver configuration: I or II
    #[arg(long)]
    pub config: Option<String>,
    /// Number of input symbols (Config I; Config II is fixed at 3)
    #[arg(long)]
    pub n_inputs: Option<usize>,
    /// Mean photon number per pulse
    #[arg(long)]
    pub mu: Option<f64>,
    /// Detector efficiency in `[0, 1]`
    #[arg(long)]
    pub eta: Option<f64>,
    /// Per-bin spurious click probability
    #[arg(long)]
    pub eps: Option<f64>,
    /// Overlap model: energy or overlap
    #[arg(long)]
    pub model: Option<String>,
    /// Detector-loss convention: exponent or thinning
    #[arg(long)]
    pub fold: Option<String>,
    /// Number of trials to simulate
    #[arg(long)]
    pub trials: Option<usize>,
    /// RNG seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extractor security parameter ε_sec
    #[arg(long)]
    pub eps_sec: Option<f64>,
    /// Slack width multiplier for empirical tables
    #[arg(long)]
    pub slack_sigma: Option<f64>,
    /// Solver duality-gap tolerance
    #[arg(long)]
    pub gap_tol: Option<f64>,
    /// Solver feasibility tolerance
    #[arg(long)]
    pub feas_tol: Option<f64>,
    /// Solver iteration cap
    #[arg(long)]
    pub max_iters: Option<usize>,
}

/// Fully resolved run parameters.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub params: ExperimentParams,
    pub model: OverlapKind,
    pub trials: usize,
    pub seed: u64,
    pub eps_sec: f64,
    pub slack_sigma: f64,
    pub engine: EngineOptions,
}

const KEYS: &[&str] = &[
    "version",
    "config",
    "n_inputs",
    "mu",
    "eta",
    "eps",
    "model",
    "fold",
    "trials",
    "seed",
    "eps_sec",
    "slack_sigma",
    "gap_tol",
    "feas_tol",
    "max_iters",
];

/// Parse a flat key=value file: `#` comments and blank lines are skipped,
/// keys must be known, and `version=1` is required.
pub fn parse_kv(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key=value, got {raw:?}", path.display(), lineno + 1);
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            bail!("{}:{}: unknown key {key:?}", path.display(), lineno + 1);
        }
        if map.insert(key.to_string(), value.to_string()).is_some() {
            bail!("{}:{}: duplicate key {key:?}", path.display(), lineno + 1);
        }
    }
    match map.get("version").map(String::as_str) {
        Some("1") => Ok(map),
        Some(v) => bail!("{}: unsupported version {v:?}", path.display()),
        None => bail!("{}: missing version key", path.display()),
    }
}

fn parse_config(s: &str) -> Result<Config> {
    match s {
        "I" | "i" | "1" => Ok(Config::I),
        "II" | "ii" | "2" => Ok(Config::II),
        _ => bail!("config must be I or II, got {s:?}"),
    }
}

fn parse_model(s: &str) -> Result<OverlapKind> {
    match s {
        "energy" => Ok(OverlapKind::EnergyBound),
        "overlap" => Ok(OverlapKind::OverlapBound),
        _ => bail!("model must be energy or overlap, got {s:?}"),
    }
}

fn parse_fold(s: &str) -> Result<LossFold> {
    match s {
        "exponent" => Ok(LossFold::Exponent),
        "thinning" => Ok(LossFold::Thinning),
        _ => bail!("fold must be exponent or thinning, got {s:?}"),
    }
}

/// Render the model back into flag form (used when echoing resolved runs).
pub fn model_name(kind: OverlapKind) -> &'static str {
    match kind {
        OverlapKind::EnergyBound => "energy",
        OverlapKind::OverlapBound => "overlap",
    }
}

pub fn config_name(config: Config) -> &'static str {
    match config {
        Config::I => "I",
        Config::II => "II",
    }
}

pub fn fold_name(fold: LossFold) -> &'static str {
    match fold {
        LossFold::Exponent => "exponent",
        LossFold::Thinning => "thinning",
    }
}

impl ModelFlags {
    /// Merge file over flags over defaults and validate the result.
    pub fn resolve(&self) -> Result<Resolved> {
        let file = match &self.run_config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                parse_kv(&text, path)?
            }
            None => BTreeMap::new(),
        };

        macro_rules! pick {
            ($key:literal, $flag:expr, $default:expr, $parse:expr) => {
                match file.get($key) {
                    Some(s) => $parse(s.as_str())
                        .with_context(|| format!("run config key {}", $key))?,
                    None => $flag.unwrap_or($default),
                }
            };
        }
        let parse_num =
            |s: &str| s.parse::<f64>().with_context(|| format!("bad number {s:?}"));
        let parse_usize =
            |s: &str| s.parse::<usize>().with_context(|| format!("bad integer {s:?}"));
        let parse_u64 = |s: &str| s.parse::<u64>().with_context(|| format!("bad integer {s:?}"));

        let config = pick!("config", self.config.as_deref().map(parse_config).transpose()?, Config::I, parse_config);
        let n_inputs = pick!("n_inputs", self.n_inputs, 3, parse_usize);
        let params = ExperimentParams {
            config,
            n_inputs,
            mu: pick!("mu", self.mu, 0.18, parse_num),
            eta: pick!("eta", self.eta, 1.0, parse_num),
            epsilon: pick!("eps", self.eps, 0.0, parse_num),
            fold: pick!("fold", self.fold.as_deref().map(parse_fold).transpose()?, LossFold::Exponent, parse_fold),
        };
        params.validate()?;

        let resolved = Resolved {
            params,
            model: pick!("model", self.model.as_deref().map(parse_model).transpose()?, OverlapKind::EnergyBound, parse_model),
            trials: pick!("trials", self.trials, 100_000, parse_usize),
            seed: pick!("seed", self.seed, 7, parse_u64),
            eps_sec: pick!("eps_sec", self.eps_sec, EPS_SEC_DEFAULT, parse_num),
            slack_sigma: pick!("slack_sigma", self.slack_sigma, 5.0, parse_num),
            engine: EngineOptions {
                gap_tol: pick!("gap_tol", self.gap_tol, EngineOptions::default().gap_tol, parse_num),
                feas_tol: pick!("feas_tol", self.feas_tol, EngineOptions::default().feas_tol, parse_num),
                max_iters: pick!("max_iters", self.max_iters, EngineOptions::default().max_iters, parse_usize),
            },
        };
        if resolved.trials == 0 {
            bail!("trials must be ≥ 1");
        }
        if !(resolved.eps_sec > 0.0 && resolved.eps_sec < 1.0) {
            bail!("eps_sec must lie in (0,1), got {}", resolved.eps_sec);
        }
        if resolved.slack_sigma.is_nan() || resolved.slack_sigma < 0.0 {
            bail!("slack_sigma must be ≥ 0, got {}", resolved.slack_sigma);
        }
        Ok(resolved)
    }
}
