//! Run configuration: defaults, the TOML file schema and flag overrides.
//!
//! Precedence is defaults < config file < command-line flags. Every key that a
//! flag overrode is listed in `RunConfig::overrides` and ends up in the run
//! manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// Environment variable holding the default output directory.
pub const OUTPUT_DIR_ENV: &str = "LOCDEP_OUTPUT_DIR";

pub const DEFAULT_OUTPUT_DIR: &str = "locdep-out";
pub const DEFAULT_SAMPLES: u64 = 200_000;
pub const DEFAULT_EPS: f64 = 1e-12;
pub const DEFAULT_TRIALS: usize = 50;
pub const DEFAULT_BOOTSTRAP: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum Command {
    SolveParams,
    Pmf,
    Dist,
    Simulate,
    Enumerate,
    Bounds,
    Table1,
    SteinVerify,
    Lemma24Verify,
    ColouringVerify,
}

impl Command {
    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            Command::Dist | Command::Simulate | Command::Table1 | Command::SteinVerify | Command::ColouringVerify
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::SolveParams => "solve-params",
            Command::Pmf => "pmf",
            Command::Dist => "dist",
            Command::Simulate => "simulate",
            Command::Enumerate => "enumerate",
            Command::Bounds => "bounds",
            Command::Table1 => "table1",
            Command::SteinVerify => "stein-verify",
            Command::Lemma24Verify => "lemma24-verify",
            Command::ColouringVerify => "colouring-verify",
        }
    }
}

/// Model selection. Only the fields relevant to `model` are used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `hypercube`, `birthday`, `mono-edges` or `triangles`.
    pub model: Option<String>,
    pub d: Option<u64>,
    pub n: Option<u32>,
    pub k: Option<u32>,
    pub c: Option<u32>,
    pub p: Option<f64>,
    /// Edge-list file, or `complete:N`, `path:L`, `example-seven`.
    pub graph: Option<String>,
}

/// Explicit cumulants (`solve-params`) or family parameters (`pmf`, `stein-verify`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub family: Option<String>,
    pub g1: Option<f64>,
    pub g2: Option<f64>,
    pub g3: Option<f64>,
    pub mu: Option<f64>,
    pub n: Option<u64>,
    pub p: Option<f64>,
    pub r: Option<f64>,
    pub lambda: Option<f64>,
    pub omega: Option<f64>,
    pub eta: Option<f64>,
    pub sigma2: Option<f64>,
}

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub project_valid: bool,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_reps: usize,
    /// Worker threads; unset uses every core. Results do not depend on it.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    /// Keys set by flags over a file or default value.
    #[serde(skip)]
    pub overrides: Vec<String>,
}

fn default_samples() -> u64 {
    DEFAULT_SAMPLES
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn default_bootstrap() -> usize {
    DEFAULT_BOOTSTRAP
}

impl RunConfig {
    pub fn with_defaults(command: Command) -> Self {
        RunConfig {
            command,
            seed: None,
            samples: DEFAULT_SAMPLES,
            eps: DEFAULT_EPS,
            output_dir: default_output_dir(),
            project_valid: false,
            trials: DEFAULT_TRIALS,
            bootstrap_reps: DEFAULT_BOOTSTRAP,
            threads: None,
            target: None,
            model: ModelConfig::default(),
            params: ParamsConfig::default(),
            overrides: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 1e-6) {
            bail!("eps = {} must lie in (0, 1e-6]", self.eps);
        }
        if self.command.is_stochastic() && self.seed.is_none() {
            bail!("command {} is stochastic and needs --seed (or `seed` in the config file)", self.command.name());
        }
        if self.threads == Some(0) {
            bail!("threads must be at least 1");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses a config file; unknown keys are rejected with their location.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

/// Sets `slot` to `value` when the flag was given, recording the override.
pub fn apply<T>(slot: &mut T, value: Option<T>, key: &str, overrides: &mut Vec<String>) {
    if let Some(v) = value {
        *slot = v;
        overrides.push(key.to_string());
    }
}

/// Like [`apply`] for optional slots.
pub fn apply_opt<T>(slot: &mut Option<T>, value: Option<T>, key: &str, overrides: &mut Vec<String>) {
    if value.is_some() {
        *slot = value;
        overrides.push(key.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse_config("command = \"table1\"\n").unwrap();
        assert_eq!(cfg.samples, DEFAULT_SAMPLES);
        assert_eq!(cfg.eps, DEFAULT_EPS);
        assert_eq!(cfg.seed, None);
        assert!(!cfg.project_valid);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config("command = \"pmf\"\nsampels = 3\n").unwrap_err();
        assert!(format!("{err:#}").contains("sampels"), "{err:#}");
        let err = parse_config("command = \"pmf\"\n[model]\nsize = 3\n").unwrap_err();
        assert!(format!("{err:#}").contains("size"));
    }

    #[test]
    fn eps_and_seed_rules() {
        let mut cfg = RunConfig::with_defaults(Command::Simulate);
        assert!(cfg.validate().is_err());
        cfg.seed = Some(1);
        assert!(cfg.validate().is_ok());
        cfg.eps = 1e-3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::with_defaults(Command::Dist);
        cfg.seed = Some(9);
        cfg.model.model = Some("hypercube".into());
        cfg.model.d = Some(3);
        let back = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
