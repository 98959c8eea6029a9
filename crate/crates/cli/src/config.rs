//! JSON run configuration: the sweep parameters plus output options.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use ope_mnar::{EnvConfig, EstimatorKind, FmTrainConfig, SweepConfig, TargetSelect, ThetaMode};
use serde::{Deserialize, Serialize};

/// Everything a sweep run needs, loadable from a JSON file. Every field
/// has a default, so `{}` is a valid config describing the standard run.
///
/// The first ten fields mirror [`SweepConfig`]; the rest control output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub alphas: Vec<f64>,
    pub n: usize,
    pub n_seeds: usize,
    pub n_mc: usize,
    pub estimators: Vec<EstimatorKind>,
    pub fm: FmTrainConfig,
    pub fm_theta: ThetaMode,
    pub target: TargetSelect,
    pub resample_env_per_seed: bool,
    /// Directory receiving results.csv, summary.json and figure.svg.
    pub output_dir: PathBuf,
    /// Whether to write figure.svg alongside the tables.
    pub chart: bool,
    /// 0 is silent; higher values print progress to stderr.
    pub verbosity: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sweep = SweepConfig::default();
        Self {
            env: sweep.env,
            alphas: sweep.alphas,
            n: sweep.n,
            n_seeds: sweep.n_seeds,
            n_mc: sweep.n_mc,
            estimators: sweep.estimators,
            fm: sweep.fm,
            fm_theta: sweep.fm_theta,
            target: sweep.target,
            resample_env_per_seed: sweep.resample_env_per_seed,
            output_dir: PathBuf::from("out"),
            chart: true,
            verbosity: 1,
        }
    }
}

impl RunConfig {
    /// The sweep portion of this config.
    pub fn sweep(&self) -> SweepConfig {
        SweepConfig {
            env: self.env.clone(),
            alphas: self.alphas.clone(),
            n: self.n,
            n_seeds: self.n_seeds,
            n_mc: self.n_mc,
            estimators: self.estimators.clone(),
            fm: self.fm.clone(),
            fm_theta: self.fm_theta,
            target: self.target,
            resample_env_per_seed: self.resample_env_per_seed,
        }
    }
}

/// Reads and validates a config file. Parse errors carry the offending
/// line and column; semantic errors name the bad field.
pub fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let config: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("invalid config file {}", path.display()))?;
    config
        .sweep()
        .validate()
        .with_context(|| format!("invalid config file {}", path.display()))?;
    Ok(config)
}
