//! Seed-replicated experiment harness.
//!
//! A sweep fixes one synthetic world, varies the missingness severity
//! `alpha`, replicates dataset sampling and estimation over seeds, and
//! reports the exact mean-squared-error decomposition
//! `mse = squared_bias + variance` per estimator, where the statistics are
//! taken over seed replications against a Monte Carlo ground-truth value.
//!
//! Seeds use counter-derived random streams, so results are identical for
//! any thread count and adding seeds never perturbs existing ones.

pub mod tiny;
pub mod verify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvConfig, EnvError, EnvModel, PolicyValue};
use crate::estimators::{
    dm_value, mips, mips_roips, EstimatorError, HeuristicTheta, TrueTheta,
};
use crate::exec::map_indexed;
use crate::fm::{fm_train, FeatureSpace, FmError, FmModel, FmTrainConfig};
use crate::model::{Context, PolicyDistribution};
use crate::seeding::{mix, STREAM_RESAMPLE, STREAM_TRAIN};

/// Seed for the ground-truth Monte Carlo context stream. Fixed: the truth
/// is part of the experiment definition, not a swept quantity.
const EVAL_SEED: u64 = 0;

/// Relative tolerance for the decomposition identity on emitted rows.
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid sweep configuration: {0}")]
    InvalidConfig(String),

    #[error("seed {seed} failed")]
    SeedFailed {
        seed: u64,
        #[source]
        source: Box<HarnessError>,
    },

    #[error("need at least 2 estimates for a decomposition, got {got}")]
    TooFewEstimates { got: usize },

    #[error("decomposition identity violated for {estimator} at alpha {alpha}: residual {residual}")]
    IdentityViolation {
        alpha: f64,
        estimator: String,
        residual: f64,
    },

    #[error("instance requires {terms} enumeration terms, budget is {budget}")]
    InstanceTooLarge { terms: u128, budget: u128 },

    #[error(transparent)]
    Env(#[from] EnvError),

    #[error(transparent)]
    Estimator(#[from] EstimatorError),

    #[error(transparent)]
    Fm(#[from] FmError),

    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// The estimators a sweep can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Direct method with the trained factorization-machine reward model.
    DmFm,
    /// Marginalized importance weighting over embeddings.
    Mips,
    /// Marginalized importance weighting corrected by the exact
    /// observation propensity.
    MipsTrueRoips,
    /// Same correction using the context-free per-position estimate.
    MipsHeuristicRoips,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::DmFm,
        EstimatorKind::Mips,
        EstimatorKind::MipsTrueRoips,
        EstimatorKind::MipsHeuristicRoips,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::DmFm => "dm-fm",
            EstimatorKind::Mips => "mips",
            EstimatorKind::MipsTrueRoips => "mips-true-roips",
            EstimatorKind::MipsHeuristicRoips => "mips-heuristic-roips",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which propensities weight the FM training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaMode {
    TrueModel,
    Heuristic,
}

/// Which policy plays the evaluation target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSelect {
    EpsilonGreedy,
    /// Evaluate the logging policy itself (on-policy sanity checks).
    Logging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub env: EnvConfig,
    /// Missingness severities to sweep.
    pub alphas: Vec<f64>,
    /// Logged dataset size per replication.
    pub n: usize,
    /// Number of seed replications per alpha.
    pub n_seeds: usize,
    /// Monte Carlo contexts for the ground-truth value.
    pub n_mc: usize,
    pub estimators: Vec<EstimatorKind>,
    pub fm: FmTrainConfig,
    /// Propensities used inside FM training.
    pub fm_theta: ThetaMode,
    pub target: TargetSelect,
    /// Redraw the world's parameters per seed instead of fixing them.
    /// Rows then measure error against the mean of per-seed true values.
    pub resample_env_per_seed: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            alphas: vec![0.0, 1.0, 2.0, 3.0],
            n: 1000,
            n_seeds: 100,
            n_mc: 100_000,
            estimators: EstimatorKind::ALL.to_vec(),
            fm: FmTrainConfig::default(),
            fm_theta: ThetaMode::TrueModel,
            target: TargetSelect::EpsilonGreedy,
            resample_env_per_seed: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.env.validate()?;
        if self.alphas.is_empty() {
            return Err(HarnessError::InvalidConfig("alphas must be non-empty".into()));
        }
        for &a in &self.alphas {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(HarnessError::InvalidConfig(format!(
                    "alpha ({a}) must be non-negative and finite"
                )));
            }
        }
        if self.n == 0 {
            return Err(HarnessError::InvalidConfig("n must be >= 1".into()));
        }
        if self.n_seeds < 2 {
            return Err(HarnessError::InvalidConfig(
                "n_seeds must be >= 2 for a variance to exist".into(),
            ));
        }
        if self.n_mc == 0 {
            return Err(HarnessError::InvalidConfig("n_mc must be >= 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(HarnessError::InvalidConfig(
                "estimator roster must be non-empty".into(),
            ));
        }
        for (i, kind) in self.estimators.iter().enumerate() {
            if self.estimators[..i].contains(kind) {
                return Err(HarnessError::InvalidConfig(format!(
                    "estimator roster lists {kind} twice"
                )));
            }
        }
        self.fm.validate()?;
        Ok(())
    }
}

/// Squared-error decomposition over seed replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseDecomposition {
    pub mse: f64,
    pub squared_bias: f64,
    pub variance: f64,
    pub mean_estimate: f64,
}

/// Decomposes the mean squared error of `estimates` against `true_value`.
/// `mse` is computed directly as the mean of squared errors, not from the
/// other two terms, so the identity `mse = squared_bias + variance` is a
/// checkable property rather than a construction.
pub fn mse_decomposition(estimates: &[f64], true_value: f64) -> Result<MseDecomposition, HarnessError> {
    if estimates.len() < 2 {
        return Err(HarnessError::TooFewEstimates {
            got: estimates.len(),
        });
    }
    let n = estimates.len() as f64;
    let mse = estimates
        .iter()
        .map(|v| (true_value - v) * (true_value - v))
        .sum::<f64>()
        / n;
    let mean = estimates.iter().sum::<f64>() / n;
    let squared_bias = (true_value - mean) * (true_value - mean);
    let variance = estimates.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(MseDecomposition {
        mse,
        squared_bias,
        variance,
        mean_estimate: mean,
    })
}

/// One CSV row of a sweep summary. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub estimator: String,
    pub mse: f64,
    pub squared_bias: f64,
    pub variance: f64,
    pub mean_estimate: f64,
    pub true_value: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
}

/// Per-estimator statistics for one alpha, including the standard error
/// of the mean estimate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub mse: f64,
    pub squared_bias: f64,
    pub variance: f64,
    pub mean_estimate: f64,
    pub standard_error: f64,
}

/// Per-alpha detail mirrored into the JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub true_value: f64,
    pub true_value_standard_error: f64,
    pub estimators: Vec<EstimatorSummary>,
}

/// Raw per-seed estimates for one alpha, in roster order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub alpha: f64,
    pub true_value: PolicyValue,
    pub estimators: Vec<EstimatorKind>,
    /// `estimates[i][s]` is estimator `i`'s value on seed `s`.
    pub estimates: Vec<Vec<f64>>,
}

/// Everything a sweep produces: summary rows, per-alpha detail, and the
/// raw per-seed estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub summary: SweepSummary,
    pub details: Vec<AlphaSummary>,
    pub replications: Vec<ReplicationOutcome>,
}

fn target_policy_for(
    cfg: &SweepConfig,
    env: &EnvModel,
    x: &Context,
) -> Result<PolicyDistribution, EnvError> {
    match cfg.target {
        TargetSelect::EpsilonGreedy => env.target_policy(x),
        TargetSelect::Logging => env.logging_policy(x),
    }
}

fn feature_space(env: &EnvModel) -> FeatureSpace {
    let c = env.config();
    FeatureSpace {
        context_dim: c.context_dim,
        n_embeddings: c.n_embeddings,
        ranking_len: c.ranking_len,
    }
}

/// Evaluates every rostered estimator on the dataset of one seed. Returns
/// estimates in roster order. Public so benchmarks can drive single seeds.
pub fn evaluate_seed(cfg: &SweepConfig, env: &EnvModel, seed: u64) -> Result<Vec<f64>, HarnessError> {
    let dataset = env.sample_dataset(cfg.n, seed)?;
    let map = env.embedding_map();
    let target = |x: &Context| target_policy_for(cfg, env, x);
    let logging = |x: &Context| env.logging_policy(x);

    let mut values = Vec::with_capacity(cfg.estimators.len());
    for kind in &cfg.estimators {
        let value = match kind {
            EstimatorKind::Mips => mips(&dataset, &target, &logging, map)?.total,
            EstimatorKind::MipsTrueRoips => {
                let theta = TrueTheta::new(env);
                mips_roips(&dataset, &target, &logging, map, &theta)?.total
            }
            EstimatorKind::MipsHeuristicRoips => {
                let theta = HeuristicTheta::from_dataset(&dataset)?;
                mips_roips(&dataset, &target, &logging, map, &theta)?.total
            }
            EstimatorKind::DmFm => {
                let space = feature_space(env);
                // Per-seed training seed, derived so that neither the env
                // seed nor the configured training seed collides across
                // replications.
                let train_cfg = FmTrainConfig {
                    train_seed: mix(env.config().env_seed ^ cfg.fm.train_seed, STREAM_TRAIN, seed),
                    ..cfg.fm.clone()
                };
                let result = match cfg.fm_theta {
                    ThetaMode::TrueModel => {
                        fm_train(&dataset, &space, &TrueTheta::new(env), &train_cfg)?
                    }
                    ThetaMode::Heuristic => {
                        let theta = HeuristicTheta::from_dataset(&dataset)?;
                        fm_train(&dataset, &space, &theta, &train_cfg)?
                    }
                };
                let model = FmModel {
                    space,
                    params: result.params,
                };
                dm_value(&dataset, &target, map, |x, e, k| {
                    model
                        .predict_reward(x, e, k)
                        .expect("feature space matches the environment")
                })?
                .total
            }
        };
        values.push(value);
    }
    Ok(values)
}

fn env_for_seed(cfg: &SweepConfig, alpha: f64, seed: u64) -> Result<EnvModel, HarnessError> {
    let env_config = EnvConfig {
        env_seed: mix(cfg.env.env_seed, STREAM_RESAMPLE, seed),
        ..cfg.env.clone()
    };
    Ok(EnvModel::new(env_config, alpha)?)
}

fn replications_inner(
    cfg: &SweepConfig,
    alpha: f64,
    cached_truth: Option<&PolicyValue>,
) -> Result<ReplicationOutcome, HarnessError> {
    let env = EnvModel::new(cfg.env.clone(), alpha)?;

    let true_value = match cached_truth {
        Some(v) => v.clone(),
        None if cfg.resample_env_per_seed => per_seed_mean_truth(cfg, alpha)?,
        None => env.policy_value_mc(
            |x| target_policy_for(cfg, &env, x),
            cfg.n_mc,
            EVAL_SEED,
        )?,
    };

    let per_seed = map_indexed(cfg.n_seeds, |s| -> Result<Vec<f64>, HarnessError> {
        let seed = s as u64;
        let result = if cfg.resample_env_per_seed {
            let seed_env = env_for_seed(cfg, alpha, seed)?;
            evaluate_seed(cfg, &seed_env, seed)
        } else {
            evaluate_seed(cfg, &env, seed)
        };
        result.map_err(|e| HarnessError::SeedFailed {
            seed,
            source: Box::new(e),
        })
    });

    let mut estimates = vec![Vec::with_capacity(cfg.n_seeds); cfg.estimators.len()];
    for seed_values in per_seed {
        let values = seed_values?;
        for (slot, v) in estimates.iter_mut().zip(values) {
            slot.push(v);
        }
    }
    Ok(ReplicationOutcome {
        alpha,
        true_value,
        estimators: cfg.estimators.clone(),
        estimates,
    })
}

/// Mean of per-seed analytic true values under per-seed resampled worlds.
/// The combined standard error treats the per-seed estimates as
/// independent.
fn per_seed_mean_truth(cfg: &SweepConfig, alpha: f64) -> Result<PolicyValue, HarnessError> {
    let mut total = 0.0;
    let mut per_position = vec![0.0; cfg.env.ranking_len];
    let mut se_sq = 0.0;
    for s in 0..cfg.n_seeds {
        let env = env_for_seed(cfg, alpha, s as u64)?;
        let v = env.policy_value_mc(
            |x| target_policy_for(cfg, &env, x),
            cfg.n_mc,
            EVAL_SEED,
        )?;
        total += v.total;
        se_sq += v.standard_error * v.standard_error;
        for (slot, p) in per_position.iter_mut().zip(v.per_position.iter()) {
            *slot += p;
        }
    }
    let n = cfg.n_seeds as f64;
    for slot in &mut per_position {
        *slot /= n;
    }
    Ok(PolicyValue {
        total: total / n,
        per_position,
        standard_error: se_sq.sqrt() / n,
        n_samples: cfg.n_mc * cfg.n_seeds,
    })
}

/// Runs all seed replications at one alpha. Computes its own ground truth;
/// [`alpha_sweep`] shares the truth across alphas instead, since neither
/// the target policy nor the reward model depends on alpha.
pub fn run_replications(cfg: &SweepConfig, alpha: f64) -> Result<ReplicationOutcome, HarnessError> {
    cfg.validate()?;
    replications_inner(cfg, alpha, None)
}

/// Full sweep over `cfg.alphas`: replications, decompositions, and the
/// identity check on every emitted row.
pub fn alpha_sweep(cfg: &SweepConfig) -> Result<SweepOutput, HarnessError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut details = Vec::new();
    let mut replications = Vec::new();
    let mut cached_truth: Option<PolicyValue> = None;

    for &alpha in &cfg.alphas {
        let outcome = replications_inner(cfg, alpha, cached_truth.as_ref())?;
        cached_truth = Some(outcome.true_value.clone());

        let mut estimator_summaries = Vec::with_capacity(cfg.estimators.len());
        for (i, kind) in cfg.estimators.iter().enumerate() {
            let decomp = mse_decomposition(&outcome.estimates[i], outcome.true_value.total)?;
            let residual = (decomp.mse - decomp.squared_bias - decomp.variance).abs();
            // Written so a non-finite residual (e.g. a NaN estimate) fails
            // rather than slipping past the comparison.
            if !(residual <= DECOMPOSITION_TOLERANCE * decomp.mse.max(1.0)) {
                return Err(HarnessError::IdentityViolation {
                    alpha,
                    estimator: kind.to_string(),
                    residual,
                });
            }
            rows.push(SweepRow {
                alpha,
                estimator: kind.to_string(),
                mse: decomp.mse,
                squared_bias: decomp.squared_bias,
                variance: decomp.variance,
                mean_estimate: decomp.mean_estimate,
                true_value: outcome.true_value.total,
                n_seeds: cfg.n_seeds,
            });
            estimator_summaries.push(EstimatorSummary {
                estimator: *kind,
                mse: decomp.mse,
                squared_bias: decomp.squared_bias,
                variance: decomp.variance,
                mean_estimate: decomp.mean_estimate,
                standard_error: (decomp.variance / cfg.n_seeds as f64).sqrt(),
            });
        }
        details.push(AlphaSummary {
            alpha,
            true_value: outcome.true_value.total,
            true_value_standard_error: outcome.true_value.standard_error,
            estimators: estimator_summaries,
        });
        replications.push(outcome);
    }
    Ok(SweepOutput {
        summary: SweepSummary { rows },
        details,
        replications,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decomposition_arithmetic_examples() {
        let d = mse_decomposition(&[1.0, 3.0], 2.0).unwrap();
        assert_eq!((d.mse, d.squared_bias, d.variance), (1.0, 0.0, 1.0));

        let d = mse_decomposition(&[2.0, 2.0, 2.0], 2.0).unwrap();
        assert_eq!((d.mse, d.squared_bias, d.variance), (0.0, 0.0, 0.0));

        let d = mse_decomposition(&[0.0, 0.0], 2.0).unwrap();
        assert_eq!((d.mse, d.squared_bias, d.variance), (4.0, 4.0, 0.0));

        assert!(matches!(
            mse_decomposition(&[1.0], 2.0),
            Err(HarnessError::TooFewEstimates { got: 1 })
        ));
    }

    fn small_sweep_config() -> SweepConfig {
        SweepConfig {
            env: EnvConfig {
                context_dim: 2,
                n_actions: 6,
                n_embeddings: 2,
                ranking_len: 2,
                ..Default::default()
            },
            alphas: vec![0.0, 1.0],
            n: 30,
            n_seeds: 3,
            n_mc: 500,
            estimators: EstimatorKind::ALL.to_vec(),
            fm: FmTrainConfig {
                epochs: 3,
                ..Default::default()
            },
            fm_theta: ThetaMode::TrueModel,
            target: TargetSelect::EpsilonGreedy,
            resample_env_per_seed: false,
        }
    }

    #[test]
    fn sweep_shape_and_determinism() {
        let cfg = small_sweep_config();
        let a = alpha_sweep(&cfg).unwrap();
        assert_eq!(a.summary.rows.len(), 2 * 4);
        assert_eq!(a.details.len(), 2);
        assert_eq!(a.replications[0].estimates[0].len(), 3);
        let b = alpha_sweep(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_rows_satisfy_the_decomposition_identity() {
        let out = alpha_sweep(&small_sweep_config()).unwrap();
        for row in &out.summary.rows {
            let residual = (row.mse - row.squared_bias - row.variance).abs();
            assert!(residual <= DECOMPOSITION_TOLERANCE * row.mse.max(1.0));
        }
    }

    #[test]
    fn alpha_zero_makes_true_roips_equal_mips_per_seed() {
        let cfg = SweepConfig {
            estimators: vec![EstimatorKind::Mips, EstimatorKind::MipsTrueRoips],
            ..small_sweep_config()
        };
        let outcome = run_replications(&cfg, 0.0).unwrap();
        for s in 0..cfg.n_seeds {
            let diff = (outcome.estimates[0][s] - outcome.estimates[1][s]).abs();
            assert!(diff <= 1e-12, "seed {s}: {diff}");
        }
    }

    #[test]
    fn on_policy_mean_matches_truth_at_alpha_zero() {
        let cfg = SweepConfig {
            estimators: vec![EstimatorKind::Mips],
            target: TargetSelect::Logging,
            n_seeds: 30,
            n: 50,
            n_mc: 4000,
            ..small_sweep_config()
        };
        let outcome = run_replications(&cfg, 0.0).unwrap();
        let estimates = &outcome.estimates[0];
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        let var = estimates
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (estimates.len() - 1) as f64;
        let se_mean = (var / estimates.len() as f64).sqrt();
        let se = (se_mean * se_mean
            + outcome.true_value.standard_error * outcome.true_value.standard_error)
            .sqrt();
        let z = (mean - outcome.true_value.total).abs() / se;
        assert!(z <= 3.0, "on-policy mean off by {z} combined standard errors");
    }

    #[test]
    fn resampled_worlds_change_estimates_but_stay_deterministic() {
        let base = SweepConfig {
            estimators: vec![EstimatorKind::Mips],
            n_mc: 200,
            ..small_sweep_config()
        };
        let resampled = SweepConfig {
            resample_env_per_seed: true,
            ..base.clone()
        };
        let fixed = run_replications(&base, 1.0).unwrap();
        let varied = run_replications(&resampled, 1.0).unwrap();
        assert_ne!(fixed.estimates, varied.estimates);
        let again = run_replications(&resampled, 1.0).unwrap();
        assert_eq!(varied, again);
    }

    #[test]
    fn config_validation_rejects_bad_sweeps() {
        let ok = small_sweep_config();
        assert!(ok.validate().is_ok());

        let bad = SweepConfig { alphas: vec![], ..ok.clone() };
        assert!(bad.validate().is_err());
        let bad = SweepConfig { alphas: vec![-1.0], ..ok.clone() };
        assert!(bad.validate().is_err());
        let bad = SweepConfig { n_seeds: 1, ..ok.clone() };
        assert!(bad.validate().is_err());
        let bad = SweepConfig { estimators: vec![], ..ok.clone() };
        assert!(bad.validate().is_err());
        let bad = SweepConfig {
            estimators: vec![EstimatorKind::Mips, EstimatorKind::Mips],
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let bad = SweepConfig {
            fm: FmTrainConfig { epochs: 0, ..Default::default() },
            ..ok
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn estimator_kind_round_trips_through_names() {
        for kind in EstimatorKind::ALL {
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{kind}\""));
            let back: EstimatorKind = serde_json::from_str(&json).unwrap();
            assert_eq!(back, kind);
        }
    }
}
