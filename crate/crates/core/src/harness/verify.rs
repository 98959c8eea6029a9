//! Self-contained verification suite: checks the estimators' analytic
//! properties against brute-force enumeration on randomly drawn
//! enumerable instances, plus the degenerate edge cases. The CLI exposes
//! this as its `verify` subcommand.

use crate::env::EnvError;
use crate::estimators::{heuristic_theta, mips, mips_roips, HeuristicTheta, ThetaProvider, TrueTheta};
use crate::exec::map_indexed;
use crate::harness::tiny::{random_tiny_instance, random_tiny_instance_with, OracleEstimator};
use crate::harness::HarnessError;
use crate::model::{
    Context, EmbeddingMap, LoggedDataset, LoggedRecord, ObservationVector, PolicyDistribution,
    RankingAction,
};

/// Absolute tolerance for exact-enumeration comparisons.
pub const ORACLE_TOLERANCE: f64 = 1e-10;
/// Allowed deviation of a Monte Carlo mean, in standard errors.
pub const MC_Z_LIMIT: f64 = 4.0;
/// Per-seed tolerance for the full-observation degeneracy.
pub const DEGENERACY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    /// Random enumerable instances per enumeration property.
    pub n_instances: usize,
    /// Size-1 datasets for the Monte Carlo consistency property.
    pub mc_seeds: usize,
    pub base_seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n_instances: 100,
            mc_seeds: 10_000,
            base_seed: 0,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_instances == 0 {
            return Err(HarnessError::InvalidConfig(
                "n_instances must be >= 1".into(),
            ));
        }
        if self.mc_seeds < 2 {
            return Err(HarnessError::InvalidConfig("mc_seeds must be >= 2".into()));
        }
        Ok(())
    }
}

/// Outcome of one verified property.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub name: String,
    pub passed: bool,
    /// Largest deviation observed, in the property's own units.
    pub max_deviation: f64,
    pub detail: String,
}

/// Runs every property and reports each outcome. Failed properties are
/// reported, not raised; errors mean the check itself could not run.
pub fn run_verification(cfg: &VerifyConfig) -> Result<Vec<PropertyReport>, HarnessError> {
    cfg.validate()?;
    Ok(vec![
        corrected_estimator_unbiasedness(cfg)?,
        plain_estimator_bias_closed_form(cfg)?,
        monte_carlo_consistency(cfg)?,
        heuristic_theta_floor()?,
        alpha_zero_degeneracy(cfg)?,
    ])
}

fn corrected_estimator_unbiasedness(cfg: &VerifyConfig) -> Result<PropertyReport, HarnessError> {
    let mut max_deviation = 0.0f64;
    for i in 0..cfg.n_instances {
        let t = random_tiny_instance(cfg.base_seed.wrapping_add(i as u64))?;
        let env = t.env();
        let truth = t.true_value(|x| env.target_policy(x))?;
        let oracle = t.oracle_expected_value(
            OracleEstimator::MipsTrueRoips,
            |x| env.target_policy(x),
            |x| env.logging_policy(x),
        )?;
        for k in 0..truth.per_position.len() {
            max_deviation = max_deviation.max((oracle.per_position[k] - truth.per_position[k]).abs());
        }
    }
    Ok(PropertyReport {
        name: "roips-exact-unbiasedness".into(),
        passed: max_deviation <= ORACLE_TOLERANCE,
        max_deviation,
        detail: format!(
            "exact expectation vs true value per position over {} instances",
            cfg.n_instances
        ),
    })
}

fn plain_estimator_bias_closed_form(cfg: &VerifyConfig) -> Result<PropertyReport, HarnessError> {
    let mut max_deviation = 0.0f64;
    for i in 0..cfg.n_instances {
        let t = random_tiny_instance(cfg.base_seed.wrapping_add(i as u64))?;
        let env = t.env();
        let truth = t.true_value(|x| env.target_policy(x))?;
        let oracle = t.oracle_expected_value(
            OracleEstimator::Mips,
            |x| env.target_policy(x),
            |x| env.logging_policy(x),
        )?;
        let bias = t.closed_form_bias(|x| env.target_policy(x))?;
        for k in 0..truth.per_position.len() {
            let enumerated = truth.per_position[k] - oracle.per_position[k];
            max_deviation = max_deviation.max((bias.per_position[k] - enumerated).abs());
        }
    }
    Ok(PropertyReport {
        name: "mips-bias-closed-form".into(),
        passed: max_deviation <= ORACLE_TOLERANCE,
        max_deviation,
        detail: format!(
            "closed-form bias vs enumerated bias per position over {} instances",
            cfg.n_instances
        ),
    })
}

fn monte_carlo_consistency(cfg: &VerifyConfig) -> Result<PropertyReport, HarnessError> {
    let t = random_tiny_instance(cfg.base_seed)?;
    let env = t.env();
    let oracle = t.oracle_expected_value(
        OracleEstimator::Mips,
        |x| env.target_policy(x),
        |x| env.logging_policy(x),
    )?;

    let estimates = map_indexed(cfg.mc_seeds, |s| -> Result<f64, HarnessError> {
        let d = t.sample_dataset(1, s as u64)?;
        Ok(mips(
            &d,
            |x| env.target_policy(x),
            |x| env.logging_policy(x),
            env.embedding_map(),
        )?
        .total)
    });
    let mut values = Vec::with_capacity(cfg.mc_seeds);
    for v in estimates {
        values.push(v?);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let deviation = (mean - oracle.total).abs();
    let (passed, z) = if se > 0.0 {
        (deviation <= MC_Z_LIMIT * se, deviation / se)
    } else {
        (deviation <= DEGENERACY_TOLERANCE, deviation)
    };
    Ok(PropertyReport {
        name: "mips-mc-consistency".into(),
        passed,
        max_deviation: z,
        detail: format!(
            "mean over {} size-1 datasets vs oracle expectation, in standard errors",
            cfg.mc_seeds
        ),
    })
}

fn heuristic_theta_floor() -> Result<PropertyReport, HarnessError> {
    let n = 100;
    let map = EmbeddingMap::new(vec![0, 1], 2)?;
    let records: Vec<LoggedRecord> = (0..n)
        .map(|_| LoggedRecord {
            context: Context::new(vec![0.3]).expect("finite"),
            ranking: RankingAction::from_actions(vec![0, 1], &map).expect("in range"),
            observation: ObservationVector {
                mask: vec![true, false],
            },
            rewards: vec![Some(0.4), None],
        })
        .collect();
    let d = LoggedDataset {
        records,
        fingerprint: "verify-floor".into(),
    };
    let theta = heuristic_theta(&d)?;
    let floor = 1.0 / n as f64;
    let max_deviation = (theta[1] - floor).abs();

    let uniform =
        |_: &Context| -> Result<PolicyDistribution, EnvError> {
            Ok(PolicyDistribution::new(vec![0.5, 0.5, 0.5, 0.5], 2).expect("valid rows"))
        };
    let provider = HeuristicTheta::from_dataset(&d)?;
    let estimate = mips_roips(&d, uniform, uniform, &map, &provider)?;
    let passed = theta[0] == 1.0 && theta[1] == floor && estimate.total.is_finite();
    Ok(PropertyReport {
        name: "heuristic-theta-floor".into(),
        passed,
        max_deviation,
        detail: format!("fully unobserved position floored at 1/n with n = {n}"),
    })
}

fn alpha_zero_degeneracy(cfg: &VerifyConfig) -> Result<PropertyReport, HarnessError> {
    let t = random_tiny_instance_with(cfg.base_seed, Some(0.0))?;
    let env = t.env();
    let true_theta = TrueTheta::new(env);
    let mut max_deviation = 0.0f64;
    let mut all_observed = true;
    for seed in 0..10u64 {
        let d = t.sample_dataset(50, seed)?;
        for rec in &d.records {
            if !rec.observation.mask.iter().all(|&m| m) {
                all_observed = false;
            }
            for k in 0..rec.ranking.len() {
                max_deviation =
                    max_deviation.max((true_theta.theta(&rec.context, k) - 1.0).abs());
            }
        }
        for &th in &heuristic_theta(&d)? {
            max_deviation = max_deviation.max((th - 1.0).abs());
        }
        let plain = mips(
            &d,
            |x| env.target_policy(x),
            |x| env.logging_policy(x),
            env.embedding_map(),
        )?;
        let corrected = mips_roips(
            &d,
            |x| env.target_policy(x),
            |x| env.logging_policy(x),
            env.embedding_map(),
            &true_theta,
        )?;
        max_deviation = max_deviation.max((plain.total - corrected.total).abs());
    }
    Ok(PropertyReport {
        name: "alpha-zero-degeneracy".into(),
        passed: all_observed && max_deviation <= DEGENERACY_TOLERANCE,
        max_deviation,
        detail: "alpha = 0 observes everything and the correction is a no-op".into(),
    })
}
