//! Off-policy evaluation for ranked recommendations with
//! missing-not-at-random rewards.
//!
//! The library provides:
//!
//! - a synthetic ranking environment with position-decayed rewards and a
//!   tunable missing-not-at-random observation mechanism ([`env`]),
//! - marginalized importance-weighting estimators over action embeddings,
//!   with optional reward-observation propensity correction
//!   ([`estimators`]),
//! - a factorization-machine reward model trained with inverse observation
//!   weights, feeding the direct-method baseline ([`fm`]),
//! - a replication harness that sweeps the missingness severity and
//!   reports an exact squared-error decomposition per estimator
//!   ([`harness`]), and
//! - exactly enumerable instances plus property checks that verify the
//!   estimators against brute-force ground truth ([`harness::tiny`],
//!   [`harness::verify`]).
//!
//! All randomness derives from explicit seeds through counter-based
//! streams, so every result is reproducible bit for bit regardless of the
//! `parallel` feature or thread count.

pub mod env;
pub mod estimators;
pub mod fm;
pub mod harness;
pub mod model;

mod exec;
mod seeding;

pub use env::{EnvConfig, EnvError, EnvModel, ObservationDistribution, PolicyValue};
pub use estimators::{
    dm_value, heuristic_theta, mips, mips_roips, EstimatorError, EstimatorReport, HeuristicTheta,
    ThetaProvider, TrueTheta,
};
pub use fm::{
    fm_predict, fm_train, weighted_loss, weighted_loss_gradient, FeatureSpace, FmError, FmModel,
    FmParams, FmTrainConfig, FmTrainResult,
};
pub use harness::{
    alpha_sweep, mse_decomposition, run_replications, AlphaSummary, EstimatorKind,
    EstimatorSummary, HarnessError, MseDecomposition, ReplicationOutcome, SweepConfig,
    SweepOutput, SweepRow, SweepSummary, TargetSelect, ThetaMode,
};
pub use model::{
    marginal_embedding_probs, validate_dataset, Context, EmbeddingMap, LoggedDataset,
    LoggedRecord, ModelError, ObservationVector, PolicyDistribution, RankingAction,
    ValidationIssue, ValidationReport, Violation,
};
