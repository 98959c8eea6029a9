//! Off-policy value estimators over logged ranking data.
//!
//! All estimators share the same structure: per position, average a
//! weighted sum of observed rewards over the full record count `n` (not
//! the observed count), so positions with missing rewards contribute zero
//! rather than being renormalized. Weights are importance ratios of
//! embedding marginals; the reward-observation variants additionally
//! divide by a per-(context, position) observation propensity supplied
//! through [`ThetaProvider`].

use thiserror::Error;

use crate::env::{EnvError, EnvModel};
use crate::model::{
    marginal_embedding_probs, Context, EmbeddingMap, LoggedDataset, ModelError,
    PolicyDistribution,
};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("target policy puts probability on embedding {embedding} at position {position} where the logging policy has none")]
    CommonSupportViolation { embedding: usize, position: usize },

    #[error("observation propensity {value} at record {record}, position {position} is not positive")]
    InvalidPropensity {
        record: usize,
        position: usize,
        value: f64,
    },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Policy(#[from] EnvError),
}

/// Per-(context, position) reward-observation propensity.
///
/// Implementations must return values in `(0, 1]`; estimators reject
/// non-positive values.
pub trait ThetaProvider {
    fn theta(&self, x: &Context, k: usize) -> f64;
}

impl<F> ThetaProvider for F
where
    F: Fn(&Context, usize) -> f64,
{
    fn theta(&self, x: &Context, k: usize) -> f64 {
        self(x, k)
    }
}

/// Exact observation propensity read off an environment's observation
/// model. Returns 0 for a context where the model is degenerate, which the
/// estimators turn into an error.
pub struct TrueTheta<'a> {
    env: &'a EnvModel,
}

impl<'a> TrueTheta<'a> {
    pub fn new(env: &'a EnvModel) -> Self {
        Self { env }
    }
}

impl ThetaProvider for TrueTheta<'_> {
    fn theta(&self, x: &Context, k: usize) -> f64 {
        match self.env.observation_distribution(x) {
            Ok(dist) => dist.marginal_observation_prob(k),
            Err(_) => 0.0,
        }
    }
}

/// Context-free observation propensity: the observed fraction per
/// position, floored at `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicTheta {
    per_position: Vec<f64>,
}

impl HeuristicTheta {
    pub fn from_dataset(d: &LoggedDataset) -> Result<Self, EstimatorError> {
        Ok(Self {
            per_position: heuristic_theta(d)?,
        })
    }

    pub fn per_position(&self) -> &[f64] {
        &self.per_position
    }
}

impl ThetaProvider for HeuristicTheta {
    fn theta(&self, _x: &Context, k: usize) -> f64 {
        self.per_position[k]
    }
}

/// Observed fraction of records per position, clipped below at `1/n` so a
/// fully unobserved position cannot produce an infinite inverse weight.
pub fn heuristic_theta(d: &LoggedDataset) -> Result<Vec<f64>, EstimatorError> {
    if d.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    let n = d.n() as f64;
    let ranking_len = d.records[0].ranking.len();
    let mut out = vec![0.0; ranking_len];
    for rec in &d.records {
        for (k, &observed) in rec.observation.mask.iter().enumerate() {
            if observed {
                out[k] += 1.0;
            }
        }
    }
    for v in &mut out {
        *v = (*v / n).max(1.0 / n);
    }
    Ok(out)
}

/// Value estimate with its position-wise decomposition. `total` is the
/// sequential sum of `per_position`, and `n_effective` counts the
/// (record, position) pairs that contributed a term.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    pub name: String,
    pub total: f64,
    pub per_position: Vec<f64>,
    pub n_effective: usize,
}

impl EstimatorReport {
    fn from_sums(name: &str, mut per_position: Vec<f64>, n: f64, n_effective: usize) -> Self {
        for v in &mut per_position {
            *v /= n;
        }
        let total = per_position.iter().sum();
        Self {
            name: name.to_string(),
            total,
            per_position,
            n_effective,
        }
    }
}

/// Importance ratio of embedding marginals at one position:
/// `target_marginal[e] / logging_marginal[e]`, with `0/0 = 0` by
/// convention and an error when only the logging marginal is zero.
pub fn embedding_weight(
    e: usize,
    k: usize,
    target: &PolicyDistribution,
    logging: &PolicyDistribution,
    map: &EmbeddingMap,
) -> Result<f64, EstimatorError> {
    let tm = marginal_embedding_probs(target.row(k), map)?;
    let lm = marginal_embedding_probs(logging.row(k), map)?;
    weight_from_marginals(&tm, &lm, e, k)
}

fn weight_from_marginals(
    tm: &[f64],
    lm: &[f64],
    e: usize,
    k: usize,
) -> Result<f64, EstimatorError> {
    if lm[e] == 0.0 {
        if tm[e] == 0.0 {
            return Ok(0.0);
        }
        return Err(EstimatorError::CommonSupportViolation {
            embedding: e,
            position: k,
        });
    }
    Ok(tm[e] / lm[e])
}

fn require_nonempty(d: &LoggedDataset) -> Result<usize, EstimatorError> {
    if d.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    Ok(d.records[0].ranking.len())
}

/// Marginalized importance-weighting estimator: per position, the average
/// over all `n` records of `weight * reward` for observed entries.
pub fn mips<T, L>(
    d: &LoggedDataset,
    target_policy: T,
    logging_policy: L,
    map: &EmbeddingMap,
) -> Result<EstimatorReport, EstimatorError>
where
    T: Fn(&Context) -> Result<PolicyDistribution, EnvError>,
    L: Fn(&Context) -> Result<PolicyDistribution, EnvError>,
{
    mips_impl(d, target_policy, logging_policy, map, None::<&HeuristicTheta>, "mips")
}

/// Marginalized importance weighting with reward-observation propensity
/// correction: each observed term is further divided by `theta(x, k)`.
pub fn mips_roips<T, L, P>(
    d: &LoggedDataset,
    target_policy: T,
    logging_policy: L,
    map: &EmbeddingMap,
    theta: &P,
) -> Result<EstimatorReport, EstimatorError>
where
    T: Fn(&Context) -> Result<PolicyDistribution, EnvError>,
    L: Fn(&Context) -> Result<PolicyDistribution, EnvError>,
    P: ThetaProvider,
{
    mips_impl(d, target_policy, logging_policy, map, Some(theta), "mips-roips")
}

fn mips_impl<T, L, P>(
    d: &LoggedDataset,
    target_policy: T,
    logging_policy: L,
    map: &EmbeddingMap,
    theta: Option<&P>,
    name: &str,
) -> Result<EstimatorReport, EstimatorError>
where
    T: Fn(&Context) -> Result<PolicyDistribution, EnvError>,
    L: Fn(&Context) -> Result<PolicyDistribution, EnvError>,
    P: ThetaProvider,
{
    let ranking_len = require_nonempty(d)?;
    let mut sums = vec![0.0; ranking_len];
    let mut n_effective = 0;
    for (i, rec) in d.records.iter().enumerate() {
        if !rec.observation.mask.iter().any(|&m| m) {
            continue;
        }
        let target = target_policy(&rec.context)?;
        let logging = logging_policy(&rec.context)?;
        for k in 0..ranking_len {
            if !rec.observation.mask[k] {
                continue;
            }
            let tm = marginal_embedding_probs(target.row(k), map)?;
            let lm = marginal_embedding_probs(logging.row(k), map)?;
            let e = rec.ranking.embeddings[k];
            let weight = weight_from_marginals(&tm, &lm, e, k)?;
            let reward = rec.rewards[k].expect("mask and rewards are consistent");
            let mut term = weight * reward;
            if let Some(provider) = theta {
                let t = provider.theta(&rec.context, k);
                if !(t > 0.0) {
                    return Err(EstimatorError::InvalidPropensity {
                        record: i,
                        position: k,
                        value: t,
                    });
                }
                term /= t;
            }
            sums[k] += term;
            n_effective += 1;
        }
    }
    Ok(EstimatorReport::from_sums(name, sums, d.n() as f64, n_effective))
}

/// Direct-method evaluator: plugs a reward model into the target policy's
/// embedding marginals and averages over the dataset's contexts. Ignores
/// logged rewards entirely.
pub fn dm_value<T, R>(
    d: &LoggedDataset,
    target_policy: T,
    map: &EmbeddingMap,
    reward_model: R,
) -> Result<EstimatorReport, EstimatorError>
where
    T: Fn(&Context) -> Result<PolicyDistribution, EnvError>,
    R: Fn(&Context, usize, usize) -> f64,
{
    let ranking_len = require_nonempty(d)?;
    let mut sums = vec![0.0; ranking_len];
    for rec in &d.records {
        let target = target_policy(&rec.context)?;
        for k in 0..ranking_len {
            let marg = marginal_embedding_probs(target.row(k), map)?;
            let v: f64 = marg
                .iter()
                .enumerate()
                .map(|(e, &m)| m * reward_model(&rec.context, e, k))
                .sum();
            sums[k] += v;
        }
    }
    let n_effective = d.n() * ranking_len;
    Ok(EstimatorReport::from_sums("dm", sums, d.n() as f64, n_effective))
}
