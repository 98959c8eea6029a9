//! Second-order factorization-machine reward model trained with an
//! inverse-observation-weighted squared loss.
//!
//! The model scores a (context, embedding, position) triple through a dense
//! feature vector `[x | onehot(embedding) | onehot(position)]`. Training
//! minimizes, by stochastic gradient descent over observed entries,
//!
//! ```text
//! J(params) = sum over observed (i,k) of (1/theta(x_i,k)) * (r_ik - f(z_ik))^2
//!           + l2_penalty * ||params||^2
//! ```
//!
//! [`weighted_loss`] and [`weighted_loss_gradient`] expose the exact
//! objective and its analytic full-batch gradient so tests can check the
//! gradient against central finite differences of the loss alone.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::ThetaProvider;
use crate::model::{Context, LoggedDataset};
use crate::seeding::{stream_rng, STREAM_TRAIN};

#[derive(Debug, Error)]
pub enum FmError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),

    #[error("{what} index {index} out of range ({bound} available)")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("context has {got} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dataset contains no observed rewards")]
    NoObservedRewards,

    #[error("observation propensity {value} at record {record}, position {position} is not positive")]
    InvalidPropensity {
        record: usize,
        position: usize,
        value: f64,
    },
}

/// Dimensions of the dense feature encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpace {
    pub context_dim: usize,
    pub n_embeddings: usize,
    pub ranking_len: usize,
}

impl FeatureSpace {
    /// Total feature dimension `p`.
    pub fn dim(&self) -> usize {
        self.context_dim + self.n_embeddings + self.ranking_len
    }

    /// Dense features `[x | onehot(e) | onehot(k)]`.
    pub fn featurize(&self, x: &Context, e: usize, k: usize) -> Result<Vec<f64>, FmError> {
        if x.dim() != self.context_dim {
            return Err(FmError::DimensionMismatch {
                expected: self.context_dim,
                got: x.dim(),
            });
        }
        if e >= self.n_embeddings {
            return Err(FmError::IndexOutOfRange {
                what: "embedding",
                index: e,
                bound: self.n_embeddings,
            });
        }
        if k >= self.ranking_len {
            return Err(FmError::IndexOutOfRange {
                what: "position",
                index: k,
                bound: self.ranking_len,
            });
        }
        let mut z = vec![0.0; self.dim()];
        z[..self.context_dim].copy_from_slice(x.values());
        z[self.context_dim + e] = 1.0;
        z[self.context_dim + self.n_embeddings + k] = 1.0;
        Ok(z)
    }
}

/// Factorization-machine parameters: bias, linear weights, and `p x rank`
/// interaction factors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FmParams {
    pub bias: f64,
    pub linear: Vec<f64>,
    pub factors: Vec<f64>,
    pub rank: usize,
}

impl FmParams {
    pub fn zeros(p: usize, rank: usize) -> Self {
        Self {
            bias: 0.0,
            linear: vec![0.0; p],
            factors: vec![0.0; p * rank],
            rank,
        }
    }

    fn init<R: Rng>(p: usize, rank: usize, scale: f64, rng: &mut R) -> Self {
        let mut draw = || scale * rng.sample::<f64, _>(StandardNormal);
        let bias = draw();
        let linear = (0..p).map(|_| draw()).collect();
        let factors = (0..p * rank).map(|_| draw()).collect();
        Self {
            bias,
            linear,
            factors,
            rank,
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    fn squared_norm(&self) -> f64 {
        self.bias * self.bias
            + self.linear.iter().map(|w| w * w).sum::<f64>()
            + self.factors.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Second-order FM score via the O(p*rank) pairwise identity:
/// `bias + w.z + 0.5 * sum_f ((sum_j V_jf z_j)^2 - sum_j V_jf^2 z_j^2)`.
pub fn fm_predict(z: &[f64], params: &FmParams) -> f64 {
    debug_assert_eq!(z.len(), params.dim());
    let mut out = params.bias;
    for (w, zj) in params.linear.iter().zip(z.iter()) {
        out += w * zj;
    }
    let rank = params.rank;
    for f in 0..rank {
        let mut s = 0.0;
        let mut s2 = 0.0;
        for (j, &zj) in z.iter().enumerate() {
            let v = params.factors[j * rank + f] * zj;
            s += v;
            s2 += v * v;
        }
        out += 0.5 * (s * s - s2);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FmTrainConfig {
    pub rank: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_penalty: f64,
    pub init_scale: f64,
    pub train_seed: u64,
}

impl Default for FmTrainConfig {
    fn default() -> Self {
        Self {
            rank: 10,
            learning_rate: 0.01,
            epochs: 50,
            l2_penalty: 1e-4,
            init_scale: 0.01,
            train_seed: 0,
        }
    }
}

impl FmTrainConfig {
    pub fn validate(&self) -> Result<(), FmError> {
        if self.rank == 0 {
            return Err(FmError::InvalidConfig("rank must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FmError::InvalidConfig(format!(
                "learning_rate ({}) must be positive and finite",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(FmError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(FmError::InvalidConfig(format!(
                "l2_penalty ({}) must be non-negative and finite",
                self.l2_penalty
            )));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(FmError::InvalidConfig(format!(
                "init_scale ({}) must be positive and finite",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// Upper bound on the norm of one entry's data gradient during SGD.
/// Inverse-propensity weights combined with heavy-tailed feature vectors
/// occasionally push a single step past the stable step-size bound, after
/// which the iterates blow up; capping the step length (not its direction)
/// keeps training finite and leaves the objective's stationary points
/// unchanged.
const GRADIENT_NORM_CAP: f64 = 50.0;

/// One observed (record, position) training example.
struct TrainEntry {
    features: Vec<f64>,
    reward: f64,
    /// Inverse observation propensity `1/theta`.
    weight: f64,
}

fn collect_entries<P: ThetaProvider>(
    d: &LoggedDataset,
    space: &FeatureSpace,
    theta: &P,
) -> Result<Vec<TrainEntry>, FmError> {
    let mut entries = Vec::new();
    for (i, rec) in d.records.iter().enumerate() {
        for k in 0..rec.ranking.len() {
            let Some(reward) = rec.rewards[k] else {
                continue;
            };
            let t = theta.theta(&rec.context, k);
            if !(t > 0.0) {
                return Err(FmError::InvalidPropensity {
                    record: i,
                    position: k,
                    value: t,
                });
            }
            entries.push(TrainEntry {
                features: space.featurize(&rec.context, rec.ranking.embeddings[k], k)?,
                reward,
                weight: 1.0 / t,
            });
        }
    }
    if entries.is_empty() {
        return Err(FmError::NoObservedRewards);
    }
    Ok(entries)
}

fn loss_entries(entries: &[TrainEntry], params: &FmParams, l2_penalty: f64) -> f64 {
    let data: f64 = entries
        .iter()
        .map(|entry| {
            let err = fm_predict(&entry.features, params) - entry.reward;
            entry.weight * err * err
        })
        .sum();
    data + l2_penalty * params.squared_norm()
}

fn gradient_entries(entries: &[TrainEntry], params: &FmParams, l2_penalty: f64) -> FmParams {
    let p = params.dim();
    let rank = params.rank;
    let mut grad = FmParams::zeros(p, rank);
    let mut s = vec![0.0; rank];
    for entry in entries {
        let z = &entry.features;
        let mut pred = params.bias;
        for (w, zj) in params.linear.iter().zip(z.iter()) {
            pred += w * zj;
        }
        for f in 0..rank {
            let mut sf = 0.0;
            let mut sf2 = 0.0;
            for (j, &zj) in z.iter().enumerate() {
                let v = params.factors[j * rank + f] * zj;
                sf += v;
                sf2 += v * v;
            }
            s[f] = sf;
            pred += 0.5 * (sf * sf - sf2);
        }
        let g = 2.0 * entry.weight * (pred - entry.reward);
        grad.bias += g;
        for (slot, &zj) in grad.linear.iter_mut().zip(z.iter()) {
            *slot += g * zj;
        }
        for (j, &zj) in z.iter().enumerate() {
            for f in 0..rank {
                let v = params.factors[j * rank + f];
                grad.factors[j * rank + f] += g * (zj * s[f] - v * zj * zj);
            }
        }
    }
    grad.bias += 2.0 * l2_penalty * params.bias;
    for (slot, w) in grad.linear.iter_mut().zip(params.linear.iter()) {
        *slot += 2.0 * l2_penalty * w;
    }
    for (slot, v) in grad.factors.iter_mut().zip(params.factors.iter()) {
        *slot += 2.0 * l2_penalty * v;
    }
    grad
}

/// Exact training objective at `params`.
pub fn weighted_loss<P: ThetaProvider>(
    d: &LoggedDataset,
    space: &FeatureSpace,
    theta: &P,
    params: &FmParams,
    l2_penalty: f64,
) -> Result<f64, FmError> {
    let entries = collect_entries(d, space, theta)?;
    Ok(loss_entries(&entries, params, l2_penalty))
}

/// Analytic full-batch gradient of [`weighted_loss`], returned in a
/// parameter-shaped container.
pub fn weighted_loss_gradient<P: ThetaProvider>(
    d: &LoggedDataset,
    space: &FeatureSpace,
    theta: &P,
    params: &FmParams,
    l2_penalty: f64,
) -> Result<FmParams, FmError> {
    let entries = collect_entries(d, space, theta)?;
    Ok(gradient_entries(&entries, params, l2_penalty))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmTrainResult {
    pub params: FmParams,
    /// Full objective value after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains the FM by per-entry stochastic gradient descent. Entries are
/// reshuffled every epoch; the L2 gradient is applied in per-entry shares
/// of `l2_penalty / n_entries` so one epoch accounts for the penalty once.
/// Per-entry steps are length-capped by [`GRADIENT_NORM_CAP`].
pub fn fm_train<P: ThetaProvider>(
    d: &LoggedDataset,
    space: &FeatureSpace,
    theta: &P,
    cfg: &FmTrainConfig,
) -> Result<FmTrainResult, FmError> {
    cfg.validate()?;
    let entries = collect_entries(d, space, theta)?;
    let p = space.dim();
    let rank = cfg.rank;
    let mut rng = stream_rng(cfg.train_seed, STREAM_TRAIN, 0);
    let mut params = FmParams::init(p, rank, cfg.init_scale, &mut rng);

    let lr = cfg.learning_rate;
    let l2_share = cfg.l2_penalty / entries.len() as f64;
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mut s = vec![0.0; rank];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        // Fisher-Yates shuffle; kept explicit so the visitation order is
        // pinned by the seed stream alone.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for &idx in &order {
            let entry = &entries[idx];
            let z = &entry.features;
            let mut pred = params.bias;
            for (w, zj) in params.linear.iter().zip(z.iter()) {
                pred += w * zj;
            }
            for f in 0..rank {
                let mut sf = 0.0;
                let mut sf2 = 0.0;
                for (j, &zj) in z.iter().enumerate() {
                    let v = params.factors[j * rank + f] * zj;
                    sf += v;
                    sf2 += v * v;
                }
                s[f] = sf;
                pred += 0.5 * (sf * sf - sf2);
            }
            let g = 2.0 * entry.weight * (pred - entry.reward);
            let mut direction_sq = 1.0;
            for &zj in z.iter() {
                direction_sq += zj * zj;
            }
            for (j, &zj) in z.iter().enumerate() {
                for f in 0..rank {
                    let v = params.factors[j * rank + f];
                    let d = zj * s[f] - v * zj * zj;
                    direction_sq += d * d;
                }
            }
            let norm = g.abs() * direction_sq.sqrt();
            let g = if norm > GRADIENT_NORM_CAP {
                g * (GRADIENT_NORM_CAP / norm)
            } else {
                g
            };
            params.bias -= lr * (g + 2.0 * l2_share * params.bias);
            for (w, &zj) in params.linear.iter_mut().zip(z.iter()) {
                *w -= lr * (g * zj + 2.0 * l2_share * *w);
            }
            for (j, &zj) in z.iter().enumerate() {
                for f in 0..rank {
                    let v = params.factors[j * rank + f];
                    params.factors[j * rank + f] =
                        v - lr * (g * (zj * s[f] - v * zj * zj) + 2.0 * l2_share * v);
                }
            }
        }
        epoch_losses.push(loss_entries(&entries, &params, cfg.l2_penalty));
    }
    Ok(FmTrainResult {
        params,
        epoch_losses,
    })
}

/// A trained reward model bound to its feature encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct FmModel {
    pub space: FeatureSpace,
    pub params: FmParams,
}

impl FmModel {
    pub fn predict_reward(&self, x: &Context, e: usize, k: usize) -> Result<f64, FmError> {
        let z = self.space.featurize(x, e, k)?;
        Ok(fm_predict(&z, &self.params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, EnvModel};
    use crate::estimators::HeuristicTheta;

    const SPACE: FeatureSpace = FeatureSpace {
        context_dim: 2,
        n_embeddings: 2,
        ranking_len: 2,
    };

    #[test]
    fn featurize_concatenates_context_and_onehots() {
        let x = Context::new(vec![0.3, -0.1]).unwrap();
        let z = SPACE.featurize(&x, 1, 0).unwrap();
        assert_eq!(z, vec![0.3, -0.1, 0.0, 1.0, 1.0, 0.0]);

        let zero = Context::new(vec![0.0, 0.0]).unwrap();
        let z = SPACE.featurize(&zero, 0, 1).unwrap();
        assert_eq!(z, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);

        assert_eq!(
            SPACE.featurize(&x, 1, 0).unwrap(),
            SPACE.featurize(&x, 1, 0).unwrap()
        );
    }

    #[test]
    fn featurize_rejects_bad_indices() {
        let x = Context::new(vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            SPACE.featurize(&x, 2, 0),
            Err(FmError::IndexOutOfRange { what: "embedding", .. })
        ));
        assert!(matches!(
            SPACE.featurize(&x, 0, 2),
            Err(FmError::IndexOutOfRange { what: "position", .. })
        ));
        let short = Context::new(vec![0.0]).unwrap();
        assert!(matches!(
            SPACE.featurize(&short, 0, 0),
            Err(FmError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn predict_with_zero_params_is_zero() {
        let params = FmParams::zeros(4, 3);
        assert_eq!(fm_predict(&[1.0, -2.0, 0.5, 3.0], &params), 0.0);
    }

    #[test]
    fn predict_without_factors_is_linear() {
        let params = FmParams {
            bias: 0.5,
            linear: vec![1.0, -2.0],
            factors: vec![0.0; 2],
            rank: 1,
        };
        let z = [3.0, 1.0];
        assert!((fm_predict(&z, &params) - (0.5 + 3.0 - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn predict_pairwise_arithmetic() {
        let params = FmParams {
            bias: 1.0,
            linear: vec![1.0, 2.0],
            factors: vec![1.0, 2.0],
            rank: 1,
        };
        // 1 + (1 + 2) + <V_0, V_1> * z_0 * z_1 = 4 + 2 = 6.
        assert!((fm_predict(&[1.0, 1.0], &params) - 6.0).abs() < 1e-15);
    }

    fn small_env(alpha: f64) -> EnvModel {
        let config = EnvConfig {
            context_dim: 2,
            n_actions: 6,
            n_embeddings: 2,
            ranking_len: 2,
            ..Default::default()
        };
        EnvModel::new(config, alpha).unwrap()
    }

    fn space_of(env: &EnvModel) -> FeatureSpace {
        FeatureSpace {
            context_dim: env.config().context_dim,
            n_embeddings: env.config().n_embeddings,
            ranking_len: env.config().ranking_len,
        }
    }

    #[test]
    fn analytic_gradient_matches_central_finite_differences() {
        let env = small_env(1.0);
        let space = space_of(&env);
        let d = env.sample_dataset(30, 4).unwrap();
        let theta = HeuristicTheta::from_dataset(&d).unwrap();
        let l2 = 1e-3;

        let mut rng = stream_rng(99, 0x11, 0);
        let params = FmParams::init(space.dim(), 3, 0.3, &mut rng);
        let grad = weighted_loss_gradient(&d, &space, &theta, &params, l2).unwrap();

        let step = 1e-5;
        let check = |set: &dyn Fn(&mut FmParams, f64), analytic: f64| {
            let mut hi = params.clone();
            set(&mut hi, step);
            let mut lo = params.clone();
            set(&mut lo, -step);
            let fd = (weighted_loss(&d, &space, &theta, &hi, l2).unwrap()
                - weighted_loss(&d, &space, &theta, &lo, l2).unwrap())
                / (2.0 * step);
            let scale = analytic.abs().max(fd.abs());
            if scale > 1e-6 {
                assert!(
                    (analytic - fd).abs() / scale <= 1e-4,
                    "analytic {analytic} vs finite difference {fd}"
                );
            } else {
                assert!((analytic - fd).abs() <= 1e-8);
            }
        };

        check(&|p, h| p.bias += h, grad.bias);
        for j in 0..params.dim() {
            check(&move |p, h| p.linear[j] += h, grad.linear[j]);
        }
        for idx in 0..params.factors.len() {
            check(&move |p, h| p.factors[idx] += h, grad.factors[idx]);
        }
    }

    use crate::seeding::stream_rng;

    #[test]
    fn training_reduces_the_objective() {
        let config = EnvConfig::default();
        let env = EnvModel::new(config, 1.0).unwrap();
        let d = env.sample_dataset(1000, 7).unwrap();
        let theta = HeuristicTheta::from_dataset(&d).unwrap();
        let space = space_of(&env);
        let cfg = FmTrainConfig::default();
        let result = fm_train(&d, &space, &theta, &cfg).unwrap();
        assert_eq!(result.epoch_losses.len(), cfg.epochs);
        let first = result.epoch_losses[0];
        let last = *result.epoch_losses.last().unwrap();
        assert!(last < first, "loss went from {first} to {last}");
    }

    #[test]
    fn recovers_a_linear_target_without_noise() {
        let env = small_env(0.0);
        let space = space_of(&env);
        let mut d = env.sample_dataset(200, 3).unwrap();
        // Replace rewards with an exact linear function of the features.
        let target_w = [0.4, -0.3, 0.2, -0.1, 0.3, 0.5];
        for rec in &mut d.records {
            for k in 0..rec.ranking.len() {
                let z = space.featurize(&rec.context, rec.ranking.embeddings[k], k).unwrap();
                let r: f64 = z.iter().zip(target_w.iter()).map(|(a, b)| a * b).sum();
                rec.rewards[k] = Some(0.1 + r);
            }
        }
        let unit = |_: &Context, _: usize| 1.0;
        let cfg = FmTrainConfig {
            rank: 2,
            learning_rate: 0.02,
            epochs: 300,
            l2_penalty: 0.0,
            init_scale: 0.01,
            train_seed: 5,
        };
        let result = fm_train(&d, &space, &unit, &cfg).unwrap();
        let n_entries = d.records.iter().map(|r| r.ranking.len()).sum::<usize>();
        let mse = result.epoch_losses.last().unwrap() / n_entries as f64;
        assert!(mse <= 1e-3, "final mean squared error {mse}");
    }

    #[test]
    fn unit_theta_objective_is_the_unweighted_squared_loss() {
        let env = small_env(1.0);
        let space = space_of(&env);
        let d = env.sample_dataset(40, 8).unwrap();
        let unit = |_: &Context, _: usize| 1.0;
        let mut rng = stream_rng(3, 0x22, 0);
        let params = FmParams::init(space.dim(), 2, 0.1, &mut rng);
        let l2 = 0.5;
        let loss = weighted_loss(&d, &space, &unit, &params, l2).unwrap();
        let mut expected = l2 * params.squared_norm();
        for rec in &d.records {
            for k in 0..rec.ranking.len() {
                if let Some(r) = rec.rewards[k] {
                    let z = space.featurize(&rec.context, rec.ranking.embeddings[k], k).unwrap();
                    let err = fm_predict(&z, &params) - r;
                    expected += err * err;
                }
            }
        }
        assert_eq!(loss, expected);
    }

    #[test]
    fn training_is_deterministic() {
        let env = small_env(2.0);
        let space = space_of(&env);
        let d = env.sample_dataset(100, 6).unwrap();
        let theta = HeuristicTheta::from_dataset(&d).unwrap();
        let cfg = FmTrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let a = fm_train(&d, &space, &theta, &cfg).unwrap();
        let b = fm_train(&d, &space, &theta, &cfg).unwrap();
        assert_eq!(a, b);
        let other = fm_train(
            &d,
            &space,
            &theta,
            &FmTrainConfig {
                train_seed: 1,
                ..cfg
            },
        )
        .unwrap();
        assert_ne!(a.params, other.params);
    }

    #[test]
    fn extreme_inverse_propensities_do_not_blow_up_training() {
        let env = small_env(1.0);
        let space = space_of(&env);
        let d = env.sample_dataset(200, 9).unwrap();
        // Uncapped per-entry steps with weights this large diverge to NaN
        // within an epoch; the gradient cap must keep everything finite.
        let harsh = |_: &Context, _: usize| 1e-6;
        let result = fm_train(&d, &space, &harsh, &FmTrainConfig::default()).unwrap();
        assert!(result.epoch_losses.iter().all(|l| l.is_finite()));
        assert!(result.params.bias.is_finite());
        assert!(result.params.linear.iter().all(|v| v.is_finite()));
        assert!(result.params.factors.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn training_rejects_fully_unobserved_data() {
        let env = small_env(1.0);
        let space = space_of(&env);
        let mut d = env.sample_dataset(10, 2).unwrap();
        for rec in &mut d.records {
            rec.observation.mask.iter_mut().for_each(|m| *m = false);
            rec.rewards.iter_mut().for_each(|r| *r = None);
        }
        let unit = |_: &Context, _: usize| 1.0;
        assert!(matches!(
            fm_train(&d, &space, &unit, &FmTrainConfig::default()),
            Err(FmError::NoObservedRewards)
        ));
    }

    #[test]
    fn train_config_validation() {
        let ok = FmTrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(FmTrainConfig { rank: 0, ..ok.clone() }.validate().is_err());
        assert!(FmTrainConfig { learning_rate: 0.0, ..ok.clone() }.validate().is_err());
        assert!(FmTrainConfig { epochs: 0, ..ok.clone() }.validate().is_err());
        assert!(FmTrainConfig { l2_penalty: -1.0, ..ok.clone() }.validate().is_err());
        assert!(FmTrainConfig { init_scale: 0.0, ..ok }.validate().is_err());
    }
}
