//! Synthetic ranking environment: position-decayed logistic rewards, a
//! softmax logging policy, an epsilon-greedy target policy, and a
//! missing-not-at-random observation mechanism whose severity is controlled
//! by a single parameter `alpha`.
//!
//! An [`EnvModel`] is immutable after construction. All of its parameters
//! (embedding map, reward weights, observation weights) are drawn once from
//! `env_seed` and do not depend on `alpha`, so models built for different
//! `alpha` values describe the same world under different missingness.

use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::map_indexed;
use crate::model::{
    marginal_embedding_probs, Context, EmbeddingMap, LoggedDataset, LoggedRecord, ModelError,
    ObservationVector, PolicyDistribution, RankingAction,
};
use crate::seeding::{mix, sample_categorical, stream_rng, STREAM_DATA, STREAM_ENV, STREAM_EVAL, STREAM_EVAL_CHUNK};

/// Hard cap on ranking length: the observation model enumerates all
/// `2^ranking_len` masks.
pub const MAX_RANKING_LEN: usize = 16;

const MAP_REDRAW_ATTEMPTS: usize = 10_000;
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),

    #[error("ranking_len {len} exceeds the supported maximum {MAX_RANKING_LEN}")]
    RankingTooLong { len: usize },

    #[error("failed to draw an embedding map covering all {n_embeddings} embeddings within {MAP_REDRAW_ATTEMPTS} attempts")]
    EmbeddingCoverage { n_embeddings: usize },

    #[error("all observation-pattern weights are zero for this context")]
    DegenerateObservation,

    #[error("context has {got} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{what} index {index} out of range ({bound} available)")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("sample count must be at least 1")]
    EmptySample,

    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Environment parameters other than the missingness severity `alpha`,
/// which is supplied separately because experiments sweep it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Context dimensionality.
    pub context_dim: usize,
    /// Number of actions.
    pub n_actions: usize,
    /// Number of embeddings (action categories).
    pub n_embeddings: usize,
    /// Ranking length (positions per interaction).
    pub ranking_len: usize,
    /// Per-position reward decay in (0, 1].
    pub position_decay: f64,
    /// Softmax inverse temperature of the logging policy.
    pub beta: f64,
    /// Exploration rate of the epsilon-greedy target policy.
    pub epsilon: f64,
    /// Standard deviation of observed rewards around their mean.
    pub reward_noise: f64,
    /// Seed fixing the environment parameters.
    pub env_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            context_dim: 5,
            n_actions: 500,
            n_embeddings: 5,
            ranking_len: 5,
            position_decay: 0.9,
            beta: 1.0,
            epsilon: 0.2,
            reward_noise: 0.5,
            env_seed: 12345,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.context_dim == 0 {
            return Err(EnvError::InvalidConfig("context_dim must be >= 1".into()));
        }
        if self.n_embeddings == 0 {
            return Err(EnvError::InvalidConfig("n_embeddings must be >= 1".into()));
        }
        if self.n_actions < self.n_embeddings {
            return Err(EnvError::InvalidConfig(format!(
                "n_actions ({}) must be >= n_embeddings ({})",
                self.n_actions, self.n_embeddings
            )));
        }
        if self.ranking_len == 0 {
            return Err(EnvError::InvalidConfig("ranking_len must be >= 1".into()));
        }
        if self.ranking_len > MAX_RANKING_LEN {
            return Err(EnvError::RankingTooLong {
                len: self.ranking_len,
            });
        }
        if !(self.position_decay > 0.0 && self.position_decay <= 1.0) {
            return Err(EnvError::InvalidConfig(format!(
                "position_decay ({}) must lie in (0, 1]",
                self.position_decay
            )));
        }
        if !self.beta.is_finite() {
            return Err(EnvError::InvalidConfig("beta must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(EnvError::InvalidConfig(format!(
                "epsilon ({}) must lie in [0, 1]",
                self.epsilon
            )));
        }
        if !(self.reward_noise > 0.0 && self.reward_noise.is_finite()) {
            return Err(EnvError::InvalidConfig(format!(
                "reward_noise ({}) must be positive and finite",
                self.reward_noise
            )));
        }
        Ok(())
    }
}

/// Probabilities over all `2^K` observation masks for one context.
///
/// Patterns are indexed with position 0 on the most significant of the
/// `K` low bits.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationDistribution {
    n_positions: usize,
    probs: Vec<f64>,
}

impl ObservationDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, EnvError> {
        let len = probs.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(EnvError::InvalidConfig(format!(
                "observation distribution needs a power-of-two length >= 2, got {len}"
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(EnvError::InvalidConfig(
                "observation probabilities must be non-negative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > crate::model::ROW_SUM_TOLERANCE {
            return Err(EnvError::InvalidConfig(format!(
                "observation probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self {
            n_positions: len.trailing_zeros() as usize,
            probs,
        })
    }

    pub fn n_positions(&self) -> usize {
        self.n_positions
    }

    /// Probability of each mask, indexed by bit pattern.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability that position `k` is observed: mass of all patterns
    /// whose bit for `k` is set.
    pub fn marginal_observation_prob(&self, k: usize) -> f64 {
        let bit = self.n_positions - 1 - k;
        self.probs
            .iter()
            .enumerate()
            .filter(|(o, _)| (o >> bit) & 1 == 1)
            .map(|(_, &p)| p)
            .sum()
    }
}

/// Ground-truth policy value with its position-wise decomposition and the
/// Monte Carlo standard error of the total.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValue {
    pub total: f64,
    pub per_position: Vec<f64>,
    pub standard_error: f64,
    pub n_samples: usize,
}

/// The synthetic world: reward model, policies, and observation mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvModel {
    config: EnvConfig,
    alpha: f64,
    embedding_map: EmbeddingMap,
    embedding_counts: Vec<usize>,
    /// Per-embedding reward weight vectors, `n_embeddings x context_dim`.
    reward_weights: Vec<Vec<f64>>,
    /// Per-embedding reward intercepts.
    reward_bias: Vec<f64>,
    /// Per-observation-pattern weight vectors, `2^ranking_len x context_dim`.
    obs_weights: Vec<Vec<f64>>,
}

fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

impl EnvModel {
    /// Draws a world from `config.env_seed`. The draw order (embedding map,
    /// reward weights, reward intercepts, observation weights) is part of
    /// the reproducibility contract; `alpha` influences none of the draws.
    pub fn new(config: EnvConfig, alpha: f64) -> Result<Self, EnvError> {
        config.validate()?;
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(EnvError::InvalidConfig(format!(
                "alpha ({alpha}) must be non-negative and finite"
            )));
        }

        let mut rng = stream_rng(config.env_seed, STREAM_ENV, 0);

        let mut assignment = vec![0usize; config.n_actions];
        let mut covered = false;
        for _ in 0..MAP_REDRAW_ATTEMPTS {
            let mut seen = vec![false; config.n_embeddings];
            for slot in assignment.iter_mut() {
                let e = rng.random_range(0..config.n_embeddings);
                *slot = e;
                seen[e] = true;
            }
            if seen.iter().all(|&s| s) {
                covered = true;
                break;
            }
        }
        if !covered {
            return Err(EnvError::EmbeddingCoverage {
                n_embeddings: config.n_embeddings,
            });
        }
        let embedding_map = EmbeddingMap::new(assignment, config.n_embeddings)?;

        let draw_vec = |rng: &mut rand_chacha::ChaCha12Rng, len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.sample(StandardNormal)).collect()
        };
        let reward_weights: Vec<Vec<f64>> = (0..config.n_embeddings)
            .map(|_| draw_vec(&mut rng, config.context_dim))
            .collect();
        let reward_bias = draw_vec(&mut rng, config.n_embeddings);
        let obs_weights: Vec<Vec<f64>> = (0..1usize << config.ranking_len)
            .map(|_| draw_vec(&mut rng, config.context_dim))
            .collect();

        Self::from_parts(
            config,
            alpha,
            embedding_map,
            reward_weights,
            reward_bias,
            obs_weights,
        )
    }

    /// Builds a world from explicitly chosen parameters (used by tests and
    /// the exactly-enumerable instances).
    pub fn from_parts(
        config: EnvConfig,
        alpha: f64,
        embedding_map: EmbeddingMap,
        reward_weights: Vec<Vec<f64>>,
        reward_bias: Vec<f64>,
        obs_weights: Vec<Vec<f64>>,
    ) -> Result<Self, EnvError> {
        config.validate()?;
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(EnvError::InvalidConfig(format!(
                "alpha ({alpha}) must be non-negative and finite"
            )));
        }
        if embedding_map.n_actions() != config.n_actions
            || embedding_map.n_embeddings() != config.n_embeddings
        {
            return Err(EnvError::InvalidConfig(
                "embedding map shape disagrees with the configuration".into(),
            ));
        }
        if reward_weights.len() != config.n_embeddings
            || reward_weights.iter().any(|w| w.len() != config.context_dim)
        {
            return Err(EnvError::InvalidConfig(
                "reward_weights must be n_embeddings vectors of length context_dim".into(),
            ));
        }
        if reward_bias.len() != config.n_embeddings {
            return Err(EnvError::InvalidConfig(
                "reward_bias must have one entry per embedding".into(),
            ));
        }
        if obs_weights.len() != 1usize << config.ranking_len
            || obs_weights.iter().any(|w| w.len() != config.context_dim)
        {
            return Err(EnvError::InvalidConfig(
                "obs_weights must be 2^ranking_len vectors of length context_dim".into(),
            ));
        }
        let mut embedding_counts = vec![0usize; config.n_embeddings];
        for &e in embedding_map.assignment() {
            embedding_counts[e] += 1;
        }
        Ok(Self {
            config,
            alpha,
            embedding_map,
            embedding_counts,
            reward_weights,
            reward_bias,
            obs_weights,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn embedding_map(&self) -> &EmbeddingMap {
        &self.embedding_map
    }

    fn check_context(&self, x: &Context) -> Result<(), EnvError> {
        if x.dim() != self.config.context_dim {
            return Err(EnvError::DimensionMismatch {
                expected: self.config.context_dim,
                got: x.dim(),
            });
        }
        Ok(())
    }

    /// Linear reward scores `x·w_e + b_e`, one per embedding.
    pub(crate) fn embedding_scores(&self, x: &Context) -> Vec<f64> {
        (0..self.config.n_embeddings)
            .map(|e| x.dot(&self.reward_weights[e]) + self.reward_bias[e])
            .collect()
    }

    fn decay_pow(&self, k: usize) -> f64 {
        self.config.position_decay.powi(k as i32)
    }

    /// Expected reward of embedding `e` at position `k`:
    /// `position_decay^k * logistic(x·w_e + b_e)`. Depends on the ranking
    /// only through the embedding, never the action identity.
    pub fn expected_reward(&self, x: &Context, e: usize, k: usize) -> Result<f64, EnvError> {
        self.check_context(x)?;
        if e >= self.config.n_embeddings {
            return Err(EnvError::IndexOutOfRange {
                what: "embedding",
                index: e,
                bound: self.config.n_embeddings,
            });
        }
        if k >= self.config.ranking_len {
            return Err(EnvError::IndexOutOfRange {
                what: "position",
                index: k,
                bound: self.config.ranking_len,
            });
        }
        let score = x.dot(&self.reward_weights[e]) + self.reward_bias[e];
        Ok(self.decay_pow(k) * logistic(score))
    }

    /// Softmax policy over actions at every position, with logits
    /// `beta * expected_reward`. Actions sharing an embedding share a logit,
    /// so the row is computed from one exponential per embedding.
    pub fn logging_policy(&self, x: &Context) -> Result<PolicyDistribution, EnvError> {
        self.check_context(x)?;
        let cfg = &self.config;
        let scores = self.embedding_scores(x);
        let mut probs = Vec::with_capacity(cfg.ranking_len * cfg.n_actions);
        for k in 0..cfg.ranking_len {
            let decay = self.decay_pow(k);
            let logits: Vec<f64> = scores
                .iter()
                .map(|&s| cfg.beta * decay * logistic(s))
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|&t| (t - max).exp()).collect();
            let z: f64 = weights
                .iter()
                .zip(self.embedding_counts.iter())
                .map(|(&w, &c)| w * c as f64)
                .sum();
            for a in 0..cfg.n_actions {
                probs.push(weights[self.embedding_map.embedding_of(a)] / z);
            }
        }
        Ok(PolicyDistribution::from_rows_unchecked(probs, cfg.n_actions))
    }

    /// Epsilon-greedy policy over actions: `(1-epsilon)` on the action with
    /// the highest expected reward (lowest index on ties) plus
    /// `epsilon / n_actions` everywhere. Rows are identical across
    /// positions because the decay preserves the argmax.
    pub fn target_policy(&self, x: &Context) -> Result<PolicyDistribution, EnvError> {
        self.check_context(x)?;
        let cfg = &self.config;
        let scores = self.embedding_scores(x);
        let mut best_action = 0;
        let mut best_score = f64::NEG_INFINITY;
        for a in 0..cfg.n_actions {
            let s = scores[self.embedding_map.embedding_of(a)];
            if s > best_score {
                best_score = s;
                best_action = a;
            }
        }
        let base = cfg.epsilon / cfg.n_actions as f64;
        let mut row = vec![base; cfg.n_actions];
        row[best_action] += 1.0 - cfg.epsilon;
        let mut probs = Vec::with_capacity(cfg.ranking_len * cfg.n_actions);
        for _ in 0..cfg.ranking_len {
            probs.extend_from_slice(&row);
        }
        Ok(PolicyDistribution::from_rows_unchecked(probs, cfg.n_actions))
    }

    /// Missing-not-at-random mask distribution for one context. Pattern `o`
    /// has weight `|x·v_o| * alpha^(K - ones(o))`, normalized over all
    /// patterns. `powi` gives `0^0 = 1`, so `alpha = 0` puts all mass on
    /// the all-ones mask.
    pub fn observation_distribution(&self, x: &Context) -> Result<ObservationDistribution, EnvError> {
        self.check_context(x)?;
        let k = self.config.ranking_len;
        let mut weights = Vec::with_capacity(1 << k);
        for (o, v) in self.obs_weights.iter().enumerate() {
            let ones = o.count_ones() as usize;
            let w = x.dot(v).abs() * self.alpha.powi((k - ones) as i32);
            weights.push(w);
        }
        let z: f64 = weights.iter().sum();
        if !(z > 0.0) {
            return Err(EnvError::DegenerateObservation);
        }
        for w in &mut weights {
            *w /= z;
        }
        ObservationDistribution::new(weights)
    }

    /// Draws `n` logged interactions. Per record the draw order is:
    /// context, one action per position from the logging policy, the
    /// observation mask, then rewards for observed positions in position
    /// order (unobserved positions consume no randomness).
    pub fn sample_dataset(&self, n: usize, data_seed: u64) -> Result<LoggedDataset, EnvError> {
        if n == 0 {
            return Err(EnvError::EmptySample);
        }
        let cfg = &self.config;
        let mut rng = stream_rng(cfg.env_seed, STREAM_DATA, data_seed);
        let noise = Normal::new(0.0, cfg.reward_noise).expect("validated reward_noise");
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let x = Context::new((0..cfg.context_dim).map(|_| rng.sample(StandardNormal)).collect())?;
            let logging = self.logging_policy(&x)?;
            let actions: Vec<usize> = (0..cfg.ranking_len)
                .map(|k| sample_categorical(&mut rng, logging.row(k)))
                .collect();
            let ranking = RankingAction::from_actions(actions, &self.embedding_map)?;
            let obs = self.observation_distribution(&x)?;
            let pattern = sample_categorical(&mut rng, obs.probs());
            let observation = ObservationVector::from_pattern(pattern, cfg.ranking_len);
            let mut rewards = Vec::with_capacity(cfg.ranking_len);
            for k in 0..cfg.ranking_len {
                if observation.mask[k] {
                    let q = self.expected_reward(&x, ranking.embeddings[k], k)?;
                    rewards.push(Some(q + rng.sample::<f64, _>(noise)));
                } else {
                    rewards.push(None);
                }
            }
            records.push(LoggedRecord {
                context: x,
                ranking,
                observation,
                rewards,
            });
        }
        Ok(LoggedDataset {
            records,
            fingerprint: format!(
                "env_seed={} alpha={} n={} data_seed={}",
                cfg.env_seed, self.alpha, n, data_seed
            ),
        })
    }

    /// Value of `policy` at one context: sum over positions of the
    /// embedding-marginal expectation of the reward.
    pub(crate) fn context_policy_value(
        &self,
        x: &Context,
        policy: &PolicyDistribution,
    ) -> Result<Vec<f64>, EnvError> {
        let scores = self.embedding_scores(x);
        let mut per_position = Vec::with_capacity(self.config.ranking_len);
        for k in 0..self.config.ranking_len {
            let marg = marginal_embedding_probs(policy.row(k), &self.embedding_map)?;
            let decay = self.decay_pow(k);
            let v: f64 = marg
                .iter()
                .zip(scores.iter())
                .map(|(&m, &s)| m * decay * logistic(s))
                .sum();
            per_position.push(v);
        }
        Ok(per_position)
    }

    /// Monte Carlo estimate of a policy's value over fresh contexts. The
    /// per-context value is computed analytically from embedding marginals,
    /// so no actions or rewards are sampled. Contexts are drawn in fixed
    /// chunks with one counter-derived stream per chunk, which makes the
    /// result identical whether chunks run in parallel or sequentially.
    pub fn policy_value_mc<F>(
        &self,
        policy: F,
        n_mc: usize,
        eval_seed: u64,
    ) -> Result<PolicyValue, EnvError>
    where
        F: Fn(&Context) -> Result<PolicyDistribution, EnvError> + Sync,
    {
        if n_mc == 0 {
            return Err(EnvError::EmptySample);
        }
        let cfg = &self.config;
        let n_chunks = n_mc.div_ceil(EVAL_CHUNK);
        let chunk_root = mix(cfg.env_seed, STREAM_EVAL, eval_seed);

        struct ChunkAccum {
            sum: f64,
            sum_sq: f64,
            per_position: Vec<f64>,
        }

        let chunks = map_indexed(n_chunks, |c| -> Result<ChunkAccum, EnvError> {
            let size = EVAL_CHUNK.min(n_mc - c * EVAL_CHUNK);
            let mut rng = stream_rng(chunk_root, STREAM_EVAL_CHUNK, c as u64);
            let mut acc = ChunkAccum {
                sum: 0.0,
                sum_sq: 0.0,
                per_position: vec![0.0; cfg.ranking_len],
            };
            for _ in 0..size {
                let x = Context::new(
                    (0..cfg.context_dim).map(|_| rng.sample(StandardNormal)).collect(),
                )?;
                let dist = policy(&x)?;
                let per_position = self.context_policy_value(&x, &dist)?;
                let total: f64 = per_position.iter().sum();
                acc.sum += total;
                acc.sum_sq += total * total;
                for (slot, v) in acc.per_position.iter_mut().zip(per_position.iter()) {
                    *slot += v;
                }
            }
            Ok(acc)
        });

        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut per_position = vec![0.0; cfg.ranking_len];
        for chunk in chunks {
            let acc = chunk?;
            sum += acc.sum;
            sum_sq += acc.sum_sq;
            for (slot, v) in per_position.iter_mut().zip(acc.per_position.iter()) {
                *slot += v;
            }
        }
        let n = n_mc as f64;
        let mean = sum / n;
        for v in &mut per_position {
            *v /= n;
        }
        let standard_error = if n_mc > 1 {
            let var = (sum_sq - sum * sum / n) / (n - 1.0);
            (var.max(0.0) / n).sqrt()
        } else {
            0.0
        };
        Ok(PolicyValue {
            total: mean,
            per_position,
            standard_error,
            n_samples: n_mc,
        })
    }

    /// Ground-truth value of the target policy, estimated by Monte Carlo
    /// over contexts. Independent of `alpha`: neither the target policy nor
    /// the reward model involves the observation mechanism.
    pub fn true_policy_value(&self, n_mc: usize, eval_seed: u64) -> Result<PolicyValue, EnvError> {
        self.policy_value_mc(|x| self.target_policy(x), n_mc, eval_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream_rng;
    use rand::Rng;

    /// World with two actions carrying two embeddings, one context
    /// dimension, and hand-picked weights.
    fn tiny_env(
        alpha: f64,
        ranking_len: usize,
        position_decay: f64,
        epsilon: f64,
        reward_weights: Vec<Vec<f64>>,
        obs_weights: Vec<Vec<f64>>,
    ) -> EnvModel {
        let config = EnvConfig {
            context_dim: 1,
            n_actions: 2,
            n_embeddings: 2,
            ranking_len,
            position_decay,
            beta: 1.0,
            epsilon,
            reward_noise: 0.5,
            env_seed: 7,
        };
        let map = EmbeddingMap::new(vec![0, 1], 2).unwrap();
        EnvModel::from_parts(config, alpha, map, reward_weights, vec![0.0, 0.0], obs_weights).unwrap()
    }

    fn x1(v: f64) -> Context {
        Context::new(vec![v]).unwrap()
    }

    /// Inverse logistic: the score whose logistic equals `p`.
    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn expected_reward_is_logistic_times_decay() {
        let env = tiny_env(
            1.0,
            2,
            0.9,
            0.2,
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0]; 4],
        );
        let x = x1(3.0);
        assert!((env.expected_reward(&x, 0, 0).unwrap() - 0.5).abs() < 1e-15);
        assert!((env.expected_reward(&x, 0, 1).unwrap() - 0.45).abs() < 1e-15);
        let saturated = env.expected_reward(&x1(30.0), 1, 0).unwrap();
        assert!(saturated > 1.0 - 1e-12 && saturated < 1.0);
    }

    #[test]
    fn expected_reward_rejects_bad_indices() {
        let env = tiny_env(1.0, 1, 1.0, 0.2, vec![vec![0.0]; 2], vec![vec![1.0]; 2]);
        let x = x1(0.0);
        assert!(matches!(
            env.expected_reward(&x, 2, 0),
            Err(EnvError::IndexOutOfRange { what: "embedding", .. })
        ));
        assert!(matches!(
            env.expected_reward(&x, 0, 1),
            Err(EnvError::IndexOutOfRange { what: "position", .. })
        ));
    }

    #[test]
    fn logging_policy_matches_softmax_arithmetic() {
        // Expected rewards ln 2 apart at position 0 with beta = 1 and no
        // decay give softmax probabilities [2/3, 1/3].
        let hi = 0.2 + std::f64::consts::LN_2;
        let env = tiny_env(
            1.0,
            1,
            1.0,
            0.2,
            vec![vec![logit(hi)], vec![logit(0.2)]],
            vec![vec![1.0]; 2],
        );
        let dist = env.logging_policy(&x1(1.0)).unwrap();
        let row = dist.row(0);
        assert!((row[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((row[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn logging_policy_with_zero_beta_is_uniform() {
        let mut config = EnvConfig::default();
        config.n_actions = 6;
        config.beta = 0.0;
        let env = EnvModel::new(config, 1.0).unwrap();
        let mut rng = stream_rng(1, 99, 0);
        let x = Context::new((0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let dist = env.logging_policy(&x).unwrap();
        for k in 0..5 {
            for &p in dist.row(k) {
                assert!((p - 1.0 / 6.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logging_policy_is_uniform_when_all_actions_share_an_embedding() {
        let config = EnvConfig {
            context_dim: 2,
            n_actions: 4,
            n_embeddings: 1,
            ranking_len: 2,
            ..EnvConfig::default()
        };
        let map = EmbeddingMap::new(vec![0; 4], 1).unwrap();
        let env = EnvModel::from_parts(
            config,
            1.0,
            map,
            vec![vec![0.3, -0.7]],
            vec![0.1],
            vec![vec![1.0, 0.0]; 4],
        )
        .unwrap();
        let dist = env.logging_policy(&Context::new(vec![0.5, 0.5]).unwrap()).unwrap();
        for k in 0..2 {
            for &p in dist.row(k) {
                assert!((p - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn target_policy_mixes_greedy_and_uniform() {
        // Embedding 0 scores higher at x=1, so action 0 is greedy.
        let weights = vec![vec![2.0], vec![-1.0]];
        let obs = vec![vec![1.0]; 2];

        let greedy = tiny_env(1.0, 1, 1.0, 0.0, weights.clone(), obs.clone());
        assert_eq!(greedy.target_policy(&x1(1.0)).unwrap().row(0), &[1.0, 0.0]);

        let uniform = tiny_env(1.0, 1, 1.0, 1.0, weights.clone(), obs.clone());
        assert_eq!(uniform.target_policy(&x1(1.0)).unwrap().row(0), &[0.5, 0.5]);

        let mixed = tiny_env(1.0, 1, 1.0, 0.5, weights, obs);
        assert_eq!(mixed.target_policy(&x1(1.0)).unwrap().row(0), &[0.75, 0.25]);
    }

    #[test]
    fn target_policy_breaks_ties_toward_lowest_action() {
        let config = EnvConfig {
            context_dim: 1,
            n_actions: 3,
            n_embeddings: 1,
            ranking_len: 1,
            epsilon: 0.0,
            ..EnvConfig::default()
        };
        let map = EmbeddingMap::new(vec![0; 3], 1).unwrap();
        let env = EnvModel::from_parts(config, 1.0, map, vec![vec![1.0]], vec![0.0], vec![vec![1.0]; 2])
            .unwrap();
        assert_eq!(env.target_policy(&x1(0.3)).unwrap().row(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn observation_distribution_alpha_zero_is_full_observation() {
        let env = tiny_env(0.0, 2, 0.9, 0.2, vec![vec![1.0]; 2], vec![vec![1.0]; 4]);
        let dist = env.observation_distribution(&x1(0.7)).unwrap();
        assert_eq!(dist.probs(), &[0.0, 0.0, 0.0, 1.0]);
        for k in 0..2 {
            assert!((dist.marginal_observation_prob(k) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn observation_distribution_alpha_weighting() {
        // K=1, equal |x·v_o|: alpha=1 gives [1/2, 1/2]; alpha=2 weights the
        // all-zero pattern by 2, giving [2/3, 1/3].
        let sym = tiny_env(1.0, 1, 1.0, 0.2, vec![vec![1.0]; 2], vec![vec![1.0], vec![1.0]]);
        let d = sym.observation_distribution(&x1(1.0)).unwrap();
        assert!((d.probs()[0] - 0.5).abs() < 1e-15);
        assert!((d.probs()[1] - 0.5).abs() < 1e-15);

        let biased = tiny_env(2.0, 1, 1.0, 0.2, vec![vec![1.0]; 2], vec![vec![1.0], vec![1.0]]);
        let d = biased.observation_distribution(&x1(1.0)).unwrap();
        assert!((d.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.probs()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn observation_distribution_rejects_degenerate_context() {
        let env = tiny_env(1.0, 1, 1.0, 0.2, vec![vec![1.0]; 2], vec![vec![1.0], vec![1.0]]);
        assert!(matches!(
            env.observation_distribution(&x1(0.0)),
            Err(EnvError::DegenerateObservation)
        ));
    }

    #[test]
    fn marginal_observation_prob_sums_patterns_with_bit_set() {
        let dist = ObservationDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((dist.marginal_observation_prob(0) - 0.7).abs() < 1e-15);
        assert!((dist.marginal_observation_prob(1) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn sample_dataset_is_deterministic_and_valid() {
        let config = EnvConfig {
            n_actions: 40,
            ..EnvConfig::default()
        };
        let env = EnvModel::new(config, 2.0).unwrap();
        let a = env.sample_dataset(50, 3).unwrap();
        let b = env.sample_dataset(50, 3).unwrap();
        assert_eq!(a, b);
        let c = env.sample_dataset(50, 4).unwrap();
        assert_ne!(a, c);
        let report = crate::model::validate_dataset(&a, env.embedding_map());
        assert!(report.is_ok(), "{report}");
    }

    #[test]
    fn sample_dataset_alpha_zero_observes_everything() {
        let config = EnvConfig {
            n_actions: 20,
            ..EnvConfig::default()
        };
        let env = EnvModel::new(config, 0.0).unwrap();
        let d = env.sample_dataset(30, 0).unwrap();
        for rec in &d.records {
            assert!(rec.observation.mask.iter().all(|&m| m));
            assert!(rec.rewards.iter().all(|r| r.is_some()));
        }
    }

    #[test]
    fn policy_value_of_constant_reward_world_is_exact() {
        // All embeddings score 0, so q_k = decay^k * 0.5 regardless of the
        // policy; with decay 1 and K=3 the value is exactly 1.5.
        let config = EnvConfig {
            context_dim: 1,
            n_actions: 2,
            n_embeddings: 2,
            ranking_len: 3,
            position_decay: 1.0,
            epsilon: 1.0,
            ..EnvConfig::default()
        };
        let map = EmbeddingMap::new(vec![0, 1], 2).unwrap();
        let env = EnvModel::from_parts(
            config,
            1.0,
            map,
            vec![vec![0.0], vec![0.0]],
            vec![0.0, 0.0],
            vec![vec![1.0]; 8],
        )
        .unwrap();
        let v = env.true_policy_value(500, 0).unwrap();
        assert!((v.total - 1.5).abs() < 1e-12);
        for k in 0..3 {
            assert!((v.per_position[k] - 0.5).abs() < 1e-12);
        }
        assert!(v.standard_error < 1e-12);
    }

    #[test]
    fn context_policy_value_uniform_marginal_arithmetic() {
        let env = tiny_env(
            1.0,
            1,
            1.0,
            0.2,
            vec![vec![logit(0.2)], vec![logit(0.8)]],
            vec![vec![1.0]; 2],
        );
        let policy = PolicyDistribution::new(vec![0.5, 0.5], 2).unwrap();
        let v = env.context_policy_value(&x1(1.0), &policy).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn true_policy_value_is_deterministic_in_eval_seed() {
        let env = EnvModel::new(EnvConfig { n_actions: 30, ..EnvConfig::default() }, 1.0).unwrap();
        let a = env.true_policy_value(2000, 11).unwrap();
        let b = env.true_policy_value(2000, 11).unwrap();
        assert_eq!(a, b);
        let c = env.true_policy_value(2000, 12).unwrap();
        assert_ne!(a.total, c.total);
    }

    #[test]
    fn env_construction_is_deterministic_and_alpha_independent() {
        let config = EnvConfig::default();
        let a = EnvModel::new(config.clone(), 0.0).unwrap();
        let b = EnvModel::new(config.clone(), 3.0).unwrap();
        assert_eq!(a.embedding_map, b.embedding_map);
        assert_eq!(a.reward_weights, b.reward_weights);
        assert_eq!(a.reward_bias, b.reward_bias);
        assert_eq!(a.obs_weights, b.obs_weights);
        let c = EnvModel::new(EnvConfig { env_seed: 54321, ..config }, 0.0).unwrap();
        assert_ne!(a.reward_weights, c.reward_weights);
    }

    #[test]
    fn mean_observation_marginal_is_non_increasing_in_alpha() {
        let config = EnvConfig { n_actions: 30, ..EnvConfig::default() };
        let alphas = [0.0, 1.0, 2.0, 3.0];
        let envs: Vec<EnvModel> = alphas
            .iter()
            .map(|&a| EnvModel::new(config.clone(), a).unwrap())
            .collect();
        let mut rng = stream_rng(17, 55, 0);
        let contexts: Vec<Context> = (0..1000)
            .map(|_| {
                Context::new((0..5).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
            })
            .collect();
        let mut means = Vec::new();
        for env in &envs {
            let mut total = 0.0;
            let mut count = 0usize;
            for x in &contexts {
                let dist = env.observation_distribution(x).unwrap();
                for k in 0..5 {
                    total += dist.marginal_observation_prob(k);
                    count += 1;
                }
            }
            means.push(total / count as f64);
        }
        assert!((means[0] - 1.0).abs() < 1e-12);
        for w in means.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "marginals {means:?} not non-increasing");
        }
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        let bad = |f: fn(&mut EnvConfig)| {
            let mut c = EnvConfig::default();
            f(&mut c);
            c.validate()
        };
        assert!(bad(|c| c.context_dim = 0).is_err());
        assert!(bad(|c| c.n_actions = 2).is_err());
        assert!(bad(|c| c.ranking_len = 0).is_err());
        assert!(matches!(
            bad(|c| c.ranking_len = 17),
            Err(EnvError::RankingTooLong { len: 17 })
        ));
        assert!(bad(|c| c.position_decay = 0.0).is_err());
        assert!(bad(|c| c.epsilon = 1.5).is_err());
        assert!(bad(|c| c.reward_noise = 0.0).is_err());
        assert!(EnvModel::new(EnvConfig::default(), -1.0).is_err());
    }
}
