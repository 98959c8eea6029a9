//! Exactly enumerable instances: discrete context sets over small action
//! and position spaces, where estimator expectations can be computed by
//! brute force instead of sampling.
//!
//! These instances are the verification vehicle for the two analytic
//! results the estimators rest on: the closed-form bias of the plain
//! marginalized estimator under missing rewards, and the exact
//! unbiasedness of the propensity-corrected variant. The oracle here
//! enumerates every (context, action tuple, observation mask) outcome of a
//! size-1 dataset; unbiasedness for larger datasets follows because the
//! estimators are means of i.i.d. per-record terms.

use rand::Rng;
use rand_distr::{Normal, StandardNormal};

use crate::env::{EnvConfig, EnvError, EnvModel};
use crate::harness::HarnessError;
use crate::model::{
    marginal_embedding_probs, Context, EmbeddingMap, LoggedDataset, LoggedRecord,
    ObservationVector, PolicyDistribution, RankingAction, ROW_SUM_TOLERANCE,
};
use crate::seeding::{sample_categorical, stream_rng, STREAM_TINY_DATA, STREAM_TINY_GEN};

/// Maximum number of (context, action tuple, mask) terms an instance may
/// require for full enumeration.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

/// Which estimator's exact expectation to enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleEstimator {
    Mips,
    MipsTrueRoips,
}

/// An exact (non-sampled) value with its position decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactValue {
    pub total: f64,
    pub per_position: Vec<f64>,
}

impl ExactValue {
    fn from_positions(per_position: Vec<f64>) -> Self {
        Self {
            total: per_position.iter().sum(),
            per_position,
        }
    }
}

/// A world restricted to finitely many contexts with known probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyInstance {
    env: EnvModel,
    contexts: Vec<Context>,
    context_probs: Vec<f64>,
    /// When set, sampled rewards equal their means exactly.
    pub deterministic_rewards: bool,
}

impl TinyInstance {
    pub fn new(
        env: EnvModel,
        contexts: Vec<Context>,
        context_probs: Vec<f64>,
        deterministic_rewards: bool,
    ) -> Result<Self, HarnessError> {
        if contexts.is_empty() || contexts.len() != context_probs.len() {
            return Err(HarnessError::InvalidConfig(
                "need equally many contexts and probabilities, at least one".into(),
            ));
        }
        if context_probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(HarnessError::InvalidConfig(
                "context probabilities must be non-negative".into(),
            ));
        }
        let sum: f64 = context_probs.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(HarnessError::InvalidConfig(format!(
                "context probabilities sum to {sum}, expected 1"
            )));
        }
        for x in &contexts {
            if x.dim() != env.config().context_dim {
                return Err(HarnessError::InvalidConfig(
                    "context dimension disagrees with the environment".into(),
                ));
            }
            // Surface degenerate observation models at construction.
            env.observation_distribution(x)?;
        }
        let instance = Self {
            env,
            contexts,
            context_probs,
            deterministic_rewards,
        };
        let terms = instance.enumeration_terms();
        if terms > ENUMERATION_BUDGET {
            return Err(HarnessError::InstanceTooLarge {
                terms,
                budget: ENUMERATION_BUDGET,
            });
        }
        Ok(instance)
    }

    pub fn env(&self) -> &EnvModel {
        &self.env
    }

    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    pub fn context_probs(&self) -> &[f64] {
        &self.context_probs
    }

    /// `|X| * |A|^K * 2^K`: the size of the full outcome space of one
    /// logged record.
    pub fn enumeration_terms(&self) -> u128 {
        let cfg = self.env.config();
        let a = cfg.n_actions as u128;
        let k = cfg.ranking_len as u32;
        self.contexts.len() as u128 * a.pow(k) * (1u128 << k)
    }

    /// Exact value of `policy` under the discrete context distribution.
    pub fn true_value<F>(&self, policy: F) -> Result<ExactValue, HarnessError>
    where
        F: Fn(&Context) -> Result<PolicyDistribution, EnvError>,
    {
        let k_len = self.env.config().ranking_len;
        let mut per_position = vec![0.0; k_len];
        for (x, &px) in self.contexts.iter().zip(self.context_probs.iter()) {
            let dist = policy(x)?;
            let values = self.env.context_policy_value(x, &dist)?;
            for (slot, v) in per_position.iter_mut().zip(values.iter()) {
                *slot += px * v;
            }
        }
        Ok(ExactValue::from_positions(per_position))
    }

    /// Exact expectation of an estimator on datasets of size one, by
    /// summing over every (context, action tuple, observation mask)
    /// combination weighted by
    /// `p(x) * prod_k logging(a_k|x) * theta(o|x)`, with the expected
    /// reward standing in for the sampled one.
    pub fn oracle_expected_value<T, L>(
        &self,
        estimator: OracleEstimator,
        target: T,
        logging: L,
    ) -> Result<ExactValue, HarnessError>
    where
        T: Fn(&Context) -> Result<PolicyDistribution, EnvError>,
        L: Fn(&Context) -> Result<PolicyDistribution, EnvError>,
    {
        let cfg = self.env.config();
        let k_len = cfg.ranking_len;
        let n_actions = cfg.n_actions;
        let map = self.env.embedding_map();
        let mut per_position = vec![0.0; k_len];

        for (x, &px) in self.contexts.iter().zip(self.context_probs.iter()) {
            let target_dist = target(x)?;
            let logging_dist = logging(x)?;
            let obs = self.env.observation_distribution(x)?;

            // Per-position embedding data, precomputed once per context.
            let mut weights = Vec::with_capacity(k_len);
            let mut rewards = Vec::with_capacity(k_len);
            let mut theta = Vec::with_capacity(k_len);
            for k in 0..k_len {
                let tm = marginal_embedding_probs(target_dist.row(k), map)?;
                let lm = marginal_embedding_probs(logging_dist.row(k), map)?;
                let mut ratio = vec![0.0; cfg.n_embeddings];
                for e in 0..cfg.n_embeddings {
                    if lm[e] == 0.0 {
                        if tm[e] > 0.0 {
                            return Err(crate::estimators::EstimatorError::CommonSupportViolation {
                                embedding: e,
                                position: k,
                            }
                            .into());
                        }
                    } else {
                        ratio[e] = tm[e] / lm[e];
                    }
                }
                weights.push(ratio);
                rewards.push(
                    (0..cfg.n_embeddings)
                        .map(|e| self.env.expected_reward(x, e, k))
                        .collect::<Result<Vec<f64>, EnvError>>()?,
                );
                theta.push(obs.marginal_observation_prob(k));
            }

            let tuples = n_actions.pow(k_len as u32);
            let mut actions = vec![0usize; k_len];
            for tuple in 0..tuples {
                let mut rest = tuple;
                let mut logging_prob = 1.0;
                for k in 0..k_len {
                    actions[k] = rest % n_actions;
                    rest /= n_actions;
                    logging_prob *= logging_dist.row(k)[actions[k]];
                }
                for (o, &mask_prob) in obs.probs().iter().enumerate() {
                    if mask_prob == 0.0 && logging_prob == 0.0 {
                        continue;
                    }
                    let base = px * logging_prob * mask_prob;
                    for k in 0..k_len {
                        if (o >> (k_len - 1 - k)) & 1 == 0 {
                            continue;
                        }
                        let e = map.embedding_of(actions[k]);
                        let mut term = base * weights[k][e] * rewards[k][e];
                        if estimator == OracleEstimator::MipsTrueRoips {
                            let t = theta[k];
                            if !(t > 0.0) {
                                return Err(crate::estimators::EstimatorError::InvalidPropensity {
                                    record: 0,
                                    position: k,
                                    value: t,
                                }
                                .into());
                            }
                            term /= t;
                        }
                        per_position[k] += term;
                    }
                }
            }
        }
        Ok(ExactValue::from_positions(per_position))
    }

    /// Closed-form bias of the uncorrected estimator, defined as true
    /// value minus expectation:
    /// `bias_k = sum_x p(x) sum_e target_marginal_k(e|x) q_k(x,e) (1 - theta_k(x))`.
    pub fn closed_form_bias<T>(&self, target: T) -> Result<ExactValue, HarnessError>
    where
        T: Fn(&Context) -> Result<PolicyDistribution, EnvError>,
    {
        let cfg = self.env.config();
        let map = self.env.embedding_map();
        let mut per_position = vec![0.0; cfg.ranking_len];
        for (x, &px) in self.contexts.iter().zip(self.context_probs.iter()) {
            let target_dist = target(x)?;
            let obs = self.env.observation_distribution(x)?;
            for k in 0..cfg.ranking_len {
                let tm = marginal_embedding_probs(target_dist.row(k), map)?;
                let missing = 1.0 - obs.marginal_observation_prob(k);
                for (e, &m) in tm.iter().enumerate() {
                    per_position[k] += px * m * self.env.expected_reward(x, e, k)? * missing;
                }
            }
        }
        Ok(ExactValue::from_positions(per_position))
    }

    /// Draws a logged dataset whose contexts come from the discrete set.
    /// Per record: context index, one action per position, the mask, then
    /// rewards for observed positions.
    pub fn sample_dataset(&self, n: usize, data_seed: u64) -> Result<LoggedDataset, HarnessError> {
        if n == 0 {
            return Err(EnvError::EmptySample.into());
        }
        let cfg = self.env.config();
        let mut rng = stream_rng(cfg.env_seed, STREAM_TINY_DATA, data_seed);
        let noise = Normal::new(0.0, cfg.reward_noise).expect("validated reward_noise");
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let x = &self.contexts[sample_categorical(&mut rng, &self.context_probs)];
            let logging = self.env.logging_policy(x)?;
            let actions: Vec<usize> = (0..cfg.ranking_len)
                .map(|k| sample_categorical(&mut rng, logging.row(k)))
                .collect();
            let ranking = RankingAction::from_actions(actions, self.env.embedding_map())?;
            let obs = self.env.observation_distribution(x)?;
            let pattern = sample_categorical(&mut rng, obs.probs());
            let observation = ObservationVector::from_pattern(pattern, cfg.ranking_len);
            let mut rewards = Vec::with_capacity(cfg.ranking_len);
            for k in 0..cfg.ranking_len {
                if observation.mask[k] {
                    let q = self.env.expected_reward(x, ranking.embeddings[k], k)?;
                    let r = if self.deterministic_rewards {
                        q
                    } else {
                        q + rng.sample::<f64, _>(noise)
                    };
                    rewards.push(Some(r));
                } else {
                    rewards.push(None);
                }
            }
            records.push(LoggedRecord {
                context: x.clone(),
                ranking,
                observation,
                rewards,
            });
        }
        Ok(LoggedDataset {
            records,
            fingerprint: format!(
                "tiny env_seed={} alpha={} n={} data_seed={}",
                cfg.env_seed,
                self.env.alpha(),
                n,
                data_seed
            ),
        })
    }
}

/// Draws a random enumerable instance: 1-3 discrete contexts, up to 4
/// actions over up to 2 embeddings, rankings of length 1 or 2, and one of
/// five missingness severities unless `forced_alpha` pins it.
pub fn random_tiny_instance_with(
    seed: u64,
    forced_alpha: Option<f64>,
) -> Result<TinyInstance, HarnessError> {
    let mut rng = stream_rng(seed, STREAM_TINY_GEN, 0);
    for _ in 0..100 {
        let context_dim = rng.random_range(1..=3);
        let n_embeddings = rng.random_range(1..=2);
        let n_actions = rng.random_range(n_embeddings..=4);
        let ranking_len = rng.random_range(1..=2);
        let alpha = forced_alpha
            .unwrap_or_else(|| [0.0, 0.5, 1.0, 2.0, 3.0][rng.random_range(0..5)]);
        let config = EnvConfig {
            context_dim,
            n_actions,
            n_embeddings,
            ranking_len,
            position_decay: rng.random_range(0.5..=1.0),
            beta: rng.random_range(0.5..2.0),
            epsilon: rng.random_range(0.0..0.8),
            reward_noise: rng.random_range(0.2..1.0),
            env_seed: seed,
        };

        let mut assignment: Vec<usize> =
            (0..n_actions).map(|_| rng.random_range(0..n_embeddings)).collect();
        for e in 0..n_embeddings {
            assignment[e] = e;
        }
        let map = EmbeddingMap::new(assignment, n_embeddings)
            .expect("coverage forced by construction");

        let mut draw_vec = |len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let reward_weights = (0..n_embeddings).map(|_| draw_vec(context_dim)).collect();
        let reward_bias = draw_vec(n_embeddings);
        let obs_weights = (0..1usize << ranking_len)
            .map(|_| draw_vec(context_dim))
            .collect();
        let env = EnvModel::from_parts(config, alpha, map, reward_weights, reward_bias, obs_weights)?;

        let n_contexts = rng.random_range(1..=3);
        let contexts: Vec<Context> = (0..n_contexts)
            .map(|_| {
                Context::new((0..context_dim).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .expect("finite draws")
            })
            .collect();
        let mut probs: Vec<f64> = (0..n_contexts).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }

        match TinyInstance::new(env, contexts, probs, false) {
            Ok(instance) => return Ok(instance),
            // A context can make the observation model degenerate with
            // probability zero in exact arithmetic; redraw on the off
            // chance floating point produced one.
            Err(HarnessError::Env(EnvError::DegenerateObservation)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(HarnessError::InvalidConfig(
        "failed to draw a non-degenerate tiny instance".into(),
    ))
}

pub fn random_tiny_instance(seed: u64) -> Result<TinyInstance, HarnessError> {
    random_tiny_instance_with(seed, None)
}
