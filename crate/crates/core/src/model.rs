//! Shared domain types for logged ranking data and factorized policies.
//!
//! A ranking interaction shows `K` items (actions) to a user described by a
//! real-valued context. Each action carries a deterministic embedding (for
//! example a category), and rewards arrive per position but only where the
//! observation mask is set. Policies are represented per position as a
//! probability vector over actions; estimators consume only their marginals
//! over embeddings.

use thiserror::Error;

/// Tolerance for probability vectors summing to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("probability row has {row_len} entries but the embedding map covers {map_len} actions")]
    RowMapLengthMismatch { row_len: usize, map_len: usize },

    #[error("probability row sums to {sum}, expected 1 within {ROW_SUM_TOLERANCE}")]
    RowNotNormalized { sum: f64 },

    #[error("probability entry {index} is negative ({value})")]
    NegativeProbability { index: usize, value: f64 },

    #[error("context contains a non-finite entry at index {index}")]
    NonFiniteContext { index: usize },

    #[error("embedding index {index} out of range for {n_embeddings} embeddings")]
    EmbeddingOutOfRange { index: usize, n_embeddings: usize },

    #[error("embedding {index} has no actions assigned to it")]
    EmptyEmbedding { index: usize },

    #[error("action index {action} out of range for {n_actions} actions")]
    ActionOutOfRange { action: usize, n_actions: usize },

    #[error("probability matrix of length {len} does not divide into rows of {n_actions} actions")]
    RaggedMatrix { len: usize, n_actions: usize },
}

/// A real-valued user context vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    values: Vec<f64>,
}

impl Context {
    /// Builds a context, rejecting non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteContext { index });
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Inner product with a weight vector of the same length.
    pub fn dot(&self, weights: &[f64]) -> f64 {
        debug_assert_eq!(weights.len(), self.values.len());
        self.values
            .iter()
            .zip(weights.iter())
            .map(|(x, w)| x * w)
            .sum()
    }
}

/// Deterministic assignment of each action to one embedding (category).
///
/// Every embedding index must be carried by at least one action, so policy
/// marginals over embeddings never have structurally empty support.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap {
    assignment: Vec<usize>,
    n_embeddings: usize,
}

impl EmbeddingMap {
    pub fn new(assignment: Vec<usize>, n_embeddings: usize) -> Result<Self, ModelError> {
        let mut seen = vec![false; n_embeddings];
        for &e in &assignment {
            if e >= n_embeddings {
                return Err(ModelError::EmbeddingOutOfRange {
                    index: e,
                    n_embeddings,
                });
            }
            seen[e] = true;
        }
        if let Some(index) = seen.iter().position(|s| !s) {
            return Err(ModelError::EmptyEmbedding { index });
        }
        Ok(Self {
            assignment,
            n_embeddings,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_embeddings(&self) -> usize {
        self.n_embeddings
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// The embedding carried by `action`.
    pub fn embedding_of(&self, action: usize) -> usize {
        self.assignment[action]
    }
}

/// A ranking of `K` actions together with their derived embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingAction {
    pub actions: Vec<usize>,
    pub embeddings: Vec<usize>,
}

impl RankingAction {
    /// Builds a ranking, deriving embeddings through the map.
    pub fn from_actions(actions: Vec<usize>, map: &EmbeddingMap) -> Result<Self, ModelError> {
        let mut embeddings = Vec::with_capacity(actions.len());
        for &a in &actions {
            if a >= map.n_actions() {
                return Err(ModelError::ActionOutOfRange {
                    action: a,
                    n_actions: map.n_actions(),
                });
            }
            embeddings.push(map.embedding_of(a));
        }
        Ok(Self {
            actions,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Per-position reward observation mask.
///
/// Patterns are also addressed as integers: position 0 maps to the most
/// significant of the `len` low bits, so for `K = 2` the patterns
/// `00, 01, 10, 11` are indices `0..4`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector {
    pub mask: Vec<bool>,
}

impl ObservationVector {
    pub fn from_pattern(pattern: usize, len: usize) -> Self {
        let mask = (0..len).map(|k| (pattern >> (len - 1 - k)) & 1 == 1).collect();
        Self { mask }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// One logged interaction: context, ranking, observation mask and the
/// rewards that were actually observed.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRecord {
    pub context: Context,
    pub ranking: RankingAction,
    pub observation: ObservationVector,
    /// `rewards[k]` is `Some` exactly where `observation.mask[k]` is true.
    pub rewards: Vec<Option<f64>>,
}

/// A set of i.i.d. logged interactions plus a fingerprint of the
/// environment and seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    pub records: Vec<LoggedRecord>,
    pub fingerprint: String,
}

impl LoggedDataset {
    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Per-position probability vectors over actions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDistribution {
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyDistribution {
    /// Validates that every row is a probability vector.
    pub fn new(probs: Vec<f64>, n_actions: usize) -> Result<Self, ModelError> {
        if n_actions == 0 || probs.len() % n_actions != 0 {
            return Err(ModelError::RaggedMatrix {
                len: probs.len(),
                n_actions,
            });
        }
        for (i, &p) in probs.iter().enumerate() {
            if !(p >= 0.0) {
                return Err(ModelError::NegativeProbability { index: i, value: p });
            }
        }
        for row in probs.chunks(n_actions) {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(ModelError::RowNotNormalized { sum });
            }
        }
        Ok(Self { n_actions, probs })
    }

    /// Skips validation; for construction sites that normalize explicitly.
    pub(crate) fn from_rows_unchecked(probs: Vec<f64>, n_actions: usize) -> Self {
        debug_assert_eq!(probs.len() % n_actions, 0);
        Self { n_actions, probs }
    }

    pub fn n_positions(&self) -> usize {
        self.probs.len() / self.n_actions
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// The probability vector over actions at position `k`.
    pub fn row(&self, k: usize) -> &[f64] {
        &self.probs[k * self.n_actions..(k + 1) * self.n_actions]
    }
}

/// Collapses a probability vector over actions onto embeddings:
/// `out[e] = Σ_a row[a]·1{map[a] = e}`.
pub fn marginal_embedding_probs(row: &[f64], map: &EmbeddingMap) -> Result<Vec<f64>, ModelError> {
    if row.len() != map.n_actions() {
        return Err(ModelError::RowMapLengthMismatch {
            row_len: row.len(),
            map_len: map.n_actions(),
        });
    }
    let mut out = vec![0.0; map.n_embeddings()];
    for (a, &p) in row.iter().enumerate() {
        out[map.embedding_of(a)] += p;
    }
    Ok(out)
}

/// A rule violated by one record of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    /// Reward present where the observation mask is false.
    RewardWithoutObservation { position: usize },
    /// Observation mask true but reward missing.
    MissingObservedReward { position: usize },
    /// Stored embedding disagrees with the map for the logged action.
    EmbeddingMismatch { position: usize },
    ActionOutOfRange { position: usize, action: usize },
    ContextDimMismatch { expected: usize, got: usize },
    RankingLenMismatch { expected: usize, got: usize },
    ObservationLenMismatch { expected: usize, got: usize },
    RewardsLenMismatch { expected: usize, got: usize },
    NonFiniteReward { position: usize },
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::RewardWithoutObservation { position } => {
                write!(f, "reward present at unobserved position {position}")
            }
            Self::MissingObservedReward { position } => {
                write!(f, "reward missing at observed position {position}")
            }
            Self::EmbeddingMismatch { position } => {
                write!(f, "embedding at position {position} disagrees with the map")
            }
            Self::ActionOutOfRange { position, action } => {
                write!(f, "action {action} at position {position} out of range")
            }
            Self::ContextDimMismatch { expected, got } => {
                write!(f, "context has {got} dimensions, expected {expected}")
            }
            Self::RankingLenMismatch { expected, got } => {
                write!(f, "ranking has {got} positions, expected {expected}")
            }
            Self::ObservationLenMismatch { expected, got } => {
                write!(f, "observation mask has {got} positions, expected {expected}")
            }
            Self::RewardsLenMismatch { expected, got } => {
                write!(f, "rewards vector has {got} positions, expected {expected}")
            }
            Self::NonFiniteReward { position } => {
                write!(f, "non-finite reward at position {position}")
            }
        }
    }
}

/// A violation located at a record index.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub record: usize,
    pub issue: ValidationIssue,
}

/// Outcome of [`validate_dataset`]: empty means the dataset is well formed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "record {}: {}", v.record, v.issue)?;
        }
        Ok(())
    }
}

/// Checks every record invariant against the first record's dimensions and
/// the embedding map. Failures are collected, not raised.
pub fn validate_dataset(dataset: &LoggedDataset, map: &EmbeddingMap) -> ValidationReport {
    let mut report = ValidationReport::default();
    let Some(first) = dataset.records.first() else {
        return report;
    };
    let d_x = first.context.dim();
    let ranking_len = first.ranking.len();

    for (i, rec) in dataset.records.iter().enumerate() {
        let mut push = |issue: ValidationIssue| report.violations.push(Violation { record: i, issue });

        if rec.context.dim() != d_x {
            push(ValidationIssue::ContextDimMismatch {
                expected: d_x,
                got: rec.context.dim(),
            });
        }
        if rec.ranking.len() != ranking_len {
            push(ValidationIssue::RankingLenMismatch {
                expected: ranking_len,
                got: rec.ranking.len(),
            });
        }
        if rec.observation.len() != rec.ranking.len() {
            push(ValidationIssue::ObservationLenMismatch {
                expected: rec.ranking.len(),
                got: rec.observation.len(),
            });
            continue;
        }
        if rec.rewards.len() != rec.ranking.len() {
            push(ValidationIssue::RewardsLenMismatch {
                expected: rec.ranking.len(),
                got: rec.rewards.len(),
            });
            continue;
        }
        for k in 0..rec.ranking.len() {
            let action = rec.ranking.actions[k];
            if action >= map.n_actions() {
                push(ValidationIssue::ActionOutOfRange {
                    position: k,
                    action,
                });
            } else if rec.ranking.embeddings[k] != map.embedding_of(action) {
                push(ValidationIssue::EmbeddingMismatch { position: k });
            }
            match (rec.observation.mask[k], rec.rewards[k]) {
                (true, None) => push(ValidationIssue::MissingObservedReward { position: k }),
                (false, Some(_)) => push(ValidationIssue::RewardWithoutObservation { position: k }),
                (true, Some(r)) if !r.is_finite() => {
                    push(ValidationIssue::NonFiniteReward { position: k })
                }
                _ => {}
            }
        }
    }
    report
}
