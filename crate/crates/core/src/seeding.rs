//! Seed derivation and shared sampling helpers.
//!
//! Every source of randomness in the crate is a [`ChaCha12Rng`] seeded from a
//! `(root, stream, index)` triple. Streams separate concerns (environment
//! construction, dataset sampling, ground-truth evaluation, model training)
//! and the index separates replications, so adding seeds to an experiment
//! never perturbs the draws of existing ones.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub(crate) const STREAM_ENV: u64 = 0xE1;
pub(crate) const STREAM_DATA: u64 = 0xD2;
pub(crate) const STREAM_EVAL: u64 = 0xE3;
pub(crate) const STREAM_EVAL_CHUNK: u64 = 0xE4;
pub(crate) const STREAM_TRAIN: u64 = 0xF5;
pub(crate) const STREAM_TINY_DATA: u64 = 0xA6;
pub(crate) const STREAM_TINY_GEN: u64 = 0xA7;
pub(crate) const STREAM_RESAMPLE: u64 = 0xB8;

/// SplitMix64 finalizer; decorrelates nearby integer seeds.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a `(root, stream, index)` triple into a single 64-bit seed.
pub(crate) fn mix(root: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(root) ^ stream) ^ index)
}

/// A reproducible RNG for the given `(root, stream, index)` triple.
pub(crate) fn stream_rng(root: u64, stream: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix(root, stream, index))
}

/// Draws an index from a finite distribution by inverse CDF.
///
/// `probs` must be non-negative and sum to ~1; the last index absorbs any
/// rounding slack at the tail.
pub(crate) fn sample_categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    debug_assert!(!probs.is_empty());
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}
