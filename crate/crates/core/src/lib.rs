//! Recommendation under contextual constraints.
//!
//! A user browsing with a filter — a price range, a brand, "open at 7pm" —
//! tells the system something about what they want right now. The usual
//! pipeline treats retrieval and filtering as independent steps, which breaks
//! down in the tail: filtering after scoring surfaces whatever unrelated
//! items happen to score high, and filtering before scoring starves the
//! model of the intent signal.
//!
//! This crate merges the two steps. The constraint is a binary vector over
//! feature values; an item satisfies it when they share at least one active
//! value. Instead of scoring a user-item pair and filtering afterwards, the
//! constraint parameterizes the similarity itself: a learned transform `T(c)`
//! sits between the user and item embeddings, so the score becomes
//! `U_u T(c) P_i^T + B_u`. The transform comes in three flavors — a scalar
//! weight per feature value (WC-MF), a diagonal per feature value (DC-MF),
//! and a small neural network over constraint features (NC-MF) — next to the
//! plain MF, CAMF-CI and two-tower baselines they are compared against.
//!
//! # Why conditioning on the constraint helps
//!
//! Three causal readings of an observed (user, item, constraint, feedback)
//! record are possible. The constraint may directly drive the feedback, in
//! which case a feature-complete direct model suffices. The constraint may
//! have no direct effect but be caused by the user's hidden intent, so that
//! observing it sharpens what we know about the user at that moment. Or
//! both. In practice the middle reading dominates: a chosen filter is
//! evidence of instantaneous intent, and feedback collected under a filter
//! has higher and less variable utility than feedback collected without one.
//! That is what makes the constraint worth modeling even when it never
//! directly causes a rating.
//!
//! # Folding
//!
//! When two sub-populations of users and items never co-occur — children
//! never rate horror movies — embedding models can accidentally place the
//! two islands close together, producing confident scores for pairs the data
//! says nothing about. The transform gives each context its own geometry,
//! which reduces that risk; the `eval` module measures it as the fraction of
//! seeds whose held-out AUC drops to chance.
//!
//! # Layout
//!
//! - [`constraint`]: constraint vectors, feature maps, interaction records,
//!   co-occurrence statistics.
//! - [`model`]: embeddings, transforms, neural heads and towers, scoring,
//!   JSON persistence.
//! - [`train`]: alternating exact block updates for the linear family, SGD
//!   for the neural family, warm starts, negative sampling, reweighting.
//! - [`data`]: Foursquare check-in and MovieLens 100K loaders, the folding
//!   split, the synthetic low-overlap generator, the JSON-lines formats.
//! - [`eval`]: AUC with exact tie handling, constraint-aware test negatives,
//!   slicing, per-seed summaries.
//! - [`experiment`]: multi-seed sweeps over model variants, metric and
//!   report files, model comparison tables.
//! - [`fixtures`]: deterministic toy worlds used by the test suites.

pub mod constraint;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fixtures;
pub mod linalg;
pub mod model;
pub mod train;

pub use error::{Error, Result};

/// Seeded RNG used across tests and fixtures.
#[doc(hidden)]
pub fn test_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// FNV-1a over bytes; used for manifest and report input hashes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
