//! Correlation-based analysis and training of classifier ensembles.
//!
//! The crate covers three layers:
//!
//! * theory: Pearson correlation matrices of truth and learners
//!   ([`corr_metrics`]), the feasible region of averaged truth-learner and
//!   learner-learner correlations ([`theory_bounds`]), and the
//!   accuracy/majority-vote formulas for homogeneous ensembles
//!   ([`vote_theory`]);
//! * training: a small matrix autodiff engine with MLPs ([`neural`]) and the
//!   correlation-loss ensemble trainer ([`diverse_train`]);
//! * baselines and data: CART forests ([`tree_ensemble`]), DECORATE
//!   ([`decorate_baseline`]) and CSV/cross-validation utilities
//!   ([`datasets`]).

pub mod corr_metrics;
pub mod datasets;
pub mod decorate_baseline;
pub mod diverse_train;
pub mod error;
pub mod neural;
pub mod theory_bounds;
pub mod tree_ensemble;
pub mod verify;
pub mod vote_theory;

pub use error::{Error, Result};

/// Mixes a base seed with a job index (SplitMix64 finalizer) so parallel
/// jobs get independent, reproducible streams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
