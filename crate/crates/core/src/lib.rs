//! Stationary distribution estimation from a fixed batch of Markov chain
//! transitions.
//!
//! Given pairs `(x, x')` where `x` was drawn from an unknown probe
//! distribution `p` and `x'` from the transition kernel, the variational
//! power method learns a nonnegative ratio `tau(x) ~ mu(x) / p(x)` so that the
//! reweighted sample approximates the stationary distribution `mu`.
//!
//! Crate layout:
//!
//! - [`data`]: transition datasets, minibatches, CSV persistence.
//! - [`tabular`]: exact dense solvers for finite chains; the oracle layer.
//! - [`models`]: differentiable ratio parametrizations with analytic gradients.
//! - [`vpm`]: the saddle-point objective, the two-timescale inner loop and the
//!   outer power iterations, plus the discounted variant and the
//!   self-normalized expectation estimator.
//! - [`environments`]: ground-truth-bearing generators (queue, OU process,
//!   2D potentials with HMC, gridworld MDP).
//! - [`metrics`]: KL divergence, weighted Gaussian-kernel MMD, log-MSE.

pub mod data;
pub mod environments;
mod error;
pub mod metrics;
pub mod models;
pub mod tabular;
pub mod vpm;

pub use error::{Error, Result};

/// Deterministic random source used throughout the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the crate's standard seeded random source.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a stream tag.
///
/// SplitMix64 finalizer over the pair; distinct tags give decorrelated seeds.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
