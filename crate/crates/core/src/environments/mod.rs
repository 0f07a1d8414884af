//! Transition generators with known ground truth.

pub mod gridworld;
pub mod ou;
pub mod potentials;
pub mod queue;

pub use gridworld::{gridworld_ground_truth, gridworld_make_dataset, GridworldMdp, GridworldSpec, GroundTruth};
pub use ou::{ou_advance, ou_em_step, ou_pairs, ou_stationary_sampler, OuParams};
pub use potentials::{hmc_reference_sample, hmc_transition, potentials_make_dataset, PotentialKind, PotentialSpec};
pub use queue::{queue_kernel, queue_make_dataset, queue_stationary, queue_transition, QueueParams};
