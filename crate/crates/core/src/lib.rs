//! Noise-injection imitation learning.
//!
//! DART collects demonstrations from a supervisor whose controls are
//! perturbed by noise fitted, by maximum likelihood, to the errors the
//! learner currently makes, and then rescaled to an anticipated final error.
//! The crate provides the algorithm alongside Behavior Cloning, DAgger and an
//! isotropic-noise baseline, two small fully specified environments, and
//! exact (enumeration) and Monte-Carlo covariate-shift metrics.
//!
//! Module map:
//!
//! - [`domain`]: states, controls, trajectories, datasets, seeded streams, rollouts
//! - [`env`]: linear point mass and gridworld, their supervisors, noisy actions
//! - [`learner`]: ridge regression and tabular majority vote
//! - [`noise`]: Gaussian / epsilon-greedy MLE and shrinkage scaling
//! - [`algorithms`]: DART, Behavior Cloning, DAgger, Isotropic-Gaussian
//! - [`metrics`]: surrogate losses, shift reports, exact divergences and bound checks
//! - [`harness`]: experiment configs, multi-seed runner, CSV output, oracle suite

pub mod algorithms;
pub mod domain;
pub mod env;
pub mod error;
pub mod harness;
pub mod learner;
mod linalg;
pub mod metrics;
pub mod noise;

pub use error::{Error, Result};
