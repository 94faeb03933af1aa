//! Denoising with diffusion models against closed-form Gaussian-mixture ground
//! truth.
//!
//! The crate provides:
//! - variance-preserving noise schedules and SNR/timestep matching ([`schedule`]),
//! - random Gaussian mixtures with exact conditional-mean estimation ([`gmm`]),
//! - the forward process, the exact stepwise oracle, deterministic denoising and
//!   the stochastic reverse process ([`diffusion`]),
//! - a small fully-connected noise-prediction network trained from scratch
//!   ([`model`]),
//! - closed-form Lipschitz constants and error-bound evaluators ([`analysis`]),
//! - the experiment drivers, config/CSV formats and metrics behind the `dmden`
//!   CLI ([`harness`]).

// Validation uses `!(x > 0.0)` rather than `x <= 0.0` so NaN inputs are
// rejected along with out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod diffusion;
pub mod error;
pub mod gmm;
pub mod harness;
pub mod model;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
