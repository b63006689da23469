//! Differentially private feature mixup.
//!
//! The crate covers the whole release pipeline: Gaussian-DP accounting for
//! Poisson-subsampled mixup (trade-off curves, exact numerical composition,
//! the CLT approximation and closed-form noise calibration, plus a Poisson-RDP
//! accountant for comparison), the mixup release engine itself, a
//! linear-regression laboratory that locates the optimal mixup degree, and a
//! linear classifier trained on noisy releases with membership-leakage metrics.

// `!(x > 0.0)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod data;
pub mod error;
pub mod learner;
pub mod normal;
pub mod par;
pub mod regression;
pub mod release;
pub mod rng;
pub mod tradeoff;

pub use error::{Error, Result};

/// Library version recorded in every manifest.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
