//! Smooth, monotone Bayesian additive regression trees.
//!
//! Each tree leaf carries a Gaussian-process function over a fixed mesh of
//! target values, so the ensemble estimates a whole curve `t -> f(t, x)` for
//! each covariate vector. Responses recorded on a coarse grid are imputed
//! from truncated normals inside their rounding bins, and posterior curves
//! can be projected onto non-decreasing functions.

pub mod data;
pub mod error;
pub mod gp;
pub mod monotone;
pub mod sampler;
pub mod sim;
pub mod summaries;
pub mod tree;

pub use error::{ErrorCategory, PsbartError, Result};
