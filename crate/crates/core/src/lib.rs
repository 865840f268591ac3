//! Sketched clustering.
//!
//! A dataset is compressed into a fixed-size complex sketch, i.e. samples of
//! its empirical characteristic function at random frequencies. Cluster
//! centroids are then recovered from the sketch alone with a simplified hybrid
//! generalized AMP iteration (CL-AMP) whose hyperparameters are learned by EM.
//! k-means++ and the usual evaluation machinery (SSE, Hungarian matching,
//! Bayes error) are included for benchmarking.
//!
//! Layout conventions used throughout the crate:
//! - [`DataMatrix`] stores samples contiguously (`N x T`, column-major).
//! - [`Centroids`] stores centers contiguously (`N x K`, column-major).
//! - Frequency directions are stored row-major (`M x N`).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod denoisers;
pub mod em;
pub mod engine;
pub mod error;
pub mod eval;
pub mod io;
pub mod sketch;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{Centroids, DataMatrix, GmmHyperparams};
