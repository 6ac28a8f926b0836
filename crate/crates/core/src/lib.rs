//! Partially-penalized Lasso estimation and inference, with a Monte Carlo
//! lab for verifying the estimator's finite-sample guarantees.
//!
//! A designated group of columns is kept unpenalized while the rest receive
//! an l1 penalty. The grouped coefficients then admit exact Gaussian
//! confidence sets under the usual noise model, and the penalized block can
//! be de-biased for honest inference on its coordinates as well.
//!
//! Module map:
//! - [`linalg`]: Householder QR and Cholesky kernels used everywhere else.
//! - [`design`]: column normalization, the group split, projections.
//! - [`lasso`]: coordinate-descent solver and KKT certificates.
//! - [`inference`]: the two-stage fit and exact confidence regions.
//! - [`debias`]: de-biased estimators, nodewise precision surrogate,
//!   remainder diagnostics.
//! - [`theory`]: compatibility constants, oracle-inequality checks, the
//!   noise-control event.
//! - [`sim`]: design generators, ground-truth models, replicated runs.
//! - [`config`], [`report`], [`cli`]: experiment configuration, output
//!   writers, command-line entry.

// Validation guards are written as `!(x > 0.0)` rather than `x <= 0.0` so
// that NaN inputs fail the check and are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod debias;
pub mod design;
pub mod error;
pub mod inference;
pub mod lasso;
pub mod linalg;
pub mod report;
pub mod sim;
pub mod theory;

pub mod cli;

pub use design::{normalize_columns, PartitionedCovariance, PartitionedDesign};
pub use error::{Error, Result};
pub use inference::{fit_partial, ConfidenceRegion, PartialFit};
pub use lasso::{kkt_certificate, lambda_rule, solve, LassoFit, LassoProblem};
