//! Hybrid RF/baseband processing for point-to-point massive MIMO.
//!
//! An unconstrained optimal precoder (or combiner) is factored into a
//! constant-modulus RF matrix, realizable with analog phase shifters, and a
//! small unconstrained baseband matrix. The factorization alternates between
//! an exact least-squares baseband fit and a locally linearized phase update
//! whose increments are kept inside a box, so every RF sub-problem is a
//! small convex quadratic program.
//!
//! Module map:
//!
//! - [`numerics`]: complex SVD, least squares, log-determinants and the
//!   box-constrained least-squares solver.
//! - [`channel`]: i.i.d. Rayleigh and clustered mmWave channel generators.
//! - [`reference`]: SVD-optimal processors, rate upper bound, waterfilling,
//!   MMSE combiner.
//! - [`decomposer`]: the alternating constant-modulus decomposition.
//! - [`evaluator`]: spectral efficiency and the end-to-end link design.
//! - [`harness`]: experiment configuration, Monte-Carlo sweeps, CSV output.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod decomposer;
pub mod error;
pub mod evaluator;
pub mod harness;
pub mod numerics;
pub mod reference;

pub use error::{Error, Result};
pub use numerics::ComplexMatrix;
