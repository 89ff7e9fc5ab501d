//! Asymptotic training loss of generalized linear classifiers on random
//! labels, for Gaussian covariate and Gaussian mixture data, with
//! finite-size empirical-risk-minimization simulations to validate the
//! predictions.
//!
//! The crate is organized around the two halves of the self-consistent
//! equations and the machinery that drives them:
//!
//! - [`spectra`]: data models and the matrix-trace prior channel;
//! - [`prox`]: losses, proximal operators, and the channel function;
//! - [`quadrature`]: Gauss-Hermite expectations over the Gaussian field;
//! - [`replica`]: the damped fixed-point solver and closed-form cross-checks;
//! - [`erm`]: dataset sampling, feature maps, and the three fitters;
//! - [`io`]: the shared matrix file formats;
//! - [`harness`]: experiment configs, sweeps, CSV/SVG emission, comparison.

// Validation guards are written as negated comparisons so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod erm;
pub mod harness;
pub mod io;
pub mod prox;
pub mod quadrature;
pub mod replica;
pub mod spectra;
