//! Gaussian process regression whose inputs are probability distributions.
//!
//! Training and test inputs are distributions (multivariate Gaussians or
//! weighted Dirac mixtures) rather than points. Stationary covariance
//! functions are evaluated over pairwise distances between those
//! distributions, so a cached distance matrix replaces the usual input
//! matrix and hyperparameter optimization never touches the inputs again.
//!
//! The crate is organized around that pipeline:
//!
//! * [`distributions`] — input types, validation, moments, deterministic and
//!   seeded random sampling;
//! * [`distances`] — distance families between distributions (modified
//!   Cramér–von Mises, Wasserstein over Dirac mixtures, and quadrature-based
//!   L_p / Hellinger / Jensen–Shannon for univariate Gaussians) plus the
//!   distance matrix;
//! * [`kernels`] — distance-substitution covariance functions, a
//!   non-stationary composite, and the closed-form mean kernel for squared
//!   exponential over Gaussian inputs with its Monte Carlo oracle;
//! * [`gp`] — Cholesky-based fitting, prediction, marginal likelihood, and
//!   multi-start hyperparameter search;
//! * [`experiments`] — synthetic benchmark comparing distance GPs against the
//!   mean-kernel baseline on a ground-truth surface;
//! * [`io`] — file formats (JSON with full-precision floats, CSV matrices and
//!   grids).

#![forbid(unsafe_code)]

pub mod distances;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod gp;
pub mod io;
pub mod kernels;
pub mod optim;

pub use error::{Error, Result};
