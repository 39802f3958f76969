//! Crate-wide error type.
//!
//! One enum covers every failure class so errors compose across modules
//! (a distance failure surfaces through a GP fit unchanged). Variants map
//! onto the CLI exit-code classes: data/format problems versus numerical
//! failures; see `distgp-cli` for the mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Mixture weights outside (0, 1] or not summing to 1 within tolerance.
    #[error("invalid weights: {0}")]
    Weight(String),

    /// Mismatched dimensions between points, means, or matrices.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Covariance not symmetric or not positive definite at construction.
    #[error("invalid covariance: {0}")]
    Covariance(String),

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Parameter outside its declared range (kernel shapes, b_max, orders).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Dirac mixtures with different support sizes where equal sizes are required.
    #[error("cardinality mismatch: {0}")]
    Cardinality(String),

    /// Input collections of inconsistent or unusable length.
    #[error("size error: {0}")]
    Size(String),

    /// A distance family applied to an input class it does not support.
    #[error("unsupported pair: {0}")]
    UnsupportedPair(String),

    /// Quadrature grid unusable (too few nodes, even node count, bad bounds).
    #[error("quadrature error: {0}")]
    Quadrature(String),

    /// Gram matrix not positive definite even at the jitter ceiling.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// Predictive variance below the round-off clamp floor.
    #[error("negative predictive variance: {0}")]
    NegativeVariance(String),

    /// Hyperparameter search failed in every restart.
    #[error("optimization failed: {0}")]
    Optimization(String),

    /// Files that must describe the same data set disagree.
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    /// Malformed file contents (JSON or CSV).
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl Error {
    /// Prepends `prefix: ` to the message while keeping the variant, so
    /// callers can attach location context (a pair index, a grid node)
    /// without collapsing everything into one catch-all class.
    pub fn with_context(self, prefix: &str) -> Error {
        let tag = |m: String| format!("{prefix}: {m}");
        match self {
            Error::Weight(m) => Error::Weight(tag(m)),
            Error::Dimension(m) => Error::Dimension(tag(m)),
            Error::Covariance(m) => Error::Covariance(tag(m)),
            Error::Domain(m) => Error::Domain(tag(m)),
            Error::Parameter(m) => Error::Parameter(tag(m)),
            Error::Cardinality(m) => Error::Cardinality(tag(m)),
            Error::Size(m) => Error::Size(tag(m)),
            Error::UnsupportedPair(m) => Error::UnsupportedPair(tag(m)),
            Error::Quadrature(m) => Error::Quadrature(tag(m)),
            Error::NotPositiveDefinite(m) => Error::NotPositiveDefinite(tag(m)),
            Error::NegativeVariance(m) => Error::NegativeVariance(tag(m)),
            Error::Optimization(m) => Error::Optimization(tag(m)),
            Error::Inconsistent(m) => Error::Inconsistent(tag(m)),
            Error::Format(m) => Error::Format(tag(m)),
            Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), tag(e.to_string()))),
        }
    }
}
