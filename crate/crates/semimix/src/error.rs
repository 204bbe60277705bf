//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, estimation, diagnostics, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible shapes between vectors/matrices/parameter sets.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Mixture weights failed validation (wrong length, nonpositive entry,
    /// or sum away from one).
    #[error("invalid mixture weights: {0}")]
    InvalidWeights(String),

    /// A covariance matrix is not symmetric positive-definite.
    #[error("invalid covariance for component {component}: {reason}")]
    InvalidCovariance { component: usize, reason: String },

    /// A Cholesky factorization failed (matrix not positive-definite).
    #[error("covariance matrix is not positive definite (Cholesky factorization failed)")]
    CholeskyFailure,

    /// A class label lies outside `0..g`.
    #[error("label {label} out of range for {g} components (row {row})")]
    LabelOutOfRange { row: usize, label: usize, g: usize },

    /// The operation requires a non-empty dataset or sample.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// An argument failed a domain check (e.g. gamma = 1 for the Rényi
    /// entropy, g < 2 for the entropy transform, alpha outside [0, 1]).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Perfect separation in the logistic fit: the likelihood has no finite
    /// maximizer. Refit with `ridge > 0`.
    #[error("perfect separation detected in logistic fit (no finite maximizer); refit with ridge > 0")]
    Separation,

    /// The logistic Newton solver could not reach the score tolerance.
    #[error("logistic fit failed to converge: {0}")]
    LogisticNoConvergence(String),

    /// A Newton step's Hessian solve failed; a ridge penalty makes the
    /// system well-posed.
    #[error("singular Hessian in logistic fit; refit with ridge > 0")]
    SingularHessian,

    /// A boundary-weight fractional fit does not identify all parameters.
    #[error("under-determined fit: {0}")]
    UnderDetermined(String),

    /// A mixture component received (numerically) no observations during a
    /// weighted M-step.
    #[error("component {component} starved during M-step (effective count {count:.3e})")]
    ComponentStarved { component: usize, count: f64 },

    /// Non-finite value where a finite one is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Benchmark configuration failed validation.
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),

    /// CSV parse failure with 1-based location.
    #[error("CSV parse error at row {row}, column {col}: {message}")]
    CsvParse { row: usize, col: usize, message: String },

    /// JSON parse or schema failure.
    #[error("JSON error: {0}")]
    Json(String),

    /// Filesystem-level failure.
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
