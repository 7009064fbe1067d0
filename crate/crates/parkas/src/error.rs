//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform for the requested operation.
    #[error("dimension mismatch in {op}: {detail}")]
    DimMismatch { op: &'static str, detail: String },

    /// A matrix was singular to working precision where an inverse-like
    /// operation was required. Never silently produces NaN.
    #[error("singular matrix in {context}: pivot {pivot:.3e} below tolerance {tol:.3e}")]
    Singular {
        context: &'static str,
        pivot: f64,
        tol: f64,
    },

    /// A matrix that must be (semi)definite failed the check.
    #[error("matrix not positive semidefinite in {context}: diagonal term {value:.3e}")]
    NotPsd { context: &'static str, value: f64 },

    /// Non-finite value where finite data is required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Invalid argument or model configuration.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Empty input where at least one element is required.
    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    /// Parallel scan requested for an operator without an identity element.
    #[error("operator {0} has no identity element; only sequential scans are possible")]
    MissingIdentity(&'static str),

    /// An observation has zero likelihood under the model.
    #[error("measurement at step {step} is impossible under the model (zero likelihood)")]
    ZeroLikelihood { step: usize },

    /// A normalizing sum vanished where a conditional distribution was
    /// required.
    #[error("zero normalizer in {0}")]
    ZeroDenominator(&'static str),

    /// Exhaustive enumeration was asked to exceed its size bound.
    #[error("problem too large for exhaustive enumeration: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, Error>;
