//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed inconsistent shapes or out-of-range parameters.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix factorization failed. The message carries the condition
    /// estimate when one is available.
    #[error("factorization failed: {0}")]
    Factorization(String),

    /// Exact coalition enumeration was requested for too many features.
    #[error(
        "cost guard: exact enumeration over {features} features exceeds the limit of {limit}; \
         subsample the feature set or use a closed-form engine"
    )]
    CostGuard { features: usize, limit: usize },

    /// Input data is degenerate for the requested statistic.
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// A group has no positive labels, so its true-positive rate is undefined.
    #[error("true-positive rate undefined for group {group:?}: no positive labels")]
    UndefinedTpr { group: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code for the CLI: 2 for usage problems, 3 for numerical
    /// or data failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) => 2,
            _ => 3,
        }
    }

    /// Stable machine-readable tag for the error category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::Factorization(_) => "factorization",
            Error::CostGuard { .. } => "cost-guard",
            Error::Degenerate(_) => "degenerate",
            Error::UndefinedTpr { .. } => "undefined-tpr",
            Error::Io(_) => "io",
            Error::Json(_) => "serialization",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
