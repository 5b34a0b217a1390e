use thiserror::Error;

/// Errors raised by estimation, simulation and the Monte Carlo harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("effective rank below {requested}: eigenvalue {index} is {value:e} (largest {largest:e})")]
    RankDeficient {
        requested: usize,
        index: usize,
        value: f64,
        largest: f64,
    },

    #[error("singular matrix in {context} (pivot {pivot})")]
    Singular { context: &'static str, pivot: usize },

    #[error("ill-conditioned matrix in {context}: condition number {condition:e}")]
    IllConditioned { context: &'static str, condition: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{dropped} of {total} replications failed (limit {limit})")]
    ExcessiveDrops {
        dropped: usize,
        total: usize,
        limit: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("malformed data: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures that originate in the numerics rather than in the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::Singular { .. }
                | Error::IllConditioned { .. }
                | Error::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
