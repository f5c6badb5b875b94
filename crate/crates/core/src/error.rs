use thiserror::Error;

/// Errors raised by the library layers.
///
/// Numerical failures carry the module and operation that produced them so the
/// harness can report them with a stable identifier.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("numerical failure in {module}::{operation}: {detail}")]
    Numerical {
        module: &'static str,
        operation: &'static str,
        detail: String,
    },

    #[error("insufficient signal: {0}")]
    InsufficientSignal(String),

    #[error("insufficient tail: {0}")]
    InsufficientTail(String),

    #[error("tail sum not certified: remaining bound {bound:e} exceeds {target:e}")]
    TailTruncation { bound: f64, target: f64 },

    #[error("block scheme error at block {block}: {detail}")]
    Scheme { block: u32, detail: String },

    #[error("model capability missing: {0}")]
    Capability(String),
}

impl Error {
    pub(crate) fn numerical(
        module: &'static str,
        operation: &'static str,
        detail: impl Into<String>,
    ) -> Self {
        Error::Numerical {
            module,
            operation,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidInput(detail.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
