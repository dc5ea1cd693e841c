use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its physical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid run configuration; the message names the offending field.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input data (CSV etc.); carries a 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// An iterative solver failed to converge.
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code for the CLI: 2 for bad config/input, 3 for
    /// numerical non-convergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Domain(_) => 2,
            Error::NonConvergence(_) => 3,
            _ => 1,
        }
    }
}
