//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration, naming the offending key.
    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    /// A function argument violates its documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A mathematical precondition (radius ordering, step-size bound) fails.
    #[error("domain error: {0}")]
    Domain(String),

    /// A covariance matrix is not positive semidefinite to round-off.
    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPsd { min_eigenvalue: f64 },

    /// An experiment produced no usable result.
    #[error("experiment error: {0}")]
    Experiment(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the caller's input rather than by a run.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Argument(_) | Error::Domain(_)
        )
    }
}
