use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("covariance factorization failed at pivot {pivot} (value {value:e})")]
    Factorization { pivot: usize, value: f64 },
    #[error("derivative of order {needed} requested, map supports up to {available}")]
    Capability { needed: usize, available: usize },
    #[error("invalid branch at position {position}: {reason}")]
    InvalidBranch { position: usize, reason: String },
    #[error("non-finite state at step {step}")]
    Overflow { step: usize },
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
