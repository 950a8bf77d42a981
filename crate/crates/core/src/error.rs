use thiserror::Error;

use crate::types::{DecodeResult, TokenId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("vocabulary size mismatch: expected {expected}, got {actual}")]
    VocabMismatch { expected: usize, actual: usize },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: TokenId, size: usize },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("invalid model file: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("search space of {requested} sequences exceeds the limit of {limit}")]
    Capacity { requested: u128, limit: u128 },

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("remote error {status} ({code}): {message}")]
    Remote {
        status: u16,
        code: String,
        message: String,
    },

    /// A decode that failed part-way through. `partial` holds every step
    /// completed before the failure.
    #[error("decode failed after {} steps: {source}", partial.output.len())]
    Decode {
        partial: Box<DecodeResult>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that originate in a backend (transport, protocol,
    /// server-side errors) rather than in the caller's input.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::BackendUnavailable(_) | Error::Protocol(_) | Error::Remote { .. } => true,
            Error::Decode { source, .. } => source.is_backend(),
            _ => false,
        }
    }
}
