//! Message types for the HTTP logits protocol.
//!
//! ```text
//! GET  /v1/info           -> {"vocab_size", "eos_id", "bos_id", "model", "max_prefix"}
//! POST /v1/tokenize       {"text"}               -> {"tokens"}
//! POST /v1/detokenize     {"tokens"}             -> {"text"}
//! POST /v1/next_logprobs  {"tokens"}             -> {"logprobs_b64"}
//! POST /v1/session        {"tokens"}             -> {"session_id"}
//! POST /v1/extend         {"session_id", "token"} -> {"logprobs_b64"}
//! errors: {"error": {"code", "message"}}
//! ```
//!
//! `logprobs_b64` is standard base64 over little-endian `f32` values, one
//! per vocabulary entry.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::TokenId;

pub const INFO_PATH: &str = "/v1/info";
pub const TOKENIZE_PATH: &str = "/v1/tokenize";
pub const DETOKENIZE_PATH: &str = "/v1/detokenize";
pub const NEXT_LOGPROBS_PATH: &str = "/v1/next_logprobs";
pub const SESSION_PATH: &str = "/v1/session";
pub const EXTEND_PATH: &str = "/v1/extend";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub vocab_size: usize,
    pub eos_id: TokenId,
    pub bos_id: Option<TokenId>,
    pub model: String,
    pub max_prefix: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokensBody {
    pub tokens: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextBody {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogprobsResponse {
    pub logprobs_b64: String,
    /// Debug form; never required.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionResponse {
    pub session_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendRequest {
    pub session_id: String,
    pub token: TokenId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: ErrorDetail,
}

impl ErrorResponse {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        ErrorResponse {
            error: ErrorDetail {
                code: code.into(),
                message: message.into(),
            },
        }
    }
}

pub fn encode_logprobs(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_logprobs(b64: &str) -> Result<Vec<f32>> {
    let bytes = STANDARD
        .decode(b64)
        .map_err(|e| Error::Protocol(format!("logprobs_b64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Protocol(format!(
            "logprobs_b64 carries {} bytes, not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
