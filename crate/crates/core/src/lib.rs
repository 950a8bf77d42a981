//! Integrative decoding over pluggable next-token backends, with sampling,
//! prompt templating, baseline methods, a self-consistency score and a
//! synthetic evaluation harness.

pub mod backend;
pub mod baselines;
pub mod consistency;
pub mod decoder;
pub mod error;
pub mod harness;
pub mod numeric;
pub mod rng;
pub mod sampler;
pub mod templating;
pub mod types;
pub mod wire;

pub use backend::{open_backend, LmBackend, RemoteLm, ToyCopyLm, ToyTableLm};
pub use baselines::Method;
pub use consistency::{factuality_score, ConsistencyReport, SupportFn};
pub use decoder::{decode_branches, id_decode, replay_trace, ReplayReport};
pub use error::{Error, Result};
pub use sampler::{sample_k, SampledResponse, SamplingSpec, Strategy};
pub use templating::TemplateSet;
pub use types::{
    DecodeConfig, DecodeResult, LogProbDist, StepRecord, StopReason, TieBreak, TokenId, TokenSeq, Vocab,
};
