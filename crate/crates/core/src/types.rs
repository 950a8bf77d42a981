//! Domain types shared across the engine.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::{argmax, logsumexp};
use crate::sampler::SamplingSpec;

pub type TokenId = u32;

/// Maximum deviation of `logsumexp` from zero accepted for a distribution.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Number of aggregated candidates recorded per decoding step.
pub const TRACE_TOP_N: usize = 8;

/// The token inventory of a backend.
///
/// `token_text` is either empty (remote backends, where text handling lives
/// behind the wire protocol) or has exactly one entry per id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    size: usize,
    eos_id: TokenId,
    bos_id: Option<TokenId>,
    token_text: Vec<String>,
    separators: Vec<TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    size: Option<usize>,
    eos_id: TokenId,
    #[serde(default)]
    bos_id: Option<TokenId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    separators: Vec<TokenId>,
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = Error;

    fn try_from(r: VocabRepr) -> Result<Self> {
        match r.size {
            Some(size) if !r.tokens.is_empty() && size != r.tokens.len() => Err(Error::InvalidVocab(
                format!("size {size} disagrees with {} token strings", r.tokens.len()),
            )),
            Some(size) => Vocab::new(size, r.eos_id, r.bos_id, r.tokens, r.separators),
            None => Vocab::with_tokens(r.tokens, r.eos_id, r.bos_id, r.separators),
        }
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            size: if v.token_text.is_empty() {
                Some(v.size)
            } else {
                None
            },
            eos_id: v.eos_id,
            bos_id: v.bos_id,
            tokens: v.token_text,
            separators: v.separators,
        }
    }
}

impl Vocab {
    pub fn new(
        size: usize,
        eos_id: TokenId,
        bos_id: Option<TokenId>,
        token_text: Vec<String>,
        separators: Vec<TokenId>,
    ) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidVocab("size must be positive".into()));
        }
        if !token_text.is_empty() && token_text.len() != size {
            return Err(Error::InvalidVocab(format!(
                "expected {size} token strings, got {}",
                token_text.len()
            )));
        }
        let in_range = |id: TokenId| (id as usize) < size;
        if !in_range(eos_id) {
            return Err(Error::InvalidVocab(format!("eos id {eos_id} out of range")));
        }
        if let Some(b) = bos_id.filter(|&b| !in_range(b)) {
            return Err(Error::InvalidVocab(format!("bos id {b} out of range")));
        }
        if let Some(s) = separators.iter().copied().find(|&s| !in_range(s) || s == eos_id) {
            return Err(Error::InvalidVocab(format!("invalid separator id {s}")));
        }
        Ok(Vocab {
            size,
            eos_id,
            bos_id,
            token_text,
            separators,
        })
    }

    pub fn with_tokens(
        tokens: Vec<String>,
        eos_id: TokenId,
        bos_id: Option<TokenId>,
        separators: Vec<TokenId>,
    ) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidVocab("no tokens".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &tokens {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidVocab(format!("bad token text {t:?}")));
            }
            if !seen.insert(t.as_str()) {
                return Err(Error::InvalidVocab(format!("duplicate token text {t:?}")));
            }
        }
        Vocab::new(tokens.len(), eos_id, bos_id, tokens, separators)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn bos_id(&self) -> Option<TokenId> {
        self.bos_id
    }

    pub fn separators(&self) -> &[TokenId] {
        &self.separators
    }

    pub fn token_text(&self, id: TokenId) -> Option<&str> {
        self.token_text.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.token_text
    }

    pub fn id_of(&self, text: &str) -> Option<TokenId> {
        self.token_text
            .iter()
            .position(|t| t == text)
            .map(|i| i as TokenId)
    }

    pub fn check(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.size) {
            Some(&id) => Err(Error::TokenOutOfRange { id, size: self.size }),
            None => Ok(()),
        }
    }
}

/// An ordered run of token ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<TokenId>);

impl TokenSeq {
    pub fn new() -> Self {
        TokenSeq(Vec::new())
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, id: TokenId) {
        self.0.push(id);
    }

    pub fn last(&self) -> Option<TokenId> {
        self.0.last().copied()
    }

    pub fn concat(&self, other: &[TokenId]) -> TokenSeq {
        let mut v = Vec::with_capacity(self.0.len() + other.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(other);
        TokenSeq(v)
    }

    /// The sequence with a single trailing `eos` removed, if present.
    pub fn without_eos(&self, eos: TokenId) -> &[TokenId] {
        match self.0.split_last() {
            Some((&last, head)) if last == eos => head,
            _ => &self.0,
        }
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(v: Vec<TokenId>) -> Self {
        TokenSeq(v)
    }
}

impl AsRef<[TokenId]> for TokenSeq {
    fn as_ref(&self) -> &[TokenId] {
        &self.0
    }
}

impl std::ops::Deref for TokenSeq {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

/// One next-token distribution in natural-log space.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbDist {
    values: Vec<f64>,
}

impl LogProbDist {
    /// Accepts already-normalized log-probabilities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDistribution("empty".into()));
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidDistribution("NaN or +inf entry".into()));
        }
        let lse = logsumexp(&values);
        if lse.is_nan() || lse.abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "logsumexp = {lse}, outside ±{NORMALIZATION_TOLERANCE}"
            )));
        }
        Ok(LogProbDist { values })
    }

    /// Normalizes arbitrary scores (logits) with a log-softmax.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidDistribution("NaN or +inf logit".into()));
        }
        let lse = logsumexp(logits);
        if lse == f64::NEG_INFINITY {
            return Err(Error::InvalidDistribution("all logits are -inf".into()));
        }
        LogProbDist::new(logits.iter().map(|&v| v - lse).collect())
    }

    /// From a probability vector; entries need only be non-negative.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::InvalidDistribution(
                "negative or non-finite probability".into(),
            ));
        }
        let logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        LogProbDist::from_logits(&logits)
    }

    pub fn uniform(size: usize) -> Self {
        let v = -(size as f64).ln();
        LogProbDist {
            values: vec![v; size],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: TokenId) -> f64 {
        self.values[id as usize]
    }

    pub fn probs(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.exp()).collect()
    }

    pub fn argmax(&self) -> TokenId {
        argmax(&self.values).expect("non-empty distribution")
    }

    /// Short content hash over the exact bit patterns of the values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        let out = h.finalize();
        out[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Argmax tie policy. Only one policy exists; it is recorded so result files
/// state it explicitly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    LowestTokenId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub k: usize,
    pub max_new_tokens: usize,
    pub sampling: SamplingSpec,
    pub seed: u64,
    #[serde(default)]
    pub tie_break: TieBreak,
    pub template_id: String,
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max_new_tokens must be at least 1".into()));
        }
        self.sampling.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    MaxLen,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::Eos => f.write_str("eos"),
            StopReason::MaxLen => f.write_str("max_len"),
        }
    }
}

/// One decoding step: what every branch assigned to the chosen token, the
/// strongest aggregated candidates, and the choice itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub chosen: TokenId,
    /// Per-branch log-probability of `chosen`, in branch order.
    pub branch_logprobs: Vec<f64>,
    /// Per-branch digest of the full distribution, in branch order.
    pub branch_digests: Vec<String>,
    /// Highest aggregated values, descending, ties by token id.
    pub top: Vec<(TokenId, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Emitted tokens, including a terminating eos when one was chosen.
    pub output: TokenSeq,
    /// Detokenized output without the eos.
    pub text: String,
    pub stop_reason: StopReason,
    pub branch_inputs: Vec<TokenSeq>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<StepRecord>,
}

impl DecodeResult {
    /// The aggregated objective accumulated along the trace: the exact sum of
    /// every branch's log-probability of every chosen token.
    pub fn trace_objective(&self) -> f64 {
        crate::numeric::exact_sum(self.trace.iter().flat_map(|s| s.branch_logprobs.iter().copied()))
    }

    /// Output tokens without the terminating eos.
    pub fn content(&self, eos: TokenId) -> &[TokenId] {
        self.output.without_eos(eos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_rejects_bad_ids() {
        assert!(Vocab::new(4, 4, None, vec![], vec![]).is_err());
        assert!(Vocab::new(4, 0, Some(9), vec![], vec![]).is_err());
        assert!(Vocab::new(4, 0, None, vec![], vec![0]).is_err());
        assert!(Vocab::new(0, 0, None, vec![], vec![]).is_err());
        let v = Vocab::new(4, 0, None, vec![], vec![1]).unwrap();
        assert!(v.check(&[0, 3]).is_ok());
        assert!(matches!(
            v.check(&[4]),
            Err(Error::TokenOutOfRange { id: 4, size: 4 })
        ));
    }

    #[test]
    fn vocab_json_roundtrip() {
        let v =
            Vocab::with_tokens(vec!["</s>".into(), "<sep>".into(), "a".into()], 0, None, vec![1]).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.id_of("a"), Some(2));
        assert!(serde_json::from_str::<Vocab>(r#"{"eos_id":0,"tokens":["a","a"]}"#).is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(LogProbDist::new(vec![0.5f64.ln(), 0.5f64.ln()]).is_ok());
        assert!(LogProbDist::new(vec![0.5f64.ln(), 0.4f64.ln()]).is_err());
        assert!(LogProbDist::new(vec![f64::NAN, 0.0]).is_err());
        assert!(LogProbDist::new(vec![0.0, f64::NEG_INFINITY]).is_ok());
        let d = LogProbDist::from_logits(&[3.0, 1.0, -2.0]).unwrap();
        assert!(logsumexp(d.values()).abs() < 1e-12);
        assert!(LogProbDist::from_logits(&[f64::NEG_INFINITY; 2]).is_err());
        let u = LogProbDist::uniform(4);
        assert_eq!(u.get(3), -(4f64).ln());
    }

    #[test]
    fn digest_tracks_bits() {
        let a = LogProbDist::from_probs(&[0.25, 0.75]).unwrap();
        let b = LogProbDist::from_probs(&[0.25, 0.75]).unwrap();
        let c = LogProbDist::from_probs(&[0.75, 0.25]).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 16);
    }

    #[test]
    fn without_eos_strips_one() {
        let s = TokenSeq(vec![3, 4, 0]);
        assert_eq!(s.without_eos(0), &[3, 4]);
        assert_eq!(TokenSeq(vec![3]).without_eos(0), &[3]);
    }
}
