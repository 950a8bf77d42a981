//! Language-model backends.
//!
//! Every backend maps a token prefix to a normalized next-token
//! distribution. Two in-process toy models make the algorithms testable
//! without an ML runtime; [`RemoteLm`] speaks the HTTP wire protocol.

mod copy;
mod remote;
mod table;

pub use copy::ToyCopyLm;
pub use remote::{RemoteConfig, RemoteLm};
pub use table::{ToyModelFile, ToyTableLm};

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::exact_sum;
use crate::types::{LogProbDist, TokenId, TokenSeq, Vocab};

/// Upper bound on the number of sequences [`enumerate_objective`] will score.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

pub trait LmBackend: Send + Sync {
    fn vocab(&self) -> &Vocab;

    /// Next-token distribution after `prefix`. Must be a pure function of
    /// the prefix.
    fn next_logprobs(&self, prefix: &[TokenId]) -> Result<LogProbDist>;

    fn tokenize(&self, text: &str) -> Result<TokenSeq>;

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String>;
}

impl<B: LmBackend + ?Sized> LmBackend for Arc<B> {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }
    fn next_logprobs(&self, prefix: &[TokenId]) -> Result<LogProbDist> {
        (**self).next_logprobs(prefix)
    }
    fn tokenize(&self, text: &str) -> Result<TokenSeq> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        (**self).detokenize(tokens)
    }
}

impl<B: LmBackend + ?Sized> LmBackend for Box<B> {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }
    fn next_logprobs(&self, prefix: &[TokenId]) -> Result<LogProbDist> {
        (**self).next_logprobs(prefix)
    }
    fn tokenize(&self, text: &str) -> Result<TokenSeq> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        (**self).detokenize(tokens)
    }
}

/// Opens a backend from a spec string: `toy:<path>` or `http:<url>`.
///
/// `http:` accepts both `http:http://host:port` and `http://host:port`.
pub fn open_backend(spec: &str) -> Result<Box<dyn LmBackend>> {
    if let Some(path) = spec.strip_prefix("toy:") {
        let file = ToyModelFile::load(Path::new(path))?;
        return file.into_backend();
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(Box::new(RemoteLm::connect(RemoteConfig::new(spec))?));
    }
    if let Some(url) = spec.strip_prefix("http:") {
        return Ok(Box::new(RemoteLm::connect(RemoteConfig::new(url))?));
    }
    Err(Error::InvalidConfig(format!(
        "unknown backend spec {spec:?} (expected toy:<path> or http:<url>)"
    )))
}

/// Per-step log-probabilities of `continuation` forced after `prefix`.
pub fn score_terms(
    backend: &dyn LmBackend,
    prefix: &[TokenId],
    continuation: &[TokenId],
) -> Result<Vec<f64>> {
    let mut ctx = Vec::with_capacity(prefix.len() + continuation.len());
    ctx.extend_from_slice(prefix);
    let mut terms = Vec::with_capacity(continuation.len());
    for &tok in continuation {
        let dist = backend.next_logprobs(&ctx)?;
        if tok as usize >= dist.len() {
            return Err(Error::TokenOutOfRange {
                id: tok,
                size: dist.len(),
            });
        }
        terms.push(dist.get(tok));
        ctx.push(tok);
    }
    Ok(terms)
}

/// `log p(continuation | prefix)` as the exact sum of per-step terms.
pub fn score_sequence(backend: &dyn LmBackend, prefix: &[TokenId], continuation: &[TokenId]) -> Result<f64> {
    if continuation.is_empty() {
        return Err(Error::EmptyInput("continuation"));
    }
    Ok(exact_sum(score_terms(backend, prefix, continuation)?))
}

/// The sequence-level objective summed over branches:
/// `Σ_j Σ_t log p(y_t | y_<t, q_j)`, as one exact sum over all terms.
pub fn branch_objective(backend: &dyn LmBackend, branch_inputs: &[TokenSeq], y: &[TokenId]) -> Result<f64> {
    let mut terms = Vec::with_capacity(branch_inputs.len() * y.len());
    for q in branch_inputs {
        terms.extend(score_terms(backend, q, y)?);
    }
    Ok(exact_sum(terms))
}

/// Scores every candidate output under the summed-branch objective and
/// ranks them, best first (ties by lexicographic token order).
///
/// Candidates are all sequences of length at most `max_len` that either end
/// in eos (eos appearing only at the end) or reach `max_len` without it,
/// which is exactly the set of outputs a decoder can stop on.
pub fn enumerate_objective(
    backend: &dyn LmBackend,
    branch_inputs: &[TokenSeq],
    max_len: usize,
) -> Result<Vec<(TokenSeq, f64)>> {
    if branch_inputs.is_empty() {
        return Err(Error::EmptyInput("branch inputs"));
    }
    if max_len == 0 {
        return Err(Error::InvalidConfig("max_len must be at least 1".into()));
    }
    let vocab = backend.vocab();
    let v = vocab.size() as u128;
    let requested = u32::try_from(max_len)
        .ok()
        .and_then(|e| v.checked_pow(e))
        .unwrap_or(u128::MAX);
    if requested > ENUMERATION_LIMIT {
        return Err(Error::Capacity {
            requested,
            limit: ENUMERATION_LIMIT,
        });
    }
    let eos = vocab.eos_id();

    // Depth-first over prefixes, carrying each branch's running terms so a
    // shared prefix is scored once.
    let mut out = Vec::new();
    let mut path: Vec<TokenId> = Vec::new();
    let mut terms: Vec<f64> = Vec::new();
    walk(
        backend,
        branch_inputs,
        max_len,
        eos,
        &mut path,
        &mut terms,
        &mut out,
    )?;
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

fn walk(
    backend: &dyn LmBackend,
    branch_inputs: &[TokenSeq],
    max_len: usize,
    eos: TokenId,
    path: &mut Vec<TokenId>,
    terms: &mut Vec<f64>,
    out: &mut Vec<(TokenSeq, f64)>,
) -> Result<()> {
    let dists = branch_inputs
        .iter()
        .map(|q| backend.next_logprobs(&q.concat(path)))
        .collect::<Result<Vec<_>>>()?;
    let size = backend.vocab().size();
    for tok in 0..size as TokenId {
        let mark = terms.len();
        terms.extend(dists.iter().map(|d| d.get(tok)));
        path.push(tok);
        if tok == eos || path.len() == max_len {
            out.push((TokenSeq(path.clone()), exact_sum(terms.iter().copied())));
        } else {
            walk(backend, branch_inputs, max_len, eos, path, terms, out)?;
        }
        path.pop();
        terms.truncate(mark);
    }
    Ok(())
}

/// Whitespace tokenizer over a vocabulary with token strings.
pub(crate) fn whitespace_tokenize(vocab: &Vocab, text: &str) -> Result<TokenSeq> {
    text.split_whitespace()
        .map(|w| vocab.id_of(w).ok_or_else(|| Error::UnknownToken(w.to_string())))
        .collect::<Result<Vec<_>>>()
        .map(TokenSeq)
}

pub(crate) fn whitespace_detokenize(vocab: &Vocab, tokens: &[TokenId]) -> Result<String> {
    let words = tokens
        .iter()
        .map(|&id| {
            vocab.token_text(id).ok_or(Error::TokenOutOfRange {
                id,
                size: vocab.size(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(words.join(" "))
}
