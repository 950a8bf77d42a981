use super::{LmBackend, ToyTableLm};
use crate::error::{Error, Result};
use crate::types::{LogProbDist, TokenId, TokenSeq, Vocab};

/// Separator count that closes a `[SEP x SEP r SEP x SEP]` voting input.
const VOTING_LAYOUT_SEPARATORS: usize = 4;

/// A table model with an in-context copy bias.
///
/// When the prefix ends exactly at the fourth segment separator (the answer
/// slot of a voting input), the output mixes the base row with a one-hot on
/// the first token of the reference window, the span between the second
/// and third separators:
///
/// `p = (1 - beta) * base + beta * onehot(window[0])`
///
/// Everywhere else the base row is returned unmixed. Slots are located by
/// counting the segment separator (the vocabulary's first separator id),
/// never by content.
#[derive(Clone, Debug)]
pub struct ToyCopyLm {
    base: ToyTableLm,
    beta: f64,
    separator: TokenId,
}

impl ToyCopyLm {
    pub fn new(base: ToyTableLm, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidModel(format!("copy weight {beta} outside [0, 1)")));
        }
        let separator = *base
            .vocab()
            .separators()
            .first()
            .ok_or_else(|| Error::InvalidModel("copy model needs a separator id".into()))?;
        Ok(ToyCopyLm {
            base,
            beta,
            separator,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn base(&self) -> &ToyTableLm {
        &self.base
    }

    /// The referenced token if `prefix` ends at an answer slot.
    pub fn answer_slot_reference(&self, prefix: &[TokenId]) -> Option<TokenId> {
        let seps: Vec<usize> = prefix
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == self.separator)
            .map(|(i, _)| i)
            .collect();
        if seps.len() != VOTING_LAYOUT_SEPARATORS || seps[3] + 1 != prefix.len() {
            return None;
        }
        let window = &prefix[seps[1] + 1..seps[2]];
        window.first().copied()
    }

    /// Serializes to the model file format with a `copy` block.
    pub fn to_file(&self) -> super::ToyModelFile {
        let mut f = self.base.to_file();
        f.copy = Some(super::table::CopySpec { beta: self.beta });
        f
    }
}

impl LmBackend for ToyCopyLm {
    fn vocab(&self) -> &Vocab {
        self.base.vocab()
    }

    fn next_logprobs(&self, prefix: &[TokenId]) -> Result<LogProbDist> {
        let base = self.base.next_logprobs(prefix)?;
        let reference = match self.answer_slot_reference(prefix) {
            Some(r) if self.beta > 0.0 => r,
            _ => return Ok(base),
        };
        let mut probs: Vec<f64> = base.probs().iter().map(|p| (1.0 - self.beta) * p).collect();
        probs[reference as usize] += self.beta;
        LogProbDist::from_probs(&probs)
    }

    fn tokenize(&self, text: &str) -> Result<TokenSeq> {
        self.base.tokenize(text)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        self.base.detokenize(tokens)
    }
}
