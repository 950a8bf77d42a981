//! Comparison methods: greedy decoding, exact-match self-consistency
//! voting, universal self-consistency (USC) and self-reflection (SR).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::LmBackend;
use crate::consistency::normalize_text;
use crate::decoder::decode_branches;
use crate::error::{Error, Result};
use crate::sampler::SampledResponse;
use crate::templating::TemplateSet;
use crate::types::{DecodeResult, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Greedy,
    ScVote,
    Usc,
    Sr,
    Id,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Greedy,
        Method::ScVote,
        Method::Usc,
        Method::Sr,
        Method::Id,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Greedy => "greedy",
            Method::ScVote => "sc_vote",
            Method::Usc => "usc",
            Method::Sr => "sr",
            Method::Id => "id",
        }
    }

    /// Whether the method consumes sampled responses.
    pub fn uses_samples(self) -> bool {
        self != Method::Greedy
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Method::Greedy),
            "sc" | "sc_vote" | "sc-vote" => Ok(Method::ScVote),
            "usc" => Ok(Method::Usc),
            "sr" => Ok(Method::Sr),
            "id" => Ok(Method::Id),
            _ => Err(Error::InvalidConfig(format!(
                "unknown method {s:?} (greedy|sc|usc|sr|id)"
            ))),
        }
    }
}

pub fn greedy_decode(
    backend: &dyn LmBackend,
    question: &str,
    template: &TemplateSet,
    max_new_tokens: usize,
) -> Result<DecodeResult> {
    let base = template.build_base(backend, question)?;
    decode_branches(backend, vec![base], max_new_tokens)
}

/// Extracts a short comparable answer from a response.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerParser {
    /// The last token before eos; responses without eos are unparseable.
    #[default]
    LastToken,
    /// The whole response text, normalized; empty text is unparseable.
    NormalizedText,
}

impl AnswerParser {
    pub fn parse(self, response: &SampledResponse, vocab: &Vocab) -> Option<String> {
        match self {
            AnswerParser::LastToken => {
                if response.truncated || response.tokens.last() != Some(vocab.eos_id()) {
                    return None;
                }
                let id = *response.tokens.without_eos(vocab.eos_id()).last()?;
                Some(
                    vocab
                        .token_text(id)
                        .map(str::to_string)
                        .unwrap_or_else(|| format!("#{id}")),
                )
            }
            AnswerParser::NormalizedText => {
                let n = normalize_text(&response.text);
                (!n.is_empty()).then_some(n)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub winner: String,
    pub winner_count: usize,
    /// Answer counts in lexicographic order.
    pub tally: Vec<(String, usize)>,
    pub dropped: usize,
}

/// Plurality over already-parsed answers (`None` = unparseable, dropped).
/// Ties go to the lexicographically smallest answer.
pub fn plurality<'a, I>(answers: I) -> Result<VoteOutcome>
where
    I: IntoIterator<Item = Option<&'a str>>,
{
    let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
    let mut dropped = 0;
    for a in answers {
        match a {
            Some(a) => *tally.entry(a).or_default() += 1,
            None => dropped += 1,
        }
    }
    let mut best: Option<(&str, usize)> = None;
    for (&a, &n) in &tally {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((a, n));
        }
    }
    let (winner, winner_count) = best.ok_or(Error::EmptyInput("parsed answers"))?;
    Ok(VoteOutcome {
        winner: winner.to_string(),
        winner_count,
        tally: tally.iter().map(|(a, n)| (a.to_string(), *n)).collect(),
        dropped,
    })
}

/// Exact-match self-consistency vote over sampled responses.
pub fn sc_vote(responses: &[SampledResponse], parser: AnswerParser, vocab: &Vocab) -> Result<VoteOutcome> {
    let parsed: Vec<Option<String>> = responses.iter().map(|r| parser.parse(r, vocab)).collect();
    plurality(parsed.iter().map(Option::as_deref))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UscSelection {
    /// 1-based index into the responses.
    pub index: usize,
    pub text: String,
    /// True when the generation named no valid response and the first one
    /// was taken.
    pub fallback: bool,
    pub generation: DecodeResult,
}

fn response_number() -> Regex {
    Regex::new(r"Response\s+(\d+)").expect("static regex")
}

/// Reads the chosen response number from a USC generation. Looks right
/// after `answer_prefix` first, then for any `Response N`. Returns `None`
/// if nothing in `[1, k]` is named.
pub fn parse_usc_selection(generation: &str, answer_prefix: Option<&str>, k: usize) -> Option<usize> {
    let in_range = |n: usize| (1..=k).contains(&n).then_some(n);
    if let Some(prefix) = answer_prefix.filter(|p| !p.is_empty()) {
        if let Some(at) = generation.find(prefix) {
            let rest = generation[at + prefix.len()..].trim_start();
            let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
            if let Some(n) = digits.parse().ok().and_then(in_range) {
                return Some(n);
            }
        }
    }
    response_number()
        .captures(generation)
        .and_then(|c| c[1].parse().ok())
        .and_then(in_range)
}

pub fn usc_select(
    backend: &dyn LmBackend,
    question: &str,
    responses: &[SampledResponse],
    template: &TemplateSet,
    max_new_tokens: usize,
) -> Result<UscSelection> {
    let input = template.build_usc_input(backend, question, responses)?;
    let generation = decode_branches(backend, vec![input], max_new_tokens)?;
    let parsed = parse_usc_selection(&generation.text, template.answer_prefix(), responses.len());
    let index = parsed.unwrap_or(1);
    Ok(UscSelection {
        index,
        text: responses[index - 1].text.clone(),
        fallback: parsed.is_none(),
        generation,
    })
}

/// Greedy generation from the self-reflection prompt. With
/// `strip_answer_prefix`, a leading answer prefix is removed from `text`.
pub fn sr_refine(
    backend: &dyn LmBackend,
    question: &str,
    responses: &[SampledResponse],
    template: &TemplateSet,
    max_new_tokens: usize,
    strip_answer_prefix: bool,
) -> Result<DecodeResult> {
    let input = template.build_sr_input(backend, question, responses)?;
    let mut result = decode_branches(backend, vec![input], max_new_tokens)?;
    if strip_answer_prefix {
        if let Some(prefix) = template.sr_answer_prefix() {
            let trimmed = result.text.trim_start();
            if let Some(rest) = trimmed.strip_prefix(prefix) {
                result.text = rest.trim_start().to_string();
            }
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plurality_basics() {
        let v = plurality([Some("A"), Some("A"), Some("B")]).unwrap();
        assert_eq!(v.winner, "A");
        assert_eq!(v.winner_count, 2);
        let v = plurality([Some("B"), Some("A")]).unwrap();
        assert_eq!(v.winner, "A");
        let v = plurality([None, Some("C"), None]).unwrap();
        assert_eq!((v.winner.as_str(), v.dropped), ("C", 2));
        assert!(plurality([None, None]).is_err());
    }

    #[test]
    fn usc_parsing() {
        let p = Some("The most consistent response is Response");
        assert_eq!(
            parse_usc_selection("The most consistent response is Response 2", p, 4),
            Some(2)
        );
        assert_eq!(
            parse_usc_selection("The most consistent response is Response 12.", p, 16),
            Some(12)
        );
        assert_eq!(parse_usc_selection("I pick Response 3 because", p, 4), Some(3));
        assert_eq!(
            parse_usc_selection("The most consistent response is Response 9", p, 4),
            None
        );
        assert_eq!(parse_usc_selection("no idea", p, 4), None);
        assert_eq!(parse_usc_selection("Response X", p, 4), None);
        assert_eq!(parse_usc_selection("Response 1", None, 1), Some(1));
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("sc".parse::<Method>().unwrap(), Method::ScVote);
        assert!("dola".parse::<Method>().is_err());
    }
}
