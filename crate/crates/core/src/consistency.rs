//! Self-consistency factuality estimate.
//!
//! A response is split into statements `s_i`; each statement is checked
//! against every sampled response `r_j` with a support function returning a
//! score in `[0, 1]`. The statement score is the row mean, the per-response
//! score is the column mean, and the overall score `F` is the mean of the
//! whole matrix.
//!
//! The support functions here are lexical stand-ins for a model judge and
//! are reported as such (`proxy: true`).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::exact_sum;

pub const DEFAULT_F1_THRESHOLD: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    /// Byte offsets `[start, end)` into the source text.
    pub span: (usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SupportFn {
    /// 1 if the normalized statement occurs in the normalized response.
    ExactNorm,
    /// Best token-level F1 against the response's statements, scaled by
    /// `1/tau` and capped at 1.
    TokenF1 { tau: f64 },
}

impl Default for SupportFn {
    fn default() -> Self {
        SupportFn::TokenF1 {
            tau: DEFAULT_F1_THRESHOLD,
        }
    }
}

impl fmt::Display for SupportFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SupportFn::ExactNorm => f.write_str("exact"),
            SupportFn::TokenF1 { tau } => write!(f, "f1:{tau}"),
        }
    }
}

impl FromStr for SupportFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "exact" => Ok(SupportFn::ExactNorm),
            None if s == "f1" => Ok(SupportFn::default()),
            Some(("f1", t)) => match t.parse::<f64>() {
                Ok(tau) if tau > 0.0 && tau <= 1.0 => Ok(SupportFn::TokenF1 { tau }),
                _ => Err(Error::InvalidConfig(format!(
                    "f1 threshold must be in (0, 1], got {t:?}"
                ))),
            },
            _ => Err(Error::InvalidConfig(format!(
                "bad support function {s:?} (exact|f1:TAU)"
            ))),
        }
    }
}

impl Serialize for SupportFn {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SupportFn {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub statements: Vec<Statement>,
    /// `matrix[i][j]`: support of statement `i` by response `j`.
    pub matrix: Vec<Vec<f64>>,
    /// Row means.
    pub statement_scores: Vec<f64>,
    /// Column means.
    pub response_scores: Vec<f64>,
    pub score: f64,
    pub support: SupportFn,
    pub proxy: bool,
}

fn is_terminal_punct(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | ',' | ';' | ':')
}

/// Lowercases, collapses whitespace and strips terminal punctuation.
pub fn normalize_text(text: &str) -> String {
    let collapsed = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    collapsed
        .trim_end_matches(is_terminal_punct)
        .trim_end()
        .to_string()
}

/// Length in bytes of a leading bullet or list marker (with its trailing
/// whitespace), if any.
fn bullet_len(line: &str) -> usize {
    let mut chars = line.char_indices();
    let Some((_, first)) = chars.next() else {
        return 0;
    };
    let after_marker = if matches!(first, '-' | '*' | '+' | '•' | '‣' | '·') {
        first.len_utf8()
    } else if first.is_ascii_digit() {
        let digits = line.bytes().take_while(u8::is_ascii_digit).count();
        match line.as_bytes().get(digits) {
            Some(b'.') | Some(b')') => digits + 1,
            _ => return 0,
        }
    } else {
        return 0;
    };
    let rest = &line[after_marker..];
    let ws = rest.len() - rest.trim_start().len();
    if ws == 0 && !rest.is_empty() {
        return 0;
    }
    after_marker + ws
}

/// Splits text into statements at bullet markers and sentence terminators
/// (`.`, `!`, `?` followed by whitespace or end of line).
pub fn split_statements(text: &str) -> Vec<Statement> {
    let mut out = Vec::new();
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let line = raw.trim_end_matches(['\n', '\r']);
        let lead = line.len() - line.trim_start().len();
        let body_start = lead + bullet_len(&line[lead..]);
        let body = &line[body_start..];
        let base = offset + body_start;

        let chars: Vec<(usize, char)> = body.char_indices().collect();
        let mut seg_start = 0;
        for (n, &(i, c)) in chars.iter().enumerate() {
            if !matches!(c, '.' | '!' | '?') {
                continue;
            }
            match chars.get(n + 1) {
                Some(&(_, next)) if next.is_whitespace() => {}
                None => {}
                _ => continue,
            }
            let end = i + c.len_utf8();
            push_segment(&mut out, body, seg_start, end, base);
            seg_start = end;
        }
        push_segment(&mut out, body, seg_start, body.len(), base);
        offset += raw.len();
    }
    out
}

fn push_segment(out: &mut Vec<Statement>, body: &str, start: usize, end: usize, base: usize) {
    let seg = &body[start..end];
    let trimmed = seg.trim();
    if trimmed.is_empty() || normalize_text(trimmed).is_empty() {
        return;
    }
    let s = start + (seg.len() - seg.trim_start().len());
    out.push(Statement {
        text: trimmed.to_string(),
        span: (base + s, base + s + trimmed.len()),
    });
}

fn word_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Token-level F1 with multiset overlap.
pub fn token_f1(a: &str, b: &str) -> f64 {
    let ta = word_tokens(a);
    let tb = word_tokens(b);
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in &tb {
        *counts.entry(w).or_default() += 1;
    }
    let mut overlap = 0usize;
    for w in &ta {
        if let Some(c) = counts.get_mut(w.as_str()).filter(|c| **c > 0) {
            *c -= 1;
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    2.0 * overlap as f64 / (ta.len() + tb.len()) as f64
}

/// Degree to which `response` supports `statement`, in `[0, 1]`.
pub fn support(statement: &str, response: &str, func: SupportFn) -> f64 {
    match func {
        SupportFn::ExactNorm => {
            let s = normalize_text(statement);
            if !s.is_empty() && normalize_text(response).contains(&s) {
                1.0
            } else {
                0.0
            }
        }
        SupportFn::TokenF1 { tau } => {
            let best = split_statements(response)
                .iter()
                .map(|r| token_f1(statement, &r.text))
                .fold(0.0, f64::max);
            (best / tau).min(1.0)
        }
    }
}

/// Fills the report from a precomputed support matrix (`statements × responses`).
pub fn report_from_matrix(
    statements: Vec<Statement>,
    matrix: Vec<Vec<f64>>,
    func: SupportFn,
) -> Result<ConsistencyReport> {
    let n = matrix.len();
    if n == 0 {
        return Err(Error::EmptyInput("statements"));
    }
    let k = matrix[0].len();
    if k == 0 {
        return Err(Error::EmptyInput("responses"));
    }
    if matrix.iter().any(|row| row.len() != k) {
        return Err(Error::InvalidConfig("ragged support matrix".into()));
    }
    if matrix.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidConfig("support values must lie in [0, 1]".into()));
    }
    let statement_scores = matrix
        .iter()
        .map(|row| exact_sum(row.iter().copied()) / k as f64)
        .collect();
    let response_scores = (0..k)
        .map(|j| exact_sum(matrix.iter().map(|row| row[j])) / n as f64)
        .collect();
    let score = exact_sum(matrix.iter().flatten().copied()) / (n * k) as f64;
    Ok(ConsistencyReport {
        statements,
        matrix,
        statement_scores,
        response_scores,
        score,
        support: func,
        proxy: true,
    })
}

/// Scores `response` against every entry of `responses`.
pub fn factuality_score(response: &str, responses: &[&str], func: SupportFn) -> Result<ConsistencyReport> {
    if responses.is_empty() {
        return Err(Error::EmptyInput("responses"));
    }
    let statements = split_statements(response);
    if statements.is_empty() {
        return Err(Error::EmptyInput("statements"));
    }
    let matrix: Vec<Vec<f64>> = statements
        .par_iter()
        .map(|s| responses.iter().map(|r| support(&s.text, r, func)).collect())
        .collect();
    report_from_matrix(statements, matrix, func)
}

/// Scores sampled response `member` against the others (itself excluded).
pub fn factuality_score_member(
    responses: &[&str],
    member: usize,
    func: SupportFn,
) -> Result<ConsistencyReport> {
    if member >= responses.len() {
        return Err(Error::InvalidConfig(format!(
            "member {member} out of range for {} responses",
            responses.len()
        )));
    }
    let others: Vec<&str> = responses
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != member)
        .map(|(_, r)| *r)
        .collect();
    factuality_score(responses[member], &others, func)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &[Statement]) -> Vec<&str> {
        s.iter().map(|x| x.text.as_str()).collect()
    }

    #[test]
    fn splits_sentences_and_bullets() {
        assert_eq!(
            texts(&split_statements("A is X. B is Y.")),
            vec!["A is X.", "B is Y."]
        );
        assert_eq!(texts(&split_statements("- p1\n- p2")), vec!["p1", "p2"]);
        assert_eq!(texts(&split_statements("1. one\n2) two")), vec!["one", "two"]);
        assert_eq!(
            texts(&split_statements("v1.2 is out! Really?")),
            vec!["v1.2 is out!", "Really?"]
        );
        assert!(split_statements("  \n - \n").is_empty());
    }

    #[test]
    fn spans_point_into_source() {
        let text = "Intro line.\n  - first point. second\n";
        for s in split_statements(text) {
            assert_eq!(&text[s.span.0..s.span.1], s.text);
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("  The  Cat\tSat.  "), "the cat sat");
        assert_eq!(normalize_text("Why?!"), "why");
        assert_eq!(normalize_text("..."), "");
    }

    #[test]
    fn support_examples() {
        assert_eq!(support("B is Y.", "A is X. B is Y.", SupportFn::ExactNorm), 1.0);
        assert_eq!(support("C is Z.", "A is X. B is Y.", SupportFn::ExactNorm), 0.0);
        assert_eq!(
            support("alpha beta", "gamma delta", SupportFn::TokenF1 { tau: 0.6 }),
            0.0
        );
        let f = support("a b c", "x y. a b d", SupportFn::TokenF1 { tau: 1.0 });
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        let capped = support("a b c", "a b d", SupportFn::TokenF1 { tau: 0.6 });
        assert_eq!(capped, 1.0);
    }

    #[test]
    fn support_fn_parsing() {
        assert_eq!("exact".parse::<SupportFn>().unwrap(), SupportFn::ExactNorm);
        assert_eq!(
            "f1:0.5".parse::<SupportFn>().unwrap(),
            SupportFn::TokenF1 { tau: 0.5 }
        );
        assert_eq!(SupportFn::default(), SupportFn::TokenF1 { tau: 0.6 });
        assert!("f1:0".parse::<SupportFn>().is_err());
        assert!("judge".parse::<SupportFn>().is_err());
    }

    #[test]
    fn hand_computed_two_by_two() {
        let st = vec![
            Statement {
                text: "s1".into(),
                span: (0, 2),
            },
            Statement {
                text: "s2".into(),
                span: (3, 5),
            },
        ];
        let r = report_from_matrix(st, vec![vec![1.0, 0.0], vec![0.0, 0.0]], SupportFn::ExactNorm).unwrap();
        assert_eq!(r.score, 0.25);
        assert_eq!(r.statement_scores, vec![0.5, 0.0]);
        assert_eq!(r.response_scores, vec![0.5, 0.0]);
    }

    #[test]
    fn self_support_is_one() {
        let y = "Paris is the capital. It is in France.";
        let r = factuality_score(y, &[y, y, y], SupportFn::ExactNorm).unwrap();
        assert_eq!(r.score, 1.0);
    }

    #[test]
    fn single_cell() {
        let r = factuality_score("a b c", &["a b d"], SupportFn::TokenF1 { tau: 1.0 }).unwrap();
        assert_eq!(r.score, r.matrix[0][0]);
    }

    #[test]
    fn errors() {
        assert!(factuality_score("", &["x"], SupportFn::ExactNorm).is_err());
        assert!(factuality_score("x.", &[], SupportFn::ExactNorm).is_err());
        assert!(factuality_score_member(&["x"], 3, SupportFn::ExactNorm).is_err());
    }

    #[test]
    fn member_excludes_itself() {
        let rs = ["a is b.", "c is d.", "a is b."];
        let r = factuality_score_member(&rs, 0, SupportFn::ExactNorm).unwrap();
        assert_eq!(r.matrix[0], vec![0.0, 1.0]);
    }
}
