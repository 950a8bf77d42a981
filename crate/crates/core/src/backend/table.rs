use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{whitespace_detokenize, whitespace_tokenize, LmBackend, ToyCopyLm};
use crate::error::{Error, Result};
use crate::types::{LogProbDist, TokenId, TokenSeq, Vocab};

/// Tolerance for stored probability rows after re-normalization.
const ROW_TOLERANCE: f64 = 1e-9;

/// A decimal probability as written in a model file. Strings are the
/// canonical form; bare numbers are accepted for hand-written fixtures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Decimal {
    Text(String),
    Number(f64),
}

impl Decimal {
    fn value(&self) -> Result<f64> {
        match self {
            Decimal::Text(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidModel(format!("not a decimal: {s:?}"))),
            Decimal::Number(x) => Ok(*x),
        }
    }
}

impl From<f64> for Decimal {
    fn from(x: f64) -> Self {
        Decimal::Text(format!("{x}"))
    }
}

/// A probability row: either dense (one entry per token) or sparse
/// (`{"token id": probability}`, unlisted tokens zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Row {
    Dense(Vec<Decimal>),
    Sparse(BTreeMap<String, Decimal>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backoff {
    #[default]
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopySpec {
    pub beta: f64,
}

/// The on-disk toy model: `{vocab, order, rows, backoff}` plus an optional
/// `copy` block that turns the table into a [`ToyCopyLm`].
///
/// Row keys are space-joined context ids (`""` for the unigram row).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModelFile {
    pub vocab: Vocab,
    pub order: usize,
    pub rows: BTreeMap<String, Row>,
    #[serde(default)]
    pub backoff: Backoff,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub copy: Option<CopySpec>,
}

impl ToyModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn into_backend(self) -> Result<Box<dyn LmBackend>> {
        let copy = self.copy.clone();
        let table = ToyTableLm::from_file(self)?;
        Ok(match copy {
            Some(c) => Box::new(ToyCopyLm::new(table, c.beta)?),
            None => Box::new(table),
        })
    }
}

/// An n-gram lookup table with suffix backoff and a uniform floor.
#[derive(Clone, Debug)]
pub struct ToyTableLm {
    vocab: Vocab,
    order: usize,
    rows: HashMap<Vec<TokenId>, LogProbDist>,
    uniform: LogProbDist,
}

impl ToyTableLm {
    /// Builds a table from probability rows keyed by context. Rows are
    /// re-normalized; contexts longer than `order - 1` are rejected.
    pub fn new(
        vocab: Vocab,
        order: usize,
        rows: impl IntoIterator<Item = (Vec<TokenId>, Vec<f64>)>,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidModel("order must be at least 1".into()));
        }
        let size = vocab.size();
        let mut table = HashMap::new();
        for (ctx, probs) in rows {
            if ctx.len() > order - 1 {
                return Err(Error::InvalidModel(format!(
                    "context {ctx:?} longer than order {order} allows"
                )));
            }
            vocab.check(&ctx)?;
            if probs.len() != size {
                return Err(Error::VocabMismatch {
                    expected: size,
                    actual: probs.len(),
                });
            }
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidModel(format!("bad probability in row {ctx:?}")));
            }
            let total: f64 = probs.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidModel(format!("row {ctx:?} has no mass")));
            }
            let normalized: Vec<f64> = probs.iter().map(|p| p / total).collect();
            let check: f64 = normalized.iter().sum();
            if (check - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::InvalidModel(format!("row {ctx:?} does not normalize")));
            }
            let dist = LogProbDist::from_probs(&normalized)?;
            if table.insert(ctx.clone(), dist).is_some() {
                return Err(Error::InvalidModel(format!("duplicate row {ctx:?}")));
            }
        }
        Ok(ToyTableLm {
            uniform: LogProbDist::uniform(size),
            vocab,
            order,
            rows: table,
        })
    }

    pub fn from_file(file: ToyModelFile) -> Result<Self> {
        let size = file.vocab.size();
        let mut rows = Vec::with_capacity(file.rows.len());
        for (key, row) in &file.rows {
            let ctx = parse_context(key)?;
            let probs = match row {
                Row::Dense(v) => v.iter().map(Decimal::value).collect::<Result<Vec<_>>>()?,
                Row::Sparse(m) => {
                    let mut probs = vec![0.0; size];
                    for (id, p) in m {
                        let id: usize = id
                            .parse()
                            .map_err(|_| Error::InvalidModel(format!("bad token id {id:?}")))?;
                        if id >= size {
                            return Err(Error::TokenOutOfRange {
                                id: id as TokenId,
                                size,
                            });
                        }
                        probs[id] = p.value()?;
                    }
                    probs
                }
            };
            rows.push((ctx, probs));
        }
        ToyTableLm::new(file.vocab, file.order, rows)
    }

    /// Serializes back to the file format with dense decimal-string rows.
    pub fn to_file(&self) -> ToyModelFile {
        let rows = self
            .rows
            .iter()
            .map(|(ctx, dist)| {
                let key = ctx.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ");
                let row = Row::Dense(dist.probs().into_iter().map(Decimal::from).collect());
                (key, row)
            })
            .collect();
        ToyModelFile {
            vocab: self.vocab.clone(),
            order: self.order,
            rows,
            backoff: Backoff::Uniform,
            copy: None,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// The row for the longest stored suffix of `prefix`, else uniform.
    pub fn row(&self, prefix: &[TokenId]) -> &LogProbDist {
        let max_ctx = (self.order - 1).min(prefix.len());
        (0..=max_ctx)
            .rev()
            .find_map(|n| self.rows.get(&prefix[prefix.len() - n..]))
            .unwrap_or(&self.uniform)
    }
}

fn parse_context(key: &str) -> Result<Vec<TokenId>> {
    key.split_whitespace()
        .map(|t| {
            t.parse::<TokenId>()
                .map_err(|_| Error::InvalidModel(format!("bad context key {key:?}")))
        })
        .collect()
}

impl LmBackend for ToyTableLm {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_logprobs(&self, prefix: &[TokenId]) -> Result<LogProbDist> {
        self.vocab.check(prefix)?;
        Ok(self.row(prefix).clone())
    }

    fn tokenize(&self, text: &str) -> Result<TokenSeq> {
        whitespace_tokenize(&self.vocab, text)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        whitespace_detokenize(&self.vocab, tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab4() -> Vocab {
        Vocab::with_tokens(
            ["</s>", "a", "b", "c"].map(String::from).to_vec(),
            0,
            None,
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn unseen_context_is_uniform() {
        let lm = ToyTableLm::new(vocab4(), 2, vec![(vec![1], vec![0.0, 0.0, 1.0, 0.0])]).unwrap();
        let d = lm.next_logprobs(&[2]).unwrap();
        for v in d.values() {
            assert_eq!(*v, -(4f64).ln());
        }
    }

    #[test]
    fn longest_suffix_wins() {
        let lm = ToyTableLm::new(
            vocab4(),
            3,
            vec![
                (vec![], vec![1.0, 1.0, 1.0, 1.0]),
                (vec![1], vec![0.0, 1.0, 0.0, 0.0]),
                (vec![2, 1], vec![0.0, 0.0, 0.0, 1.0]),
            ],
        )
        .unwrap();
        assert_eq!(lm.next_logprobs(&[2, 1]).unwrap().argmax(), 3);
        assert_eq!(lm.next_logprobs(&[3, 1]).unwrap().argmax(), 1);
        assert_eq!(lm.next_logprobs(&[3]).unwrap().get(0), 0.25f64.ln());
    }

    #[test]
    fn rows_are_renormalized() {
        let lm = ToyTableLm::new(vocab4(), 1, vec![(vec![], vec![2.0, 2.0, 4.0, 0.0])]).unwrap();
        let p = lm.next_logprobs(&[]).unwrap().probs();
        assert!((p[2] - 0.5).abs() < 1e-12);
        assert_eq!(p[3], 0.0);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(ToyTableLm::new(vocab4(), 1, vec![(vec![], vec![1.0; 3])]).is_err());
        assert!(ToyTableLm::new(vocab4(), 1, vec![(vec![1], vec![1.0; 4])]).is_err());
        assert!(ToyTableLm::new(vocab4(), 2, vec![(vec![], vec![0.0; 4])]).is_err());
        assert!(ToyTableLm::new(vocab4(), 2, vec![(vec![], vec![-1.0, 1.0, 1.0, 1.0])]).is_err());
        assert!(ToyTableLm::new(vocab4(), 0, Vec::new()).is_err());
    }

    #[test]
    fn file_format_roundtrip() {
        let json = r#"{
            "vocab": {"tokens": ["</s>", "a", "b", "c"], "eos_id": 0},
            "order": 2,
            "rows": {
                "": ["0.1", "0.2", "0.3", "0.4"],
                "1": {"2": "3", "3": "1"}
            }
        }"#;
        let file: ToyModelFile = serde_json::from_str(json).unwrap();
        let lm = ToyTableLm::from_file(file).unwrap();
        let p = lm.next_logprobs(&[1]).unwrap().probs();
        assert!((p[2] - 0.75).abs() < 1e-12);
        let again = ToyTableLm::from_file(lm.to_file()).unwrap();
        for prefix in [&[][..], &[1], &[2], &[3, 1]] {
            let a = lm.next_logprobs(prefix).unwrap();
            let b = again.next_logprobs(prefix).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-12 || (x.is_infinite() && y.is_infinite()));
            }
        }
    }

    #[test]
    fn whitespace_tokenizer() {
        let lm = ToyTableLm::new(vocab4(), 1, Vec::new()).unwrap();
        assert_eq!(lm.tokenize(" a  c b ").unwrap(), TokenSeq(vec![1, 3, 2]));
        assert!(matches!(lm.tokenize("a z"), Err(Error::UnknownToken(_))));
        assert_eq!(lm.detokenize(&[1, 2]).unwrap(), "a b");
    }
}
