//! Response sampling: greedy, temperature and nucleus strategies.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::LmBackend;
use crate::error::{Error, Result};
use crate::numeric::log_softmax;
use crate::rng::{make_rng, StreamRng};
use crate::types::{LogProbDist, TokenId, TokenSeq};

/// Temperature used for response collection unless overridden.
pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    Greedy,
    Temperature(f64),
    Nucleus(f64),
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::Temperature(DEFAULT_TEMPERATURE)
    }
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Strategy::Greedy => Ok(()),
            Strategy::Temperature(t) if t > 0.0 && t.is_finite() => Ok(()),
            Strategy::Temperature(t) => Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {t}"
            ))),
            Strategy::Nucleus(p) if p > 0.0 && p <= 1.0 => Ok(()),
            Strategy::Nucleus(p) => Err(Error::InvalidConfig(format!(
                "nucleus mass must be in (0, 1], got {p}"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Greedy => f.write_str("greedy"),
            Strategy::Temperature(t) => write!(f, "temp:{t}"),
            Strategy::Nucleus(p) => write!(f, "nucleus:{p}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad strategy {s:?} (greedy|temp:T|nucleus:P)"));
        let strategy = match s.split_once(':') {
            None if s == "greedy" => Strategy::Greedy,
            Some(("temp", v)) => Strategy::Temperature(v.parse().map_err(|_| bad())?),
            Some(("nucleus", v)) => Strategy::Nucleus(v.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub strategy: Strategy,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max_new_tokens must be at least 1".into()));
        }
        self.strategy.validate()
    }
}

/// One sampled response `r_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledResponse {
    pub index: usize,
    /// Generated tokens, ending in eos unless `truncated`.
    pub tokens: TokenSeq,
    /// Detokenized tokens without the eos.
    pub text: String,
    pub strategy: Strategy,
    pub stream_label: String,
    /// Stopped at `max_new_tokens` without emitting eos.
    pub truncated: bool,
}

pub fn stream_label(index: usize) -> String {
    format!("branch-{index}")
}

/// Tokens kept by nucleus filtering, as `(id, probability)` in descending
/// probability order (ties by id): the shortest such prefix whose mass
/// reaches `p`. If rounding keeps the running mass below `p`, every token
/// with non-zero probability is kept.
pub fn nucleus_support(probs: &[f64], p: f64) -> Vec<(TokenId, f64)> {
    let mut order: Vec<(TokenId, f64)> = probs
        .iter()
        .enumerate()
        .filter(|(_, &q)| q > 0.0)
        .map(|(i, &q)| (i as TokenId, q))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut mass = 0.0;
    for (n, &(_, q)) in order.iter().enumerate() {
        mass += q;
        if mass >= p {
            order.truncate(n + 1);
            break;
        }
    }
    order
}

/// Walks cumulative weights until they pass `u * total`.
fn pick(weights: impl Iterator<Item = (TokenId, f64)> + Clone, u: f64) -> TokenId {
    let total: f64 = weights.clone().map(|(_, w)| w).sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = None;
    for (id, w) in weights {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = Some(id);
        if acc > target {
            return id;
        }
    }
    last.expect("at least one positive weight")
}

/// Tempered probabilities `softmax(logprobs / T)`.
pub fn tempered_probs(dist: &LogProbDist, temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = dist.values().iter().map(|v| v / temperature).collect();
    log_softmax(&scaled).into_iter().map(f64::exp).collect()
}

/// Draws one token from `dist`. Greedy consumes no randomness.
pub fn draw_token(dist: &LogProbDist, strategy: Strategy, rng: &mut StreamRng) -> TokenId {
    match strategy {
        Strategy::Greedy => dist.argmax(),
        Strategy::Temperature(t) => {
            let probs = tempered_probs(dist, t);
            let u = rng.next_f64();
            pick(probs.iter().enumerate().map(|(i, &q)| (i as TokenId, q)), u)
        }
        Strategy::Nucleus(p) => {
            let support = nucleus_support(&dist.probs(), p);
            let u = rng.next_f64();
            pick(support.iter().copied(), u)
        }
    }
}

pub fn sample_one(
    backend: &dyn LmBackend,
    prompt: &[TokenId],
    spec: &SamplingSpec,
    rng: &mut StreamRng,
    index: usize,
) -> Result<SampledResponse> {
    spec.validate()?;
    let eos = backend.vocab().eos_id();
    let mut ctx = prompt.to_vec();
    let mut tokens = TokenSeq::new();
    let mut truncated = true;
    for _ in 0..spec.max_new_tokens {
        let dist = backend.next_logprobs(&ctx)?;
        let tok = draw_token(&dist, spec.strategy, rng);
        tokens.push(tok);
        ctx.push(tok);
        if tok == eos {
            truncated = false;
            break;
        }
    }
    let text = backend.detokenize(tokens.without_eos(eos))?;
    Ok(SampledResponse {
        index,
        tokens,
        text,
        strategy: spec.strategy,
        stream_label: stream_label(index),
        truncated,
    })
}

/// Samples `k` responses; response `j` draws from stream `branch-j` of
/// `spec.seed`, so results do not depend on scheduling.
pub fn sample_k(
    backend: &dyn LmBackend,
    prompt: &[TokenId],
    k: usize,
    spec: &SamplingSpec,
) -> Result<Vec<SampledResponse>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    spec.validate()?;
    (0..k)
        .into_par_iter()
        .map(|j| {
            let mut rng = make_rng(spec.seed, &stream_label(j));
            sample_one(backend, prompt, spec, &mut rng, j)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_parsing() {
        assert_eq!("greedy".parse::<Strategy>().unwrap(), Strategy::Greedy);
        assert_eq!(
            "temp:0.7".parse::<Strategy>().unwrap(),
            Strategy::Temperature(0.7)
        );
        assert_eq!(
            "nucleus:0.95".parse::<Strategy>().unwrap(),
            Strategy::Nucleus(0.95)
        );
        assert!("temp:0".parse::<Strategy>().is_err());
        assert!("nucleus:1.5".parse::<Strategy>().is_err());
        assert!("nucleus:0".parse::<Strategy>().is_err());
        assert!("beam:4".parse::<Strategy>().is_err());
        let s = Strategy::Nucleus(0.9);
        assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        assert_eq!(Strategy::default(), Strategy::Temperature(0.7));
    }

    #[test]
    fn nucleus_worked_example() {
        let support = nucleus_support(&[0.5, 0.3, 0.15, 0.05], 0.9);
        let ids: Vec<TokenId> = support.iter().map(|x| x.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        let total: f64 = support.iter().map(|x| x.1).sum();
        let renorm: Vec<f64> = support.iter().map(|x| x.1 / total).collect();
        for (got, want) in renorm.iter().zip([10.0 / 19.0, 6.0 / 19.0, 3.0 / 19.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn nucleus_full_mass_keeps_nonzero_support() {
        let support = nucleus_support(&[0.1, 0.0, 0.6, 0.3], 1.0);
        let mut ids: Vec<TokenId> = support.iter().map(|x| x.0).collect();
        ids.sort();
        assert_eq!(ids, vec![0, 2, 3]);
    }

    #[test]
    fn nucleus_ties_by_id() {
        let support = nucleus_support(&[0.25, 0.25, 0.25, 0.25], 0.5);
        assert_eq!(support.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn tiny_temperature_is_greedy() {
        let dist = LogProbDist::from_probs(&[0.2, 0.5, 0.3]).unwrap();
        let mut rng = make_rng(3, "t");
        let hits = (0..10_000)
            .filter(|_| draw_token(&dist, Strategy::Temperature(1e-9), &mut rng) == 1)
            .count();
        assert_eq!(hits, 10_000);
    }

    #[test]
    fn greedy_uses_no_randomness() {
        let dist = LogProbDist::from_probs(&[0.2, 0.5, 0.3]).unwrap();
        let mut a = make_rng(3, "t");
        let b = a.clone();
        assert_eq!(draw_token(&dist, Strategy::Greedy, &mut a), 1);
        assert_eq!(a.clone().next_u64(), b.clone().next_u64());
    }
}
