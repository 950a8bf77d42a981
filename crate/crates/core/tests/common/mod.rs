//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use idec_core::backend::{LmBackend, ToyTableLm};
use idec_core::rng::{make_rng, StreamRng};
use idec_core::sampler::{nucleus_support, SampledResponse, Strategy};
use idec_core::{TokenId, TokenSeq, Vocab};

pub const EOS: TokenId = 0;
pub const SEP: TokenId = 1;
pub const ITEM: TokenId = 2;

/// `</s>`, then `<sep>`/`<item>` when `separators`, then `w3`, `w4`, ...
pub fn vocab(size: usize, separators: bool) -> Vocab {
    let mut tokens = vec!["</s>".to_string()];
    let first_word = if separators {
        tokens.push("<sep>".into());
        tokens.push("<item>".into());
        3
    } else {
        1
    };
    tokens.extend((first_word..size).map(|i| format!("w{i}")));
    let seps = if separators { vec![SEP, ITEM] } else { vec![] };
    Vocab::with_tokens(tokens, EOS, None, seps).unwrap()
}

/// Every context of length `len` over `size` tokens.
pub fn contexts(size: usize, len: usize) -> Vec<Vec<TokenId>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|c| {
                (0..size as TokenId).map(move |t| {
                    let mut c = c.clone();
                    c.push(t);
                    c
                })
            })
            .collect();
    }
    out
}

/// Random row with a floor so no entry is zero; `sharp` raises weights to
/// a power to make rows peakier.
pub fn random_row(rng: &mut StreamRng, size: usize, sharp: f64) -> Vec<f64> {
    (0..size).map(|_| (rng.next_f64() + 0.01).powf(sharp)).collect()
}

/// A fully specified order-`order` table: one row per context of length
/// `order - 1`, plus a unigram row.
pub fn random_table(seed: u64, size: usize, order: usize, separators: bool) -> ToyTableLm {
    let mut rng = make_rng(seed, "fixture-table");
    let mut rows = vec![(Vec::new(), random_row(&mut rng, size, 2.0))];
    if order > 1 {
        for ctx in contexts(size, order - 1) {
            rows.push((ctx, random_row(&mut rng, size, 2.0)));
        }
    }
    ToyTableLm::new(vocab(size, separators), order, rows).unwrap()
}

/// Random non-eos token sequence.
pub fn random_tokens(rng: &mut StreamRng, size: usize, len: usize) -> TokenSeq {
    TokenSeq(
        (0..len)
            .map(|_| 1 + rng.below(size as u64 - 1) as TokenId)
            .collect(),
    )
}

pub fn response(index: usize, tokens: Vec<TokenId>, backend: &dyn LmBackend) -> SampledResponse {
    let eos = backend.vocab().eos_id();
    let tokens = TokenSeq(tokens);
    let truncated = tokens.last() != Some(eos);
    SampledResponse {
        index,
        text: backend.detokenize(tokens.without_eos(eos)).unwrap(),
        tokens,
        strategy: Strategy::Greedy,
        stream_label: format!("branch-{index}"),
        truncated,
    }
}

/// Best summed-branch objective over all outputs of length <= 2 that end
/// at eos or at the length cap, by direct enumeration with naive sums.
pub fn brute_force_best(backend: &dyn LmBackend, inputs: &[TokenSeq]) -> (Vec<TokenId>, f64) {
    let size = backend.vocab().size() as TokenId;
    let eos = backend.vocab().eos_id();
    let score = |y: &[TokenId]| -> f64 {
        let mut total = 0.0;
        for q in inputs {
            for t in 0..y.len() {
                let mut ctx = q.0.clone();
                ctx.extend_from_slice(&y[..t]);
                total += backend.next_logprobs(&ctx).unwrap().get(y[t]);
            }
        }
        total
    };
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for a in 0..size {
        let candidates: Vec<Vec<TokenId>> = if a == eos {
            vec![vec![a]]
        } else {
            (0..size).map(|b| vec![a, b]).collect()
        };
        for y in candidates {
            let s = score(&y);
            if s > best.1 {
                best = (y, s);
            }
        }
    }
    best
}

/// `p^(1/T)` renormalized.
pub fn tempered(probs: &[f64], temperature: f64) -> Vec<f64> {
    let w: Vec<f64> = probs.iter().map(|p| p.powf(1.0 / temperature)).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

fn compositions(k: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if parts == 1 {
        prefix.push(k);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for c in 0..=k {
        prefix.push(c);
        compositions(k - c, parts - 1, prefix, out);
        prefix.pop();
    }
}

/// Probability that answer 0 is the plurality of `k` i.i.d. draws from
/// `probs`, by exact enumeration of the multinomial count vectors. Ties
/// that include answer 0 count as wins (the base model's mode breaks them).
pub fn plurality_oracle(probs: &[f64], k: usize) -> f64 {
    let mut all = Vec::new();
    compositions(k, probs.len(), &mut Vec::new(), &mut all);
    let mut total = 0.0;
    for counts in all {
        let top = *counts.iter().max().unwrap();
        if counts[0] != top {
            continue;
        }
        let mut ln_p = ln_factorial(k);
        for (c, p) in counts.iter().zip(probs) {
            ln_p -= ln_factorial(*c);
            if *c > 0 {
                ln_p += *c as f64 * p.ln();
            }
        }
        total += ln_p.exp();
    }
    total
}

/// Support-set property checked without reference to the implementation:
/// kept tokens reach the mass, dropping the smallest kept one does not,
/// and nothing dropped outranks anything kept.
pub fn check_nucleus(probs: &[f64], p: f64) -> Result<(), String> {
    let support = nucleus_support(probs, p);
    let kept: Vec<usize> = support.iter().map(|(i, _)| *i as usize).collect();
    let mass: f64 = kept.iter().map(|&i| probs[i]).sum();
    let positive = probs.iter().filter(|&&q| q > 0.0).count();
    if support.is_empty() {
        return Err("empty support".into());
    }
    if mass < p - 1e-12 && kept.len() != positive {
        return Err(format!("mass {mass} below {p}"));
    }
    let smallest = kept.iter().map(|&i| probs[i]).fold(f64::INFINITY, f64::min);
    if mass - smallest >= p + 1e-12 {
        return Err(format!("support not minimal: {mass} - {smallest} >= {p}"));
    }
    for (i, &q) in probs.iter().enumerate() {
        if !kept.contains(&i) && q > smallest {
            return Err(format!("dropped token {i} ({q}) outranks kept ({smallest})"));
        }
    }
    Ok(())
}
