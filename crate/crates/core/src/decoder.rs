//! Integrative decoding.
//!
//! Each branch holds one voting input `q_j`. At every step the decoder asks
//! the backend for each branch's next-token distribution given `q_j` plus
//! the shared output so far, sums the log-probabilities token-wise
//! (correctly rounded, so independent of branch order), takes the argmax
//! (lowest id on ties) and forces that token into every branch. Decoding
//! stops when the chosen token is eos or after `max_new_tokens` steps.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::LmBackend;
use crate::error::{Error, Result};
use crate::numeric::{argmax, exact_sum};
use crate::sampler::SampledResponse;
use crate::templating::TemplateSet;
use crate::types::{
    DecodeConfig, DecodeResult, LogProbDist, StepRecord, StopReason, TokenId, TokenSeq, TRACE_TOP_N,
};

/// Tolerance for re-computed values in [`replay_trace`].
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub values: Vec<f64>,
    pub argmax: TokenId,
}

/// Token-wise sum of branch log-probabilities. Each sum is correctly
/// rounded, so the values do not depend on branch order and tied vote
/// counts stay exactly tied.
pub fn aggregate(dists: &[LogProbDist]) -> Result<Aggregate> {
    let first = dists.first().ok_or(Error::EmptyInput("distributions"))?;
    let size = first.len();
    if let Some(d) = dists.iter().find(|d| d.len() != size) {
        return Err(Error::VocabMismatch {
            expected: size,
            actual: d.len(),
        });
    }
    let values: Vec<f64> = (0..size)
        .map(|i| exact_sum(dists.iter().map(|d| d.values()[i])))
        .collect();
    let argmax = argmax(&values).unwrap_or(0);
    Ok(Aggregate { values, argmax })
}

/// The `n` largest entries as `(id, value)`, descending, ties by id.
pub fn top_n(values: &[f64], n: usize) -> Vec<(TokenId, f64)> {
    let mut all: Vec<(TokenId, f64)> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as TokenId, v))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(n);
    all
}

#[derive(Clone, Debug)]
struct Branch {
    input: TokenSeq,
    suffix: Vec<TokenId>,
}

impl Branch {
    fn context(&self) -> Vec<TokenId> {
        self.input.concat(&self.suffix).0
    }
}

fn query_all(backend: &dyn LmBackend, branches: &[Branch]) -> Result<Vec<LogProbDist>> {
    branches
        .par_iter()
        .map(|b| backend.next_logprobs(&b.context()))
        .collect()
}

fn finish(
    backend: &dyn LmBackend,
    branches: &[Branch],
    output: TokenSeq,
    stop_reason: StopReason,
    trace: Vec<StepRecord>,
) -> Result<DecodeResult> {
    let eos = backend.vocab().eos_id();
    let text = backend.detokenize(output.without_eos(eos))?;
    Ok(DecodeResult {
        output,
        text,
        stop_reason,
        branch_inputs: branches.iter().map(|b| b.input.clone()).collect(),
        trace,
    })
}

/// Runs the lockstep decode over explicit branch inputs.
pub fn decode_branches(
    backend: &dyn LmBackend,
    branch_inputs: Vec<TokenSeq>,
    max_new_tokens: usize,
) -> Result<DecodeResult> {
    if branch_inputs.is_empty() {
        return Err(Error::EmptyInput("branch inputs"));
    }
    if max_new_tokens == 0 {
        return Err(Error::InvalidConfig("max_new_tokens must be at least 1".into()));
    }
    let vocab = backend.vocab();
    for q in &branch_inputs {
        vocab.check(q)?;
    }
    let eos = vocab.eos_id();
    let mut branches: Vec<Branch> = branch_inputs
        .into_iter()
        .map(|input| Branch {
            input,
            suffix: Vec::new(),
        })
        .collect();
    let mut output = TokenSeq::new();
    let mut trace = Vec::new();

    for step in 0..max_new_tokens {
        let dists = match query_all(backend, &branches) {
            Ok(d) => d,
            Err(source) => {
                let partial = DecodeResult {
                    text: String::new(),
                    stop_reason: StopReason::MaxLen,
                    branch_inputs: branches.iter().map(|b| b.input.clone()).collect(),
                    output,
                    trace,
                };
                return Err(Error::Decode {
                    partial: Box::new(partial),
                    source: Box::new(source),
                });
            }
        };
        let agg = aggregate(&dists)?;
        let chosen = agg.argmax;
        trace.push(StepRecord {
            step,
            chosen,
            branch_logprobs: dists.iter().map(|d| d.get(chosen)).collect(),
            branch_digests: dists.iter().map(LogProbDist::digest).collect(),
            top: top_n(&agg.values, TRACE_TOP_N),
        });
        for b in &mut branches {
            b.suffix.push(chosen);
        }
        debug_assert!(branches.iter().all(|b| b.suffix == branches[0].suffix));
        output.push(chosen);
        if chosen == eos {
            return finish(backend, &branches, output, StopReason::Eos, trace);
        }
    }
    finish(backend, &branches, output, StopReason::MaxLen, trace)
}

/// Integrative decoding of `question` against the sampled `responses`.
pub fn id_decode(
    backend: &dyn LmBackend,
    question: &str,
    responses: &[SampledResponse],
    template: &TemplateSet,
    config: &DecodeConfig,
) -> Result<DecodeResult> {
    config.validate()?;
    if responses.len() != config.k {
        return Err(Error::InvalidConfig(format!(
            "expected {} responses, got {}",
            config.k,
            responses.len()
        )));
    }
    let inputs = responses
        .iter()
        .map(|r| template.build_id_input(backend, question, r))
        .collect::<Result<Vec<_>>>()?;
    decode_branches(backend, inputs, config.max_new_tokens)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ReplayReport {
    Verified { steps: usize },
    Diverged { step: usize, reason: String },
}

impl ReplayReport {
    pub fn is_verified(&self) -> bool {
        matches!(self, ReplayReport::Verified { .. })
    }
}

/// Recomputes every recorded step from the branch inputs and the recorded
/// output, and reports the first step that does not match.
pub fn replay_trace(result: &DecodeResult, backend: &dyn LmBackend) -> Result<ReplayReport> {
    let diverged = |step: usize, reason: String| Ok(ReplayReport::Diverged { step, reason });
    if result.trace.len() != result.output.len() {
        return diverged(
            result.trace.len().min(result.output.len()),
            format!(
                "trace has {} steps for {} output tokens",
                result.trace.len(),
                result.output.len()
            ),
        );
    }
    let k = result.branch_inputs.len();
    for (t, rec) in result.trace.iter().enumerate() {
        if rec.step != t {
            return diverged(t, format!("step index {} recorded at position {t}", rec.step));
        }
        if rec.chosen != result.output[t] {
            return diverged(
                t,
                format!("trace chose {} but output has {}", rec.chosen, result.output[t]),
            );
        }
        if rec.branch_logprobs.len() != k || rec.branch_digests.len() != k {
            return diverged(t, format!("expected {k} branch entries"));
        }
        let shared = &result.output[..t];
        let dists = result
            .branch_inputs
            .iter()
            .map(|q| backend.next_logprobs(&q.concat(shared)))
            .collect::<Result<Vec<_>>>()?;
        let agg = aggregate(&dists)?;
        if agg.argmax != rec.chosen {
            return diverged(
                t,
                format!("recomputed argmax {} != recorded {}", agg.argmax, rec.chosen),
            );
        }
        for (j, d) in dists.iter().enumerate() {
            let v = d.get(rec.chosen);
            if !close(v, rec.branch_logprobs[j]) {
                return diverged(
                    t,
                    format!("branch {j}: log-prob {v} != recorded {}", rec.branch_logprobs[j]),
                );
            }
            if d.digest() != rec.branch_digests[j] {
                return diverged(t, format!("branch {j}: distribution digest differs"));
            }
        }
        let top = top_n(&agg.values, rec.top.len());
        for ((id, v), (rid, rv)) in top.iter().zip(&rec.top) {
            if id != rid || !close(*v, *rv) {
                return diverged(
                    t,
                    format!("aggregated candidate ({id}, {v}) != recorded ({rid}, {rv})"),
                );
            }
        }
    }
    let eos = backend.vocab().eos_id();
    let ends_in_eos = result.output.last() == Some(eos);
    if ends_in_eos != (result.stop_reason == StopReason::Eos) {
        return diverged(
            result.output.len(),
            format!("stop reason {} inconsistent with output", result.stop_reason),
        );
    }
    Ok(ReplayReport::Verified {
        steps: result.trace.len(),
    })
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= REPLAY_TOLERANCE
}

/// Writes one step record per line.
pub fn write_trace_jsonl<W: Write>(trace: &[StepRecord], mut out: W) -> Result<()> {
    for rec in trace {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace_jsonl<R: BufRead>(input: R) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
