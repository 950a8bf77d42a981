//! Synthetic fact-QA task, per-method evaluation and k-sweeps.

mod report;
mod task;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::LmBackend;
use crate::baselines::{greedy_decode, sc_vote, sr_refine, usc_select, AnswerParser, Method};
use crate::consistency::{factuality_score, SupportFn};
use crate::decoder::id_decode;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sampler::{sample_k, SamplingSpec, Strategy};
use crate::types::{DecodeConfig, TieBreak, TokenId};

pub use report::{quantile, render_table, write_csv, write_jsonl, SummaryRow, SweepCell, SweepReport};
pub use task::{
    generate_task, SyntheticTask, TaskQuestion, TaskSpec, EOS, FIRST_ANSWER, ITEM_SEPARATOR, SEPARATOR,
};

pub const DEFAULT_K_GRID: [usize; 5] = [1, 4, 8, 12, 16];
/// Answers are one token plus eos.
pub const TASK_MAX_NEW_TOKENS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    pub k: usize,
    pub strategy: Strategy,
    pub max_new_tokens: usize,
}

impl MethodSpec {
    pub fn new(method: Method, k: usize, strategy: Strategy) -> Self {
        MethodSpec {
            method,
            k,
            strategy,
            max_new_tokens: TASK_MAX_NEW_TOKENS,
        }
    }

    /// Number of responses actually sampled; greedy always uses one.
    pub fn effective_k(&self) -> usize {
        if self.method == Method::Greedy {
            1
        } else {
            self.k
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max_new_tokens must be at least 1".into()));
        }
        self.strategy.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub question: usize,
    /// First generated token of the method's answer, if any.
    pub answer: Option<TokenId>,
    pub correct: bool,
    /// Factuality proxy of the answer against the sampled responses.
    pub f_score: Option<f64>,
    /// USC only: whether the selection fell back to response 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub usc_fallback: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub spec: MethodSpec,
    pub seed: u64,
    pub outcomes: Vec<QuestionOutcome>,
    pub accuracy: f64,
    pub f_mean: Option<f64>,
}

/// Sampling seed for one question. The method is deliberately not mixed
/// in, so methods at the same `k` see the same responses.
pub fn question_seed(base_seed: u64, k: usize, question: usize) -> u64 {
    derive_seed(base_seed, &["cell", &k.to_string(), &question.to_string()])
}

fn first_token(tokens: &[TokenId], eos: TokenId) -> Option<TokenId> {
    tokens.first().copied().filter(|&t| t != eos)
}

fn evaluate_question(
    task: &SyntheticTask,
    spec: &MethodSpec,
    base_seed: u64,
    index: usize,
) -> Result<QuestionOutcome> {
    let backend: &dyn LmBackend = &task.backend;
    let eos = backend.vocab().eos_id();
    let q = &task.questions[index];
    let k = spec.effective_k();
    let sampling = SamplingSpec {
        strategy: spec.strategy,
        max_new_tokens: spec.max_new_tokens,
        seed: question_seed(base_seed, k, index),
    };
    let prompt = task.template.build_base(backend, &q.text)?;
    let samples = sample_k(backend, &prompt, k, &sampling)?;

    let mut usc_fallback = None;
    let (answer, text) = match spec.method {
        Method::Greedy => {
            let r = greedy_decode(backend, &q.text, &task.template, spec.max_new_tokens)?;
            (first_token(&r.output, eos), r.text)
        }
        Method::Id => {
            let config = DecodeConfig {
                k,
                max_new_tokens: spec.max_new_tokens,
                sampling: sampling.clone(),
                seed: base_seed,
                tie_break: TieBreak::LowestTokenId,
                template_id: task.template.id.clone(),
            };
            let r = id_decode(backend, &q.text, &samples, &task.template, &config)?;
            (first_token(&r.output, eos), r.text)
        }
        Method::ScVote => match sc_vote(&samples, AnswerParser::LastToken, backend.vocab()) {
            Ok(v) => (backend.vocab().id_of(&v.winner), v.winner),
            Err(Error::EmptyInput(_)) => (None, String::new()),
            Err(e) => return Err(e),
        },
        Method::Usc => {
            let sel = usc_select(backend, &q.text, &samples, &task.template, spec.max_new_tokens)?;
            usc_fallback = Some(sel.fallback);
            let chosen = &samples[sel.index - 1];
            (first_token(&chosen.tokens, eos), sel.text)
        }
        Method::Sr => {
            let r = sr_refine(
                backend,
                &q.text,
                &samples,
                &task.template,
                spec.max_new_tokens,
                true,
            )?;
            (first_token(&r.output, eos), r.text)
        }
    };

    let sample_texts: Vec<&str> = samples.iter().map(|s| s.text.as_str()).collect();
    let f_score = match factuality_score(&text, &sample_texts, SupportFn::default()) {
        Ok(report) => Some(report.score),
        Err(Error::EmptyInput(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(QuestionOutcome {
        question: index,
        answer,
        correct: answer == Some(q.correct),
        f_score,
        usc_fallback,
    })
}

/// Evaluates one method on every question. Questions run in parallel;
/// outcomes are returned in question order.
pub fn run_method(task: &SyntheticTask, spec: &MethodSpec, base_seed: u64) -> Result<MethodRun> {
    spec.validate()?;
    let outcomes = (0..task.questions.len())
        .into_par_iter()
        .map(|i| evaluate_question(task, spec, base_seed, i))
        .collect::<Result<Vec<_>>>()?;
    let n = outcomes.len() as f64;
    let accuracy = outcomes.iter().filter(|o| o.correct).count() as f64 / n;
    let scores: Vec<f64> = outcomes.iter().filter_map(|o| o.f_score).collect();
    let f_mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    Ok(MethodRun {
        spec: spec.clone(),
        seed: base_seed,
        outcomes,
        accuracy,
        f_mean,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub k_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub strategy: Strategy,
    pub max_new_tokens: usize,
    /// Record wall-clock time per cell. Off by default because it makes
    /// reports differ between runs.
    #[serde(default)]
    pub record_timings: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            methods: vec![Method::Greedy, Method::Id],
            k_grid: DEFAULT_K_GRID.to_vec(),
            seeds: (0..5).collect(),
            strategy: Strategy::default(),
            max_new_tokens: TASK_MAX_NEW_TOKENS,
            record_timings: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method is required".into()));
        }
        if self.k_grid.is_empty() {
            return Err(Error::InvalidConfig("k grid must not be empty".into()));
        }
        if self.k_grid.contains(&0) {
            return Err(Error::InvalidConfig("k values must be at least 1".into()));
        }
        if self.seeds.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "a sweep needs at least 3 seeds, got {}",
                self.seeds.len()
            )));
        }
        self.strategy.validate()
    }
}

/// Evaluates every `(method, k, seed)` cell and summarizes across seeds.
pub fn k_sweep(task: &SyntheticTask, config: &SweepConfig) -> Result<SweepReport> {
    config.validate()?;
    let mut cells = Vec::new();
    for &method in &config.methods {
        for &k in &config.k_grid {
            let spec = MethodSpec {
                method,
                k,
                strategy: config.strategy,
                max_new_tokens: config.max_new_tokens,
            };
            for &seed in &config.seeds {
                let start = Instant::now();
                let run = run_method(task, &spec, seed)?;
                let runtime_ms = config.record_timings.then(|| start.elapsed().as_secs_f64() * 1e3);
                cells.push(SweepCell {
                    method,
                    k,
                    effective_k: spec.effective_k(),
                    seed,
                    accuracy: run.accuracy,
                    f_mean: run.f_mean,
                    runtime_ms,
                    n_questions: run.outcomes.len(),
                });
            }
        }
    }
    Ok(SweepReport::new(task.spec.clone(), config.clone(), cells))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(eps: f64) -> SyntheticTask {
        generate_task(&TaskSpec {
            n_questions: 20,
            answer_vocab: 4,
            error_rate: eps,
            copy_weight: 0.95,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn noiseless_task_is_solved_by_every_method() {
        let t = task(0.0);
        for method in Method::ALL {
            let run = run_method(&t, &MethodSpec::new(method, 4, Strategy::default()), 1).unwrap();
            if method == Method::Usc || method == Method::Sr {
                continue;
            }
            assert_eq!(run.accuracy, 1.0, "{method}");
        }
    }

    #[test]
    fn usc_picks_a_sample() {
        let t = task(0.0);
        let run = run_method(&t, &MethodSpec::new(Method::Usc, 3, Strategy::default()), 1).unwrap();
        assert_eq!(run.accuracy, 1.0);
        assert!(run.outcomes.iter().all(|o| o.usc_fallback.is_some()));
    }

    #[test]
    fn sweep_needs_three_seeds() {
        let t = task(0.4);
        let mut c = SweepConfig {
            seeds: vec![0, 1],
            ..SweepConfig::default()
        };
        assert!(k_sweep(&t, &c).is_err());
        c.seeds = vec![0, 1, 2];
        c.k_grid.clear();
        assert!(k_sweep(&t, &c).is_err());
    }

    #[test]
    fn question_seeds_differ() {
        assert_ne!(question_seed(1, 4, 0), question_seed(1, 4, 1));
        assert_ne!(question_seed(1, 4, 0), question_seed(1, 8, 0));
        assert_ne!(question_seed(1, 4, 0), question_seed(2, 4, 0));
    }
}
