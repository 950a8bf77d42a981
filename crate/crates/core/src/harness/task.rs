use serde::{Deserialize, Serialize};

use crate::backend::{LmBackend, ToyCopyLm, ToyTableLm};
use crate::error::{Error, Result};
use crate::rng::make_rng;
use crate::templating::TemplateSet;
use crate::types::{TokenId, Vocab};

pub const EOS: TokenId = 0;
pub const SEPARATOR: TokenId = 1;
pub const ITEM_SEPARATOR: TokenId = 2;
pub const FIRST_ANSWER: TokenId = 3;

/// Parameters of a synthetic single-token fact-QA benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub n_questions: usize,
    /// Number of candidate answers `m`.
    pub answer_vocab: usize,
    /// Probability mass the base model puts on wrong answers, `ε`.
    pub error_rate: f64,
    /// Copy weight `β` of the voting-input model.
    pub copy_weight: f64,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.answer_vocab < 2 {
            return Err(Error::InvalidConfig("answer_vocab must be at least 2".into()));
        }
        if self.n_questions == 0 {
            return Err(Error::InvalidConfig("n_questions must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.error_rate) {
            return Err(Error::InvalidConfig("error_rate must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.copy_weight) {
            return Err(Error::InvalidConfig("copy_weight must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Majority voting can only help while the correct answer stays the
    /// base model's mode.
    pub fn voting_helps(&self) -> bool {
        self.error_rate < 1.0 - 1.0 / self.answer_vocab as f64
    }

    /// The base answer-slot distribution with the correct answer first.
    pub fn answer_probs(&self) -> Vec<f64> {
        let m = self.answer_vocab;
        let mut p = vec![self.error_rate / (m - 1) as f64; m];
        p[0] = 1.0 - self.error_rate;
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskQuestion {
    pub text: String,
    pub token: TokenId,
    pub correct: TokenId,
}

/// A generated task with its materialized backend.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub spec: TaskSpec,
    pub questions: Vec<TaskQuestion>,
    pub backend: ToyCopyLm,
    pub template: TemplateSet,
}

impl SyntheticTask {
    pub fn answer_tokens(&self) -> std::ops::Range<TokenId> {
        FIRST_ANSWER..FIRST_ANSWER + self.spec.answer_vocab as TokenId
    }
}

/// Builds the vocabulary `[</s>, <sep>, <item>, a0.., q0..]` and an order-3
/// table whose row after `(q_i, <sep>)` puts `1 - ε` on the question's
/// correct answer and `ε / (m - 1)` on each other answer; every answer is
/// followed by eos. Correct answers are drawn uniformly from the seed.
pub fn generate_task(spec: &TaskSpec) -> Result<SyntheticTask> {
    spec.validate()?;
    let m = spec.answer_vocab;
    let n = spec.n_questions;
    let mut tokens: Vec<String> = vec!["</s>".into(), "<sep>".into(), "<item>".into()];
    tokens.extend((0..m).map(|a| format!("a{a}")));
    tokens.extend((0..n).map(|q| format!("q{q}")));
    let vocab = Vocab::with_tokens(tokens, EOS, None, vec![SEPARATOR, ITEM_SEPARATOR])?;
    let size = vocab.size();
    let first_question = FIRST_ANSWER + m as TokenId;

    let mut rng = make_rng(spec.seed, "task-answers");
    let wrong = spec.error_rate / (m - 1) as f64;
    let mut rows = Vec::with_capacity(n + m);
    let mut questions = Vec::with_capacity(n);
    for q in 0..n {
        let correct = FIRST_ANSWER + rng.below(m as u64) as TokenId;
        let token = first_question + q as TokenId;
        let mut row = vec![0.0; size];
        for a in FIRST_ANSWER..FIRST_ANSWER + m as TokenId {
            row[a as usize] = if a == correct {
                1.0 - spec.error_rate
            } else {
                wrong
            };
        }
        rows.push((vec![token, SEPARATOR], row));
        questions.push(TaskQuestion {
            text: format!("q{q}"),
            token,
            correct,
        });
    }
    for a in FIRST_ANSWER..FIRST_ANSWER + m as TokenId {
        let mut row = vec![0.0; size];
        row[EOS as usize] = 1.0;
        rows.push((vec![SEPARATOR, a], row));
    }
    let base = ToyTableLm::new(vocab, 3, rows)?;
    let backend = ToyCopyLm::new(base, spec.copy_weight)?;
    debug_assert_eq!(backend.vocab().size(), size);
    Ok(SyntheticTask {
        spec: spec.clone(),
        questions,
        backend,
        template: TemplateSet::builtin("toy")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(eps: f64) -> TaskSpec {
        TaskSpec {
            n_questions: 5,
            answer_vocab: 4,
            error_rate: eps,
            copy_weight: 0.9,
            seed: 11,
        }
    }

    #[test]
    fn answer_slot_rows() {
        let task = generate_task(&spec(0.4)).unwrap();
        for q in &task.questions {
            let prompt = task.template.build_base(&task.backend, &q.text).unwrap();
            let p = task.backend.next_logprobs(&prompt).unwrap().probs();
            for a in task.answer_tokens() {
                let want = if a == q.correct { 0.6 } else { 0.4 / 3.0 };
                assert!((p[a as usize] - want).abs() < 1e-12);
            }
            let mut after = prompt.0.clone();
            after.push(q.correct);
            assert_eq!(task.backend.next_logprobs(&after).unwrap().argmax(), EOS);
        }
    }

    #[test]
    fn deterministic_from_seed() {
        let a = generate_task(&spec(0.4)).unwrap();
        let b = generate_task(&spec(0.4)).unwrap();
        assert_eq!(a.questions, b.questions);
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(0.4);
        s.answer_vocab = 1;
        assert!(generate_task(&s).is_err());
        let mut s = spec(0.4);
        s.n_questions = 0;
        assert!(generate_task(&s).is_err());
        assert!(generate_task(&spec(1.0)).is_err());
        assert!(spec(0.4).voting_helps());
        assert!(!spec(0.75).voting_helps());
    }
}
