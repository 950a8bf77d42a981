//! Prompt construction: the plain task prompt, the voting inputs
//! `[question; response; question]`, and the USC / self-reflection prompts.
//!
//! A [`TemplateSet`] either fills text templates and tokenizes the result
//! with the backend, or (the `separated` layout, for toy backends) lays out
//! token segments between reserved separator ids:
//!
//! ```text
//! base        SEP x SEP
//! voting      SEP x SEP r SEP x SEP
//! candidates  SEP x SEP r1 ITEM r2 ITEM .. rk SEP
//! ```

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::LmBackend;
use crate::error::{Error, Result};
use crate::sampler::SampledResponse;
use crate::types::{TokenId, TokenSeq};

const BUILTIN: &[(&str, &str)] = &[
    ("truthfulqa", include_str!("../templates/truthfulqa.json")),
    ("biographies", include_str!("../templates/biographies.json")),
    ("longfact", include_str!("../templates/longfact.json")),
    ("toy", include_str!("../templates/toy.json")),
    ("toy-identity", include_str!("../templates/toy-identity.json")),
];

/// How voting inputs are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdMode {
    /// `[question; response; question]` with the clarifying instruction.
    #[default]
    Reflect,
    /// The voting input is the base prompt itself; the response is ignored.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextTemplates {
    pub base: String,
    pub id_wrap: String,
    pub usc_wrap: String,
    pub sr_wrap: String,
    /// Literal the USC prompt asks the model to start with.
    pub answer_prefix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sr_answer_prefix: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum Layout {
    Text(TextTemplates),
    /// Separator ids `[segment, item]`; taken from the backend vocabulary
    /// when absent.
    Separated {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        separators: Option<Vec<TokenId>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub id: String,
    #[serde(default)]
    pub id_mode: IdMode,
    #[serde(flatten)]
    pub layout: Layout,
}

impl TemplateSet {
    pub fn builtin_ids() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(id, _)| *id)
    }

    pub fn builtin(id: &str) -> Result<Self> {
        let (_, json) = BUILTIN
            .iter()
            .find(|(name, _)| *name == id)
            .ok_or_else(|| Error::Template(format!("unknown template id {id:?}")))?;
        Self::from_json(json)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let t: TemplateSet = serde_json::from_str(json).map_err(|e| Error::Template(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// A built-in id, or else a path to a template file.
    pub fn resolve(id_or_path: &str) -> Result<Self> {
        if BUILTIN.iter().any(|(name, _)| *name == id_or_path) {
            return Self::builtin(id_or_path);
        }
        let path = Path::new(id_or_path);
        if path.exists() {
            return Self::load(path);
        }
        Err(Error::Template(format!("unknown template id {id_or_path:?}")))
    }

    /// The same templates with identity voting inputs.
    pub fn with_identity(&self) -> Self {
        TemplateSet {
            id: format!("{}-identity", self.id),
            id_mode: IdMode::Identity,
            layout: self.layout.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = match &self.layout {
            Layout::Text(t) => t,
            Layout::Separated { separators } => {
                return match separators {
                    Some(s) if s.is_empty() || s.len() > 2 => Err(Error::Template(
                        "separated layout takes one or two separator ids".into(),
                    )),
                    _ => Ok(()),
                };
            }
        };
        let base = slots(&t.base)?;
        expect_count(&base, "question", 1, 1, "base")?;
        expect_only(&base, &["question"], "base")?;

        if self.id_mode == IdMode::Reflect {
            let id = slots(&t.id_wrap)?;
            expect_only(&id, &["question", "response"], "id_wrap")?;
            expect_count(&id, "response", 1, 1, "id_wrap")?;
            let at = id.iter().position(|s| s == "response").unwrap();
            let before = id[..at].iter().filter(|s| *s == "question").count();
            let after = id[at + 1..].iter().filter(|s| *s == "question").count();
            if before == 0 || after > 1 {
                return Err(Error::Template(
                    "id_wrap must place {question} before {response} and at most once after it".into(),
                ));
            }
        }
        for (name, text) in [("usc_wrap", &t.usc_wrap), ("sr_wrap", &t.sr_wrap)] {
            let s = slots(text)?;
            expect_only(&s, &["question", "responses"], name)?;
            expect_count(&s, "responses", 1, 1, name)?;
            expect_count(&s, "question", 1, usize::MAX, name)?;
        }
        if t.answer_prefix.trim().is_empty() {
            return Err(Error::Template("answer_prefix is empty".into()));
        }
        Ok(())
    }

    pub fn answer_prefix(&self) -> Option<&str> {
        match &self.layout {
            Layout::Text(t) => Some(&t.answer_prefix),
            Layout::Separated { .. } => None,
        }
    }

    pub fn sr_answer_prefix(&self) -> Option<&str> {
        match &self.layout {
            Layout::Text(t) => t.sr_answer_prefix.as_deref(),
            Layout::Separated { .. } => None,
        }
    }

    fn separators(&self, backend: &dyn LmBackend) -> Result<(TokenId, Option<TokenId>)> {
        let ids = match &self.layout {
            Layout::Separated { separators: Some(s) } => s.clone(),
            _ => backend.vocab().separators().to_vec(),
        };
        match ids.as_slice() {
            [] => Err(Error::Template(
                "separated layout needs separator ids in the template or vocabulary".into(),
            )),
            [seg] => Ok((*seg, None)),
            [seg, item, ..] => Ok((*seg, Some(*item))),
        }
    }

    fn question_tokens(&self, backend: &dyn LmBackend, question: &str) -> Result<TokenSeq> {
        if question.trim().is_empty() {
            return Err(Error::Template("empty {question} slot".into()));
        }
        let q = backend.tokenize(question)?;
        if q.is_empty() {
            return Err(Error::Template("empty {question} slot".into()));
        }
        Ok(q)
    }

    /// The plain task prompt, used for greedy decoding and for sampling.
    pub fn build_base(&self, backend: &dyn LmBackend, question: &str) -> Result<TokenSeq> {
        match &self.layout {
            Layout::Text(t) => {
                if question.trim().is_empty() {
                    return Err(Error::Template("empty {question} slot".into()));
                }
                backend.tokenize(&fill(&t.base, question, None, None))
            }
            Layout::Separated { .. } => {
                let (sep, _) = self.separators(backend)?;
                let x = self.question_tokens(backend, question)?;
                let mut out = vec![sep];
                out.extend_from_slice(&x);
                out.push(sep);
                Ok(TokenSeq(out))
            }
        }
    }

    /// The voting input `q_j` for one sampled response.
    pub fn build_id_input(
        &self,
        backend: &dyn LmBackend,
        question: &str,
        response: &SampledResponse,
    ) -> Result<TokenSeq> {
        if self.id_mode == IdMode::Identity {
            return self.build_base(backend, question);
        }
        match &self.layout {
            Layout::Text(t) => {
                if question.trim().is_empty() {
                    return Err(Error::Template("empty {question} slot".into()));
                }
                if response.text.trim().is_empty() {
                    return Err(Error::Template("empty {response} slot".into()));
                }
                backend.tokenize(&fill(&t.id_wrap, question, Some(&response.text), None))
            }
            Layout::Separated { .. } => {
                let (sep, _) = self.separators(backend)?;
                let x = self.question_tokens(backend, question)?;
                let r = response.tokens.without_eos(backend.vocab().eos_id());
                if r.is_empty() {
                    return Err(Error::Template("empty {response} slot".into()));
                }
                let mut out = Vec::with_capacity(2 * x.len() + r.len() + 4);
                out.push(sep);
                out.extend_from_slice(&x);
                out.push(sep);
                out.extend_from_slice(r);
                out.push(sep);
                out.extend_from_slice(&x);
                out.push(sep);
                Ok(TokenSeq(out))
            }
        }
    }

    pub fn build_usc_input(
        &self,
        backend: &dyn LmBackend,
        question: &str,
        responses: &[SampledResponse],
    ) -> Result<TokenSeq> {
        self.build_candidates(backend, question, responses, |t| &t.usc_wrap)
    }

    pub fn build_sr_input(
        &self,
        backend: &dyn LmBackend,
        question: &str,
        responses: &[SampledResponse],
    ) -> Result<TokenSeq> {
        self.build_candidates(backend, question, responses, |t| &t.sr_wrap)
    }

    fn build_candidates(
        &self,
        backend: &dyn LmBackend,
        question: &str,
        responses: &[SampledResponse],
        wrap: impl Fn(&TextTemplates) -> &String,
    ) -> Result<TokenSeq> {
        if responses.is_empty() {
            return Err(Error::EmptyInput("responses"));
        }
        match &self.layout {
            Layout::Text(t) => {
                if question.trim().is_empty() {
                    return Err(Error::Template("empty {question} slot".into()));
                }
                let block = number_responses(responses.iter().map(|r| r.text.as_str()));
                backend.tokenize(&fill(wrap(t), question, None, Some(&block)))
            }
            Layout::Separated { .. } => {
                let (sep, item) = self.separators(backend)?;
                let item =
                    item.ok_or_else(|| Error::Template("candidate lists need an item separator id".into()))?;
                let eos = backend.vocab().eos_id();
                let mut out = self.build_base(backend, question)?.0;
                for (n, r) in responses.iter().enumerate() {
                    out.extend_from_slice(r.tokens.without_eos(eos));
                    out.push(if n + 1 == responses.len() { sep } else { item });
                }
                Ok(TokenSeq(out))
            }
        }
    }
}

/// `Response 1: ...` blocks in branch order.
pub fn number_responses<'a>(texts: impl Iterator<Item = &'a str>) -> String {
    texts
        .enumerate()
        .map(|(i, t)| format!("Response {}: {}", i + 1, t.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn slot_regex() -> Regex {
    Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex")
}

/// Slot names in order of appearance.
fn slots(text: &str) -> Result<Vec<String>> {
    Ok(slot_regex()
        .captures_iter(text)
        .map(|c| c[1].to_string())
        .collect())
}

fn expect_only(found: &[String], allowed: &[&str], template: &str) -> Result<()> {
    match found.iter().find(|s| !allowed.contains(&s.as_str())) {
        Some(s) => Err(Error::Template(format!("{template}: unknown slot {{{s}}}"))),
        None => Ok(()),
    }
}

fn expect_count(found: &[String], slot: &str, min: usize, max: usize, template: &str) -> Result<()> {
    let n = found.iter().filter(|s| *s == slot).count();
    if n < min || n > max {
        return Err(Error::Template(format!(
            "{template}: slot {{{slot}}} appears {n} times"
        )));
    }
    Ok(())
}

fn fill(template: &str, question: &str, response: Option<&str>, responses: Option<&str>) -> String {
    slot_regex()
        .replace_all(template, |c: &regex::Captures| match &c[1] {
            "question" => question.trim().to_string(),
            "response" => response.unwrap_or_default().trim().to_string(),
            "responses" => responses.unwrap_or_default().to_string(),
            other => format!("{{{other}}}"),
        })
        .into_owned()
}

/// Splits a separated-layout voting input back into `(x, r, x)`.
pub fn parse_voting_input(tokens: &[TokenId], sep: TokenId) -> Option<(&[TokenId], &[TokenId], &[TokenId])> {
    let pos: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == sep)
        .map(|(i, _)| i)
        .collect();
    if pos.len() != 4 || pos[0] != 0 || pos[3] + 1 != tokens.len() {
        return None;
    }
    Some((
        &tokens[pos[0] + 1..pos[1]],
        &tokens[pos[1] + 1..pos[2]],
        &tokens[pos[2] + 1..pos[3]],
    ))
}
