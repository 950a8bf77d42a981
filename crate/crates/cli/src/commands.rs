use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use idec_core::baselines::{greedy_decode, sc_vote, sr_refine, usc_select, AnswerParser};
use idec_core::harness::{
    self, generate_task, k_sweep, SweepConfig, TaskSpec, DEFAULT_K_GRID, TASK_MAX_NEW_TOKENS,
};
use idec_core::rng::derive_seed;
use idec_core::{
    factuality_score, id_decode, open_backend, sample_k, DecodeConfig, LmBackend, Method, SampledResponse,
    SamplingSpec, Strategy, SupportFn, TemplateSet, TieBreak,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{pick, FileConfig};
use crate::{echo_config, CliError, CliResult};

const DEFAULT_TEMPLATE: &str = "toy";
const DEFAULT_MAX_NEW_TOKENS: usize = 64;

/// Flags shared by `sample` and `decode`.
#[derive(Args, Debug)]
pub struct RunArgs {
    /// `toy:<path>` or `http:<url>`; falls back to the config file, then IDEC_BACKEND.
    #[arg(long)]
    backend: Option<String>,
    /// Built-in template id or path to a template JSON file.
    #[arg(long)]
    template: Option<String>,
    /// Use identity voting inputs (each branch sees only the question and its response).
    #[arg(long)]
    identity: bool,
    #[arg(long)]
    k: Option<usize>,
    /// greedy | temp:T | nucleus:P
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// One question per line; blank lines are skipped.
    #[arg(long)]
    question_file: Option<PathBuf>,
    /// A question given inline; may be repeated.
    #[arg(long = "question")]
    questions: Vec<String>,
}

#[derive(Serialize)]
struct Effective {
    backend: String,
    template: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<Method>,
    k: usize,
    strategy: Strategy,
    seed: u64,
    max_new_tokens: usize,
    questions: usize,
}

struct Run {
    backend: Box<dyn LmBackend>,
    template: TemplateSet,
    questions: Vec<String>,
    effective: Effective,
}

fn open(spec: &str) -> CliResult<Box<dyn LmBackend>> {
    open_backend(spec).map_err(|e| match e {
        idec_core::Error::InvalidConfig(m) => CliError::Usage(m),
        e => CliError::Backend(format!("{spec}: {e}")),
    })
}

fn read_questions(args: &RunArgs) -> CliResult<Vec<String>> {
    let mut questions = args.questions.clone();
    if let Some(path) = &args.question_file {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        questions.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from),
        );
    }
    if questions.is_empty() {
        return Err(CliError::Usage(
            "no questions: pass --question or --question-file".into(),
        ));
    }
    Ok(questions)
}

impl Run {
    fn new(args: &RunArgs, file: &FileConfig, method: Option<Method>) -> CliResult<Self> {
        let backend_spec = file.backend(args.backend.as_deref())?;
        let template_id = args
            .template
            .clone()
            .or_else(|| file.template.clone())
            .unwrap_or_else(|| DEFAULT_TEMPLATE.into());
        let mut template = TemplateSet::resolve(&template_id)?;
        if args.identity {
            template = template.with_identity();
        }
        let k = args.k.or(file.k).unwrap_or(1);
        if k == 0 {
            return Err(CliError::Usage("--k must be at least 1".into()));
        }
        let max_new_tokens = args
            .max_new_tokens
            .or(file.max_new_tokens)
            .unwrap_or(DEFAULT_MAX_NEW_TOKENS);
        if max_new_tokens == 0 {
            return Err(CliError::Usage("--max-new-tokens must be at least 1".into()));
        }
        let questions = read_questions(args)?;
        let effective = Effective {
            backend: backend_spec.clone(),
            template: template.id.clone(),
            method,
            k,
            strategy: pick(args.strategy, file.strategy.as_deref(), Strategy::default())?,
            seed: args.seed.or(file.seed).unwrap_or(0),
            max_new_tokens,
            questions: questions.len(),
        };
        Ok(Run {
            backend: open(&backend_spec)?,
            template,
            questions,
            effective,
        })
    }

    /// Sampling spec for question `index`; every command derives the same
    /// per-question seed, so `sample` shows what `decode` votes over.
    fn sampling(&self, index: usize) -> SamplingSpec {
        SamplingSpec {
            strategy: self.effective.strategy,
            max_new_tokens: self.effective.max_new_tokens,
            seed: derive_seed(self.effective.seed, &["question", &index.to_string()]),
        }
    }

    fn samples(&self, index: usize) -> idec_core::Result<Vec<SampledResponse>> {
        let prompt = self.template.build_base(&*self.backend, &self.questions[index])?;
        sample_k(&*self.backend, &prompt, self.effective.k, &self.sampling(index))
    }

    /// Runs `f` on every question in parallel and writes the lines in
    /// question order.
    fn emit<W, F>(&self, out: &mut W, f: F) -> CliResult
    where
        W: Write,
        F: Fn(usize) -> CliResult<Vec<String>> + Sync + Send,
    {
        let lines = (0..self.questions.len())
            .into_par_iter()
            .map(f)
            .collect::<CliResult<Vec<_>>>()?;
        for line in lines.iter().flatten() {
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Serialize)]
struct SampleLine<'a> {
    question: usize,
    #[serde(flatten)]
    response: &'a SampledResponse,
}

pub fn sample<W: Write>(args: SampleArgs, file: &FileConfig, out: &mut W) -> CliResult {
    let run = Run::new(&args.run, file, None)?;
    echo_config("sample", &run.effective)?;
    run.emit(out, |i| {
        let samples = run.samples(i)?;
        samples
            .iter()
            .map(|r| {
                Ok(serde_json::to_string(&SampleLine {
                    question: i,
                    response: r,
                })?)
            })
            .collect()
    })
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// greedy | id | usc | sr | sc
    #[arg(long)]
    method: Option<Method>,
    /// Keep the per-step trace in each result.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    run: RunArgs,
}

fn decode_line(run: &Run, method: Method, index: usize, keep_trace: bool) -> idec_core::Result<String> {
    let backend = &*run.backend;
    let question = &run.questions[index];
    let max_new = run.effective.max_new_tokens;
    let strip = |mut r: idec_core::DecodeResult| {
        if !keep_trace {
            r.trace.clear();
        }
        r
    };
    let line = match method {
        Method::Greedy => {
            serde_json::to_string(&strip(greedy_decode(backend, question, &run.template, max_new)?))
        }
        Method::Id => {
            let config = DecodeConfig {
                k: run.effective.k,
                max_new_tokens: max_new,
                sampling: run.sampling(index),
                seed: run.effective.seed,
                tie_break: TieBreak::LowestTokenId,
                template_id: run.template.id.clone(),
            };
            let samples = run.samples(index)?;
            let r = id_decode(backend, question, &samples, &run.template, &config)?;
            serde_json::to_string(&strip(r))
        }
        Method::Sr => {
            let samples = run.samples(index)?;
            let r = sr_refine(backend, question, &samples, &run.template, max_new, true)?;
            serde_json::to_string(&strip(r))
        }
        Method::Usc => {
            let samples = run.samples(index)?;
            let mut sel = usc_select(backend, question, &samples, &run.template, max_new)?;
            sel.generation = strip(sel.generation);
            serde_json::to_string(&sel)
        }
        Method::ScVote => {
            let samples = run.samples(index)?;
            match sc_vote(&samples, AnswerParser::default(), backend.vocab()) {
                Ok(vote) => serde_json::to_string(&vote),
                // Nothing parseable: report an empty vote rather than abort the batch.
                Err(idec_core::Error::EmptyInput(_)) => serde_json::to_string(&serde_json::json!({
                    "winner": null,
                    "winner_count": 0,
                    "tally": [],
                    "dropped": samples.len(),
                })),
                Err(e) => return Err(e),
            }
        }
    };
    Ok(line?)
}

pub fn decode<W: Write>(args: DecodeArgs, file: &FileConfig, out: &mut W) -> CliResult {
    let method = pick(args.method, file.method.as_deref(), Method::Id)?;
    let run = Run::new(&args.run, file, Some(method))?;
    echo_config("decode", &run.effective)?;
    run.emit(out, |i| Ok(vec![decode_line(&run, method, i, args.trace)?]))
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Text file holding the response to score.
    #[arg(long)]
    response: PathBuf,
    /// JSONL of sampled responses (a `text` field) or plain text, one per line.
    #[arg(long)]
    samples: PathBuf,
    /// exact | f1:TAU
    #[arg(long)]
    support: Option<SupportFn>,
}

fn read_sample_texts(path: &Path) -> CliResult<Vec<String>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| match serde_json::from_str::<serde_json::Value>(line) {
            Ok(serde_json::Value::Object(o)) => match o.get("text") {
                Some(serde_json::Value::String(s)) => s.clone(),
                _ => line.to_string(),
            },
            Ok(serde_json::Value::String(s)) => s,
            _ => line.to_string(),
        })
        .collect())
}

pub fn score<W: Write>(args: ScoreArgs, file: &FileConfig, out: &mut W) -> CliResult {
    let support = pick(args.support, file.support.as_deref(), SupportFn::default())?;
    let response = std::fs::read_to_string(&args.response)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.response.display())))?;
    let samples = read_sample_texts(&args.samples)?;
    let refs: Vec<&str> = samples.iter().map(String::as_str).collect();
    let report = factuality_score(&response, &refs, support)?;
    writeln!(out, "{}", serde_json::to_string(&report)?)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// JSON task spec: n_questions, answer_vocab, error_rate, copy_weight, seed.
    #[arg(long)]
    task_spec: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "greedy,id")]
    methods: Vec<Method>,
    #[arg(long, value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
    /// Number of seeds, run as 0..N.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// greedy | temp:T | nucleus:P
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// Write report.json, cells.jsonl and (with --csv) cells.csv here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    csv: bool,
    /// Record per-cell wall-clock time (makes reports differ between runs).
    #[arg(long)]
    timings: bool,
}

pub fn sweep<W: Write>(args: SweepArgs, file: &FileConfig, out: &mut W) -> CliResult {
    let text = std::fs::read_to_string(&args.task_spec)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.task_spec.display())))?;
    let spec: TaskSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.task_spec.display())))?;
    let task = generate_task(&spec)?;
    let config = SweepConfig {
        methods: args.methods,
        k_grid: args.k_list.unwrap_or_else(|| DEFAULT_K_GRID.to_vec()),
        seeds: (0..args.seeds).collect(),
        strategy: pick(args.strategy, file.strategy.as_deref(), Strategy::default())?,
        max_new_tokens: args.max_new_tokens.unwrap_or(TASK_MAX_NEW_TOKENS),
        record_timings: args.timings,
    };
    echo_config("sweep", &config)?;
    let report = k_sweep(&task, &config)?;

    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
        harness::write_jsonl(&report, std::fs::File::create(dir.join("cells.jsonl"))?)?;
        if args.csv {
            harness::write_csv(&report, std::fs::File::create(dir.join("cells.csv"))?)?;
        }
    }
    write!(std::io::stderr(), "{}", harness::render_table(&report))?;
    writeln!(out, "{}", serde_json::to_string(&report)?)?;
    Ok(())
}
