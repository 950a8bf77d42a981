//! `serve-check`: conformance probes against a running logits server.

use std::io::Write;
use std::time::Duration;

use clap::Args;
use idec_core::backend::{RemoteConfig, RemoteLm};
use idec_core::numeric::logsumexp;
use idec_core::{LmBackend, TokenId};
use serde::Serialize;

use crate::{CliError, CliResult};

pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;
pub const DETERMINISM_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_PROBE_TEXT: &str = "The quick brown fox jumps over the lazy dog.";

#[derive(Args, Debug)]
pub struct ServeCheckArgs {
    /// Base URL of the server, e.g. http://127.0.0.1:8000
    #[arg(long)]
    endpoint: String,
    /// ASCII text for the tokenizer round trip (and the scoring prefix when
    /// the server has no bos token).
    #[arg(long, default_value = DEFAULT_PROBE_TEXT)]
    text: String,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 120)]
    timeout: u64,
}

#[derive(Debug, Serialize)]
pub struct Probe {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct CheckReport {
    pub endpoint: String,
    pub model: String,
    pub probes: Vec<Probe>,
    pub pass: bool,
}

fn probe(name: &'static str, result: Result<String, String>) -> Probe {
    match result {
        Ok(detail) => Probe {
            name,
            pass: true,
            detail,
        },
        Err(detail) => Probe {
            name,
            pass: false,
            detail,
        },
    }
}

fn check_info(client: &RemoteLm) -> Result<String, String> {
    let info = client.info();
    if info.vocab_size == 0 {
        return Err("vocab_size is 0".into());
    }
    if info.eos_id as usize >= info.vocab_size {
        return Err(format!(
            "eos_id {} outside vocab of {}",
            info.eos_id, info.vocab_size
        ));
    }
    if let Some(b) = info.bos_id.filter(|&b| b as usize >= info.vocab_size) {
        return Err(format!("bos_id {b} outside vocab of {}", info.vocab_size));
    }
    if info.max_prefix == 0 {
        return Err("max_prefix is 0".into());
    }
    Ok(format!(
        "vocab_size={} eos_id={} bos_id={:?} max_prefix={}",
        info.vocab_size, info.eos_id, info.bos_id, info.max_prefix
    ))
}

fn probe_prefix(client: &RemoteLm, text: &str) -> Result<Vec<TokenId>, String> {
    match client.info().bos_id {
        Some(b) => Ok(vec![b]),
        None => client
            .tokenize(text)
            .map(|t| t.0)
            .map_err(|e| format!("tokenize: {e}")),
    }
}

fn check_normalization(client: &RemoteLm, prefix: &[TokenId]) -> Result<String, String> {
    let values = client.raw_logprobs(prefix).map_err(|e| e.to_string())?;
    let size = client.info().vocab_size;
    if values.len() != size {
        return Err(format!("{} values for vocab_size {size}", values.len()));
    }
    if values.iter().any(|v| v.is_nan() || *v == f32::INFINITY) {
        return Err("NaN or +inf entry".into());
    }
    let wide: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let lse = logsumexp(&wide);
    if lse.abs() <= NORMALIZATION_TOLERANCE {
        Ok(format!("|logsumexp| = {:.3e} over {size} values", lse.abs()))
    } else {
        Err(format!("logsumexp = {lse}, outside ±{NORMALIZATION_TOLERANCE}"))
    }
}

fn check_determinism(client: &RemoteLm, prefix: &[TokenId]) -> Result<String, String> {
    let a = client.raw_logprobs(prefix).map_err(|e| e.to_string())?;
    let b = client.raw_logprobs(prefix).map_err(|e| e.to_string())?;
    if a.len() != b.len() {
        return Err(format!("lengths differ: {} vs {}", a.len(), b.len()));
    }
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(&b) {
        if x == y {
            continue;
        }
        worst = worst.max((*x as f64 - *y as f64).abs());
    }
    if worst <= DETERMINISM_TOLERANCE {
        Ok(format!("max |diff| = {worst:.3e}"))
    } else {
        Err(format!(
            "max |diff| = {worst:.3e} exceeds {DETERMINISM_TOLERANCE}"
        ))
    }
}

fn check_roundtrip(client: &RemoteLm, text: &str) -> Result<String, String> {
    if !text.is_ascii() {
        return Err("probe text is not ASCII".into());
    }
    let tokens = client.tokenize(text).map_err(|e| format!("tokenize: {e}"))?;
    let back = client
        .detokenize(&tokens.0)
        .map_err(|e| format!("detokenize: {e}"))?;
    if back == text {
        Ok(format!("{} tokens", tokens.len()))
    } else {
        Err(format!("{text:?} came back as {back:?}"))
    }
}

pub fn run_checks(client: &RemoteLm, text: &str) -> Vec<Probe> {
    let mut probes = vec![probe("info", check_info(client))];
    match probe_prefix(client, text) {
        Ok(prefix) => {
            probes.push(probe("normalization", check_normalization(client, &prefix)));
            probes.push(probe("determinism", check_determinism(client, &prefix)));
        }
        Err(e) => {
            probes.push(probe("normalization", Err(e.clone())));
            probes.push(probe("determinism", Err(e)));
        }
    }
    probes.push(probe("roundtrip", check_roundtrip(client, text)));
    probes
}

pub fn serve_check<W: Write>(args: ServeCheckArgs, out: &mut W) -> CliResult {
    let mut config = RemoteConfig::new(&args.endpoint);
    config.timeout = Duration::from_secs(args.timeout);
    let client =
        RemoteLm::connect(config).map_err(|e| CliError::Backend(format!("{}: {e}", args.endpoint)))?;
    let probes = run_checks(&client, &args.text);
    let report = CheckReport {
        endpoint: args.endpoint.clone(),
        model: client.info().model.clone(),
        pass: probes.iter().all(|p| p.pass),
        probes,
    };
    writeln!(out, "{}", serde_json::to_string(&report)?)?;
    out.flush()?;
    if report.pass {
        Ok(())
    } else {
        let failed: Vec<&str> = report.probes.iter().filter(|p| !p.pass).map(|p| p.name).collect();
        Err(CliError::Backend(format!(
            "conformance probes failed: {}",
            failed.join(", ")
        )))
    }
}
