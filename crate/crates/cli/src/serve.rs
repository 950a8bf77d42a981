//! A toy model behind the logits HTTP protocol, for exercising the remote
//! client and `serve-check` without a real model.

use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clap::Args;
use idec_core::backend::ToyModelFile;
use idec_core::wire::{self, ErrorResponse, InfoResponse, LogprobsResponse, SessionResponse, TextBody};
use idec_core::{LmBackend, TokenId};
use serde::de::DeserializeOwned;

use crate::{CliError, CliResult};

#[derive(Args, Debug)]
pub struct ServeToyArgs {
    /// Toy model JSON file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:0")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 4096)]
    max_prefix: usize,
    /// Live sessions kept before the oldest is dropped.
    #[arg(long, default_value_t = 1024)]
    sessions: usize,
}

#[derive(Default)]
struct Sessions {
    next: u64,
    prefixes: HashMap<String, Vec<TokenId>>,
    order: VecDeque<String>,
}

struct Server {
    model: Box<dyn LmBackend>,
    name: String,
    max_prefix: usize,
    capacity: usize,
    sessions: Mutex<Sessions>,
}

type Shared = Arc<Server>;

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (status, Json(ErrorResponse::new(code, message))).into_response()
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, Box<Response>> {
    serde_json::from_slice(body)
        .map_err(|e| Box::new(error(StatusCode::BAD_REQUEST, "bad_request", e.to_string())))
}

impl Server {
    fn logprobs(&self, prefix: &[TokenId]) -> Response {
        if prefix.len() > self.max_prefix {
            return error(
                StatusCode::PAYLOAD_TOO_LARGE,
                "prefix_too_long",
                format!("{} tokens exceeds {}", prefix.len(), self.max_prefix),
            );
        }
        match self.model.next_logprobs(prefix) {
            Ok(d) => {
                let values: Vec<f32> = d.values().iter().map(|&v| v as f32).collect();
                Json(LogprobsResponse {
                    logprobs_b64: wire::encode_logprobs(&values),
                    logprobs: None,
                })
                .into_response()
            }
            Err(e) => error(StatusCode::BAD_REQUEST, "bad_tokens", e.to_string()),
        }
    }
}

async fn info(State(s): State<Shared>) -> Json<InfoResponse> {
    let v = s.model.vocab();
    Json(InfoResponse {
        vocab_size: v.size(),
        eos_id: v.eos_id(),
        bos_id: v.bos_id(),
        model: s.name.clone(),
        max_prefix: s.max_prefix,
    })
}

async fn tokenize(State(s): State<Shared>, body: Bytes) -> Response {
    let req: wire::TokenizeRequest = match parse(&body) {
        Ok(r) => r,
        Err(e) => return *e,
    };
    match s.model.tokenize(&req.text) {
        Ok(t) => Json(wire::TokensBody { tokens: t.0 }).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, "unknown_token", e.to_string()),
    }
}

async fn detokenize(State(s): State<Shared>, body: Bytes) -> Response {
    let req: wire::TokensBody = match parse(&body) {
        Ok(r) => r,
        Err(e) => return *e,
    };
    match s.model.detokenize(&req.tokens) {
        Ok(text) => Json(TextBody { text }).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, "bad_tokens", e.to_string()),
    }
}

async fn next_logprobs(State(s): State<Shared>, body: Bytes) -> Response {
    match parse::<wire::TokensBody>(&body) {
        Ok(req) => s.logprobs(&req.tokens),
        Err(e) => *e,
    }
}

async fn session(State(s): State<Shared>, body: Bytes) -> Response {
    let req: wire::TokensBody = match parse(&body) {
        Ok(r) => r,
        Err(e) => return *e,
    };
    if let Err(e) = s.model.vocab().check(&req.tokens) {
        return error(StatusCode::BAD_REQUEST, "bad_tokens", e.to_string());
    }
    let mut sessions = s.sessions.lock().expect("session lock");
    while sessions.order.len() >= s.capacity {
        let Some(old) = sessions.order.pop_front() else {
            break;
        };
        sessions.prefixes.remove(&old);
    }
    sessions.next += 1;
    let id = format!("s{}", sessions.next);
    sessions.prefixes.insert(id.clone(), req.tokens);
    sessions.order.push_back(id.clone());
    Json(SessionResponse { session_id: id }).into_response()
}

async fn extend(State(s): State<Shared>, body: Bytes) -> Response {
    let req: wire::ExtendRequest = match parse(&body) {
        Ok(r) => r,
        Err(e) => return *e,
    };
    let prefix = {
        let mut sessions = s.sessions.lock().expect("session lock");
        match sessions.prefixes.get_mut(&req.session_id) {
            Some(p) => {
                p.push(req.token);
                p.clone()
            }
            None => return error(StatusCode::NOT_FOUND, "unknown_session", req.session_id),
        }
    };
    s.logprobs(&prefix)
}

fn router(server: Shared) -> Router {
    Router::new()
        .route(wire::INFO_PATH, get(info))
        .route(wire::TOKENIZE_PATH, post(tokenize))
        .route(wire::DETOKENIZE_PATH, post(detokenize))
        .route(wire::NEXT_LOGPROBS_PATH, post(next_logprobs))
        .route(wire::SESSION_PATH, post(session))
        .route(wire::EXTEND_PATH, post(extend))
        .with_state(server)
}

/// Binds, prints `listening on http://ADDR` to `out`, then serves until
/// the process is killed.
pub fn serve_toy<W: Write>(args: ServeToyArgs, out: &mut W) -> CliResult {
    let model = ToyModelFile::load(&args.model)
        .and_then(ToyModelFile::into_backend)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.model.display())))?;
    if args.sessions == 0 {
        return Err(CliError::Usage("--sessions must be at least 1".into()));
    }
    let server = Arc::new(Server {
        model,
        name: format!("toy:{}", args.model.display()),
        max_prefix: args.max_prefix,
        capacity: args.sessions,
        sessions: Mutex::new(Sessions::default()),
    });
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr).await?;
        writeln!(out, "listening on http://{}", listener.local_addr()?)?;
        out.flush()?;
        axum::serve(listener, router(server)).await?;
        Ok(())
    })
}
