use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::Agent;

use super::LmBackend;
use crate::error::{Error, Result};
use crate::types::{LogProbDist, TokenId, TokenSeq, Vocab};
use crate::wire::{self, ErrorResponse, InfoResponse};

/// Waits between attempts: one initial try plus three retries.
pub const DEFAULT_RETRY_DELAYS_MS: [u64; 3] = [100, 300, 900];

#[derive(Clone, Debug)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout: Duration,
    pub retry_delays: Vec<Duration>,
    /// Capacity of the prefix → session cache; 0 disables sessions.
    pub session_cache: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: &str) -> Self {
        RemoteConfig {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(30),
            retry_delays: DEFAULT_RETRY_DELAYS_MS
                .iter()
                .map(|&ms| Duration::from_millis(ms))
                .collect(),
            session_cache: 0,
        }
    }
}

#[derive(Default)]
struct SessionCache {
    by_prefix: HashMap<Vec<TokenId>, String>,
    order: VecDeque<Vec<TokenId>>,
}

impl SessionCache {
    fn take(&mut self, prefix: &[TokenId]) -> Option<String> {
        let id = self.by_prefix.remove(prefix)?;
        self.order.retain(|k| k.as_slice() != prefix);
        Some(id)
    }

    fn put(&mut self, prefix: Vec<TokenId>, id: String, capacity: usize) {
        while self.order.len() >= capacity {
            match self.order.pop_front() {
                Some(old) => {
                    self.by_prefix.remove(&old);
                }
                None => break,
            }
        }
        self.order.push_back(prefix.clone());
        self.by_prefix.insert(prefix, id);
    }
}

/// Client for a logits server speaking the wire protocol in [`crate::wire`].
pub struct RemoteLm {
    config: RemoteConfig,
    agent: Agent,
    info: InfoResponse,
    vocab: Vocab,
    sessions: Mutex<SessionCache>,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

impl RemoteLm {
    /// Fetches `/v1/info` and builds the client.
    pub fn connect(config: RemoteConfig) -> Result<Self> {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut client = RemoteLm {
            config,
            agent,
            info: InfoResponse {
                vocab_size: 1,
                eos_id: 0,
                bos_id: None,
                model: String::new(),
                max_prefix: 0,
            },
            vocab: Vocab::new(1, 0, None, vec![], vec![])?,
            sessions: Mutex::new(SessionCache::default()),
        };
        let info: InfoResponse = client.get(wire::INFO_PATH)?;
        client.vocab = Vocab::new(info.vocab_size, info.eos_id, info.bos_id, vec![], vec![])
            .map_err(|e| Error::Protocol(format!("/v1/info: {e}")))?;
        client.info = info;
        Ok(client)
    }

    pub fn info(&self) -> &InfoResponse {
        &self.info
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.endpoint, path)
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<Attempt<T>>) -> Result<T> {
        let mut last = String::new();
        for attempt in 0..=self.config.retry_delays.len() {
            if attempt > 0 {
                std::thread::sleep(self.config.retry_delays[attempt - 1]);
            }
            match call()? {
                Attempt::Done(v) => return Ok(v),
                Attempt::Retry(why) => last = why,
            }
        }
        Err(Error::BackendUnavailable(format!(
            "{} after {} attempts: {last}",
            self.config.endpoint,
            self.config.retry_delays.len() + 1
        )))
    }

    fn handle<T: DeserializeOwned>(
        path: &str,
        res: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<Attempt<T>> {
        let mut resp = match res {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        let status = resp.status().as_u16();
        if (200..300).contains(&status) {
            return resp
                .body_mut()
                .read_json::<T>()
                .map(Attempt::Done)
                .map_err(|e| Error::Protocol(format!("{path}: {e}")));
        }
        if status >= 500 {
            return Ok(Attempt::Retry(format!("{path}: HTTP {status}")));
        }
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        let detail = serde_json::from_str::<ErrorResponse>(&body)
            .map(|e| e.error)
            .unwrap_or_else(|_| wire::ErrorDetail {
                code: "unknown".into(),
                message: body,
            });
        Err(Error::Remote {
            status,
            code: detail.code,
            message: detail.message,
        })
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let url = self.url(path);
        self.with_retries(|| Self::handle(path, self.agent.get(&url).call()))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let url = self.url(path);
        self.with_retries(|| Self::handle(path, self.agent.post(&url).send_json(body)))
    }

    fn to_dist(&self, resp: wire::LogprobsResponse) -> Result<LogProbDist> {
        let values = wire::decode_logprobs(&resp.logprobs_b64)?;
        if values.len() != self.vocab.size() {
            return Err(Error::Protocol(format!(
                "expected {} logprobs, got {}",
                self.vocab.size(),
                values.len()
            )));
        }
        let logits: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        LogProbDist::from_logits(&logits).map_err(|e| Error::Protocol(e.to_string()))
    }

    /// Stateless scoring: the full prefix in one request.
    pub fn next_logprobs_stateless(&self, prefix: &[TokenId]) -> Result<LogProbDist> {
        let resp: wire::LogprobsResponse = self.post(
            wire::NEXT_LOGPROBS_PATH,
            &wire::TokensBody {
                tokens: prefix.to_vec(),
            },
        )?;
        self.to_dist(resp)
    }

    /// The server's values exactly as sent, without length checks or
    /// renormalization. Used by conformance probes.
    pub fn raw_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f32>> {
        let resp: wire::LogprobsResponse = self.post(
            wire::NEXT_LOGPROBS_PATH,
            &wire::TokensBody {
                tokens: prefix.to_vec(),
            },
        )?;
        wire::decode_logprobs(&resp.logprobs_b64)
    }

    fn extend(&self, session_id: &str, token: TokenId) -> Result<LogProbDist> {
        let resp: wire::LogprobsResponse = self.post(
            wire::EXTEND_PATH,
            &wire::ExtendRequest {
                session_id: session_id.to_string(),
                token,
            },
        )?;
        self.to_dist(resp)
    }

    fn next_logprobs_session(&self, prefix: &[TokenId]) -> Result<LogProbDist> {
        let (&last, parent) = prefix.split_last().expect("non-empty prefix");
        let cached = self.sessions.lock().expect("session lock").take(parent);
        let session_id = match cached {
            Some(id) => id,
            None => {
                let s: wire::SessionResponse = self.post(
                    wire::SESSION_PATH,
                    &wire::TokensBody {
                        tokens: parent.to_vec(),
                    },
                )?;
                s.session_id
            }
        };
        match self.extend(&session_id, last) {
            Ok(dist) => {
                self.sessions.lock().expect("session lock").put(
                    prefix.to_vec(),
                    session_id,
                    self.config.session_cache,
                );
                Ok(dist)
            }
            // Evicted or unknown session: the stateless path gives the same answer.
            Err(Error::Remote { .. }) => self.next_logprobs_stateless(prefix),
            Err(e) => Err(e),
        }
    }
}

impl LmBackend for RemoteLm {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_logprobs(&self, prefix: &[TokenId]) -> Result<LogProbDist> {
        self.vocab.check(prefix)?;
        if self.config.session_cache > 0 && !prefix.is_empty() {
            self.next_logprobs_session(prefix)
        } else {
            self.next_logprobs_stateless(prefix)
        }
    }

    fn tokenize(&self, text: &str) -> Result<TokenSeq> {
        let resp: wire::TokensBody = self.post(
            wire::TOKENIZE_PATH,
            &wire::TokenizeRequest {
                text: text.to_string(),
            },
        )?;
        self.vocab
            .check(&resp.tokens)
            .map_err(|e| Error::Protocol(e.to_string()))?;
        Ok(TokenSeq(resp.tokens))
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let resp: wire::TextBody = self.post(
            wire::DETOKENIZE_PATH,
            &wire::TokensBody {
                tokens: tokens.to_vec(),
            },
        )?;
        Ok(resp.text)
    }
}
