//! A scripted local endpoint speaking the completion and PRM wire formats.
//!
//! Scenario files are JSON:
//!
//! ```json
//! {
//!   "echo": true,
//!   "latency_ms": 0,
//!   "fail_first": 0,
//!   "models": {
//!     "draft":  { "order": "seeded", "latency_ms": 2,
//!                 "completions": [ { "text": "Step one.\n\n" }, { "text": "\\boxed{4}" } ] },
//!     "target": { "completions": [ { "text": "Compute 2+2.\n\n", "logprobs": [-0.1, -0.2, -0.1] } ] }
//!   },
//!   "prm": { "default": 0.5, "rules": [ { "contains": "boxed", "score": 0.95 } ] }
//! }
//! ```
//!
//! * Completions are served from the model's list. With `"order": "sequential"`
//!   (the default) requests consume entries in order, cycling at the end; with
//!   `"seeded"` the entry is chosen from the request seed, so concurrent
//!   callers get the same answers regardless of arrival order.
//! * Text is split into tokens at whitespace boundaries (runs of whitespace
//!   and runs of non-whitespace). Log-probabilities not given in the scenario
//!   come from the model's `token_logprobs` table, else from a fixed hash of
//!   `(model, token)` in `[-2.01, -0.01]`. Echoed prompt tokens use the same
//!   rule.
//! * A canned text ending without a stop string finishes with end of sequence.
//! * PRM steps score the first matching rule (substring match), else `default`.
//! * `fail_first` answers that many initial requests with HTTP 503.
//! * `echo: false` serves echo requests without log-probabilities.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::oneshot;

use crate::wire::{Choice, CompletionRequest, CompletionResponse, LogProbs, PrmRequest, PrmResponse};

#[derive(Debug, Error)]
pub enum MockError {
    #[error("scenario: {0}")]
    ScenarioParse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    #[default]
    Sequential,
    Seeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CannedCompletion {
    pub text: String,
    /// One value per token of `text`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScript {
    pub completions: Vec<CannedCompletion>,
    #[serde(default)]
    pub order: Order,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
    /// Fixed log-probabilities for individual tokens, overriding the hash.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub token_logprobs: BTreeMap<String, f64>,
}

impl ModelScript {
    pub fn token_logprob(&self, model: &str, token: &str) -> f64 {
        self.token_logprobs
            .get(token)
            .copied()
            .unwrap_or_else(|| hashed_logprob(model, token))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrmRule {
    pub contains: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrmScript {
    #[serde(default = "half")]
    pub default: f64,
    #[serde(default)]
    pub rules: Vec<PrmRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

fn half() -> f64 {
    0.5
}

impl Default for PrmScript {
    fn default() -> Self {
        Self {
            default: half(),
            rules: Vec::new(),
            latency_ms: None,
        }
    }
}

impl PrmScript {
    pub fn score(&self, step: &str) -> f64 {
        self.rules
            .iter()
            .find(|r| step.contains(&r.contains))
            .map_or(self.default, |r| r.score)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "yes")]
    pub echo: bool,
    #[serde(default)]
    pub latency_ms: f64,
    #[serde(default)]
    pub fail_first: usize,
    pub models: BTreeMap<String, ModelScript>,
    #[serde(default)]
    pub prm: PrmScript,
}

fn yes() -> bool {
    true
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, MockError> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| MockError::ScenarioParse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MockError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), MockError> {
        for (name, m) in &self.models {
            if m.completions.is_empty() {
                return Err(MockError::ScenarioParse(format!("model {name:?} has no completions")));
            }
            for c in &m.completions {
                if let Some(lp) = &c.logprobs {
                    let n = tokenize(&c.text).len();
                    if lp.len() != n {
                        return Err(MockError::ScenarioParse(format!(
                            "model {name:?}: {} logprobs for {n} tokens in {:?}",
                            lp.len(),
                            c.text
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Splits text into alternating runs of whitespace and non-whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut prev: Option<bool> = None;
    for ch in text.chars() {
        let ws = ch.is_whitespace();
        match (prev, out.last_mut()) {
            (Some(p), Some(last)) if p == ws => last.push(ch),
            _ => out.push(ch.to_string()),
        }
        prev = Some(ws);
    }
    out
}

/// Deterministic per-model token log-probability.
pub fn hashed_logprob(model: &str, token: &str) -> f64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in model.bytes().chain([0u8]).chain(token.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    -(0.01 + (h % 1000) as f64 / 500.0)
}

struct Shared {
    scenario: Scenario,
    requests: AtomicUsize,
    cursors: BTreeMap<String, AtomicUsize>,
    log: Mutex<Vec<serde_json::Value>>,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": { "message": msg.into() } }))).into_response()
}

async fn pause(ms: f64) {
    if ms > 0.0 {
        tokio::time::sleep(Duration::from_secs_f64(ms / 1000.0)).await;
    }
}

fn with_offsets(tokens: Vec<String>, logprobs: Vec<Option<f64>>) -> LogProbs {
    let mut offset = 0;
    let text_offset = tokens
        .iter()
        .map(|t| {
            let o = offset;
            offset += t.len();
            o
        })
        .collect();
    LogProbs {
        tokens,
        token_logprobs: logprobs,
        text_offset,
    }
}

fn seeded_index(seed: u64, i: usize, len: usize) -> usize {
    let mut z = seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ((z ^ (z >> 31)) % len as u64) as usize
}

fn generate(req: &CompletionRequest, script: &ModelScript, canned: &CannedCompletion, index: usize) -> Choice {
    let all = tokenize(&canned.text);
    let lps: Vec<f64> = match &canned.logprobs {
        Some(lp) => lp.clone(),
        None => all.iter().map(|t| script.token_logprob(&req.model, t)).collect(),
    };
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    let mut text = String::new();
    let mut finish = "stop";
    let mut stop_reason = None;
    for (tok, lp) in all.iter().zip(lps) {
        if tokens.len() == req.max_tokens {
            finish = "length";
            break;
        }
        let before = text.len();
        text.push_str(tok);
        tokens.push(tok.clone());
        logprobs.push(Some(lp));
        if let Some(s) = req.stop.iter().find(|s| !s.is_empty() && text.contains(s.as_str())) {
            stop_reason = Some(s.clone());
            if !req.include_stop_str_in_output {
                let cut = text.find(s.as_str()).expect("just matched");
                text.truncate(cut);
                if cut <= before {
                    tokens.pop();
                    logprobs.pop();
                }
            }
            break;
        }
    }
    if stop_reason.is_none() && finish == "stop" && tokens.len() == req.max_tokens && tokens.len() < all.len() {
        finish = "length";
    }
    let mut logprob_block = with_offsets(tokens, logprobs);
    if req.echo {
        for o in &mut logprob_block.text_offset {
            *o += req.prompt.len();
        }
    }
    Choice {
        index,
        text,
        logprobs: req.logprobs.map(|_| logprob_block),
        finish_reason: Some(finish.to_string()),
        stop_reason,
    }
}

async fn completions(State(shared): State<Arc<Shared>>, Json(req): Json<CompletionRequest>) -> Response {
    let count = shared.requests.fetch_add(1, Ordering::SeqCst);
    if let Ok(v) = serde_json::to_value(&req) {
        shared.log.lock().expect("log lock").push(v);
    }
    let sc = &shared.scenario;
    if count < sc.fail_first {
        return error(StatusCode::SERVICE_UNAVAILABLE, "scripted failure");
    }
    let Some(script) = sc.models.get(&req.model) else {
        return error(StatusCode::NOT_FOUND, format!("unknown model {:?}", req.model));
    };
    pause(script.latency_ms.unwrap_or(sc.latency_ms)).await;

    let mut choices = Vec::with_capacity(req.n.max(1));
    if req.echo {
        let prompt_tokens = tokenize(&req.prompt);
        let prompt_lps: Vec<Option<f64>> = prompt_tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (i > 0).then(|| script.token_logprob(&req.model, t)))
            .collect();
        let prompt_block = with_offsets(prompt_tokens, prompt_lps);
        for i in 0..req.n.max(1) {
            let mut choice = Choice {
                index: i,
                text: req.prompt.clone(),
                logprobs: (sc.echo && req.logprobs.is_some()).then(|| prompt_block.clone()),
                finish_reason: Some("length".into()),
                stop_reason: None,
            };
            if req.max_tokens > 0 {
                let canned = pick(&shared, &req, script, i);
                let gen = generate(&req, script, canned, i);
                choice.text.push_str(&gen.text);
                if let (Some(a), Some(b)) = (choice.logprobs.as_mut(), gen.logprobs) {
                    a.tokens.extend(b.tokens);
                    a.token_logprobs.extend(b.token_logprobs);
                    a.text_offset.extend(b.text_offset);
                }
                choice.finish_reason = gen.finish_reason;
                choice.stop_reason = gen.stop_reason;
            }
            choices.push(choice);
        }
    } else {
        for i in 0..req.n {
            let canned = pick(&shared, &req, script, i);
            choices.push(generate(&req, script, canned, i));
        }
    }
    Json(CompletionResponse {
        id: format!("mock-{count}"),
        model: req.model.clone(),
        choices,
    })
    .into_response()
}

fn pick<'a>(shared: &Shared, req: &CompletionRequest, script: &'a ModelScript, i: usize) -> &'a CannedCompletion {
    let len = script.completions.len();
    let idx = match (script.order, req.seed) {
        (Order::Seeded, Some(seed)) => seeded_index(seed, i, len),
        _ => shared.cursors[&req.model].fetch_add(1, Ordering::SeqCst) % len,
    };
    &script.completions[idx]
}

async fn prm(State(shared): State<Arc<Shared>>, Json(req): Json<PrmRequest>) -> Response {
    let count = shared.requests.fetch_add(1, Ordering::SeqCst);
    if let Ok(v) = serde_json::to_value(&req) {
        shared.log.lock().expect("log lock").push(v);
    }
    let sc = &shared.scenario;
    if count < sc.fail_first {
        return error(StatusCode::SERVICE_UNAVAILABLE, "scripted failure");
    }
    pause(sc.prm.latency_ms.unwrap_or(sc.latency_ms)).await;
    let scores = req.steps.iter().map(|s| sc.prm.score(s)).collect();
    Json(PrmResponse { scores }).into_response()
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/v1/completions", post(completions))
        .route("/v1/prm", post(prm))
        .route("/health", get(|| async { "ok" }))
        .with_state(shared)
}

/// A running mock endpoint; stops when dropped.
pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    runtime: Option<tokio::runtime::Runtime>,
    task: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
}

impl MockServer {
    /// Serves on an ephemeral localhost port.
    pub fn start(scenario: Scenario) -> Result<Self, MockError> {
        Self::start_on(scenario, "127.0.0.1:0".parse().expect("literal address"))
    }

    pub fn start_on(scenario: Scenario, addr: SocketAddr) -> Result<Self, MockError> {
        scenario.validate()?;
        let cursors = scenario
            .models
            .keys()
            .map(|k| (k.clone(), AtomicUsize::new(0)))
            .collect();
        let shared = Arc::new(Shared {
            scenario,
            requests: AtomicUsize::new(0),
            cursors,
            log: Mutex::new(Vec::new()),
        });
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()?;
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(shared.clone());
        let task = runtime.spawn(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        Ok(Self {
            addr,
            shared,
            shutdown: Some(tx),
            runtime: Some(runtime),
            task: Some(task),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Every request body received so far, in arrival order.
    pub fn requests(&self) -> Vec<serde_json::Value> {
        self.shared.log.lock().expect("log lock").clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// Blocks until the server task ends.
    pub fn wait(mut self) -> std::io::Result<()> {
        let (Some(rt), Some(task)) = (self.runtime.take(), self.task.take()) else {
            return Ok(());
        };
        rt.block_on(task).map_err(std::io::Error::other)?
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_timeout(Duration::from_secs(1));
        }
    }
}
