//! An upstream that streams recorded traces, for tests and local demos.
//!
//! Each trace is served under its file stem as the model name (any model
//! name selects the trace when only one is loaded). Initial requests stream
//! the trace's records with their recorded top logprobs; continuation
//! requests, recognised by a trailing assistant message or a prompt other
//! than the trace's own, stream the trace's canned answer. Every request
//! and every stream end is written to an interaction log.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream;
use rpdi_tracelab::{Trace, TraceRecord, DEFAULT_CONTINUATION_ANSWER};
use serde::Serialize;
use serde_json::{json, Map, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::protocol::Endpoint;

#[derive(Debug, Clone, Default)]
pub struct MockOptions {
    /// Stream tokens without any logprobs.
    pub omit_logprobs: bool,
    /// Answer continuation requests with 400.
    pub reject_continuations: bool,
    /// After the last record, send heartbeats for this long before the
    /// finish chunk, so that a client hang-up is observed as a cancel.
    pub hold_open: Option<Duration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestKind {
    Initial,
    Continuation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum Interaction {
    Request {
        id: u64,
        kind: RequestKind,
        endpoint: &'static str,
        model: String,
        max_tokens: Option<u64>,
        /// Prompt, or the trailing assistant message, of a continuation.
        prefix: Option<String>,
        body: Value,
    },
    StreamEnd {
        id: u64,
        kind: RequestKind,
        chunks_sent: u64,
        cancelled: bool,
    },
}

#[derive(Debug, Clone, Default)]
pub struct InteractionLog(Arc<Mutex<Vec<Interaction>>>);

impl InteractionLog {
    fn push(&self, i: Interaction) {
        self.0.lock().expect("log lock").push(i);
    }

    pub fn entries(&self) -> Vec<Interaction> {
        self.0.lock().expect("log lock").clone()
    }

    pub fn clear(&self) {
        self.0.lock().expect("log lock").clear();
    }

    /// Continuation requests as `(max_tokens, prefix)`.
    pub fn continuations(&self) -> Vec<(Option<u64>, String)> {
        self.entries()
            .into_iter()
            .filter_map(|i| match i {
                Interaction::Request {
                    kind: RequestKind::Continuation,
                    max_tokens,
                    prefix,
                    ..
                } => Some((max_tokens, prefix.unwrap_or_default())),
                _ => None,
            })
            .collect()
    }

    pub fn initial_requests(&self) -> Vec<Value> {
        self.entries()
            .into_iter()
            .filter_map(|i| match i {
                Interaction::Request {
                    kind: RequestKind::Initial,
                    body,
                    ..
                } => Some(body),
                _ => None,
            })
            .collect()
    }

    /// Streams dropped by the client before their finish chunk.
    pub fn cancels(&self) -> usize {
        self.entries()
            .iter()
            .filter(|i| matches!(i, Interaction::StreamEnd { cancelled: true, .. }))
            .count()
    }

    pub fn stream_ends(&self) -> usize {
        self.entries()
            .iter()
            .filter(|i| matches!(i, Interaction::StreamEnd { .. }))
            .count()
    }
}

struct MockState {
    traces: HashMap<String, Trace>,
    options: MockOptions,
    log: InteractionLog,
    next_id: Mutex<u64>,
}

impl MockState {
    fn trace(&self, model: &str) -> Option<&Trace> {
        self.traces.get(model).or_else(|| {
            if self.traces.len() == 1 {
                self.traces.values().next()
            } else {
                None
            }
        })
    }

    fn id(&self) -> u64 {
        let mut n = self.next_id.lock().expect("id lock");
        *n += 1;
        *n
    }
}

pub fn router(traces: Vec<Trace>, options: MockOptions, log: InteractionLog) -> Router {
    let state = Arc::new(MockState {
        traces: traces.into_iter().map(|t| (t.name.clone(), t)).collect(),
        options,
        log,
        next_id: Mutex::new(0),
    });
    Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/completions", post(completions))
        .route("/v1/models", get(models))
        .route("/health", get(|| async { "ok" }))
        .with_state(state)
}

async fn models(State(s): State<Arc<MockState>>) -> Json<Value> {
    let mut names: Vec<&String> = s.traces.keys().collect();
    names.sort();
    let data: Vec<Value> = names.iter().map(|n| json!({"id": n, "object": "model"})).collect();
    Json(json!({"object": "list", "data": data}))
}

async fn chat(State(s): State<Arc<MockState>>, Json(body): Json<Value>) -> Response {
    respond(s, Endpoint::Chat, body)
}

async fn completions(State(s): State<Arc<MockState>>, Json(body): Json<Value>) -> Response {
    respond(s, Endpoint::Completions, body)
}

fn bad(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({"error": {"message": msg.into(), "type": "invalid_request_error"}}))).into_response()
}

/// Continuation prefix, if `body` asks to continue rather than start.
fn continuation_prefix(endpoint: Endpoint, body: &Value, trace: &Trace) -> Option<String> {
    match endpoint {
        Endpoint::Chat => {
            let last = body["messages"].as_array()?.last()?;
            (last["role"] == "assistant").then(|| last["content"].as_str().unwrap_or("").to_string())
        }
        Endpoint::Completions => {
            let prompt = body["prompt"].as_str()?;
            (prompt != trace.meta.prompt).then(|| prompt.to_string())
        }
    }
}

/// Requested number of top logprobs, `None` when logprobs are off.
fn requested_top_k(endpoint: Endpoint, body: &Value) -> Option<usize> {
    match endpoint {
        Endpoint::Chat => match body["logprobs"].as_bool() {
            Some(true) => Some(body["top_logprobs"].as_u64().unwrap_or(0) as usize),
            _ => None,
        },
        Endpoint::Completions => body["logprobs"].as_u64().map(|k| k as usize),
    }
}

fn respond(s: Arc<MockState>, endpoint: Endpoint, body: Value) -> Response {
    let model = body["model"].as_str().unwrap_or("").to_string();
    let Some(trace) = s.trace(&model) else {
        return bad(StatusCode::NOT_FOUND, format!("unknown model {model:?}"));
    };
    if body["stream"] != json!(true) {
        return bad(StatusCode::BAD_REQUEST, "the mock upstream only streams");
    }
    let prefix = continuation_prefix(endpoint, &body, trace);
    let kind = if prefix.is_some() {
        RequestKind::Continuation
    } else {
        RequestKind::Initial
    };
    let max_tokens = body["max_tokens"].as_u64();
    let id = s.id();
    s.log.push(Interaction::Request {
        id,
        kind,
        endpoint: endpoint.path(),
        model: model.clone(),
        max_tokens,
        prefix,
        body: body.clone(),
    });
    if kind == RequestKind::Continuation && s.options.reject_continuations {
        return bad(StatusCode::BAD_REQUEST, "continuation refused");
    }

    let limit = max_tokens.map_or(usize::MAX, |m| m as usize);
    let chunk_id = format!("mock-{}", trace.name);
    let mut chunks = Vec::new();
    let chunk = |choice: Value| {
        json!({
            "id": chunk_id,
            "object": if endpoint == Endpoint::Chat { "chat.completion.chunk" } else { "text_completion" },
            "created": 0,
            "model": trace.name,
            "choices": [choice],
        })
    };
    if endpoint == Endpoint::Chat {
        chunks.push(chunk(json!({"index": 0, "delta": {"role": "assistant", "content": ""}, "logprobs": null, "finish_reason": null})));
    }
    let total = match kind {
        RequestKind::Initial => {
            let top_k = if s.options.omit_logprobs { None } else { requested_top_k(endpoint, &body) };
            for r in trace.records.iter().take(limit) {
                chunks.push(chunk(token_choice(endpoint, &r.token_text, logprobs(endpoint, r, top_k))));
            }
            trace.records.len()
        }
        RequestKind::Continuation => {
            let answer: Vec<String> = if trace.meta.continuation_answer.is_empty() {
                DEFAULT_CONTINUATION_ANSWER.iter().map(|s| s.to_string()).collect()
            } else {
                trace.meta.continuation_answer.clone()
            };
            for t in answer.iter().take(limit) {
                chunks.push(chunk(token_choice(endpoint, t, Value::Null)));
            }
            answer.len()
        }
    };
    let finish = if total <= limit { "stop" } else { "length" };
    let last = match endpoint {
        Endpoint::Chat => json!({"index": 0, "delta": {}, "logprobs": null, "finish_reason": finish}),
        Endpoint::Completions => json!({"index": 0, "text": "", "logprobs": null, "finish_reason": finish}),
    };
    let finish_chunk = chunk(last);

    let guard = StreamGuard {
        log: s.log.clone(),
        id,
        kind,
        sent: 0,
        finished: false,
    };
    sse(chunks, finish_chunk, s.options.hold_open, guard)
}

fn token_choice(endpoint: Endpoint, text: &str, logprobs: Value) -> Value {
    match endpoint {
        Endpoint::Chat => json!({"index": 0, "delta": {"content": text}, "logprobs": logprobs, "finish_reason": null}),
        Endpoint::Completions => json!({"index": 0, "text": text, "logprobs": logprobs, "finish_reason": null}),
    }
}

fn logprobs(endpoint: Endpoint, r: &TraceRecord, top_k: Option<usize>) -> Value {
    let (Some(k), Some(top)) = (top_k, r.top_logprobs.as_ref()) else {
        return Value::Null;
    };
    let top = &top[..k.min(top.len())];
    let own = top
        .iter()
        .find(|t| t.token == r.token_text)
        .or(top.first())
        .map_or(0.0, |t| t.logprob);
    match endpoint {
        Endpoint::Chat => {
            let entries: Vec<Value> = top.iter().map(|t| json!({"token": t.token, "logprob": t.logprob})).collect();
            json!({"content": [{"token": r.token_text, "logprob": own, "top_logprobs": entries}]})
        }
        Endpoint::Completions => {
            let mut map = Map::new();
            for (j, t) in top.iter().enumerate() {
                let key = if map.contains_key(&t.token) { format!("{}#{j}", t.token) } else { t.token.clone() };
                map.insert(key, json!(t.logprob));
            }
            json!({"tokens": [r.token_text], "token_logprobs": [own], "top_logprobs": [map]})
        }
    }
}

/// Logs the end of a stream; a drop before the finish chunk is a cancel.
struct StreamGuard {
    log: InteractionLog,
    id: u64,
    kind: RequestKind,
    sent: u64,
    finished: bool,
}

impl Drop for StreamGuard {
    fn drop(&mut self) {
        self.log.push(Interaction::StreamEnd {
            id: self.id,
            kind: self.kind,
            chunks_sent: self.sent,
            cancelled: !self.finished,
        });
    }
}

enum Stage {
    Chunks(std::vec::IntoIter<Value>),
    Holding(tokio::time::Instant),
    Finish,
    Done,
    End,
}

const HEARTBEAT: Duration = Duration::from_millis(5);

fn sse(
    chunks: Vec<Value>,
    finish: Value,
    hold: Option<Duration>,
    guard: StreamGuard,
) -> Response {
    let state = (Stage::Chunks(chunks.into_iter()), guard);
    let events = stream::unfold(state, move |(mut stage, mut guard)| {
        let finish = finish.clone();
        async move {
            loop {
                match stage {
                    Stage::Chunks(ref mut it) => match it.next() {
                        Some(c) => {
                            guard.sent += 1;
                            return Some((Ok::<_, Infallible>(Event::default().data(c.to_string())), (stage, guard)));
                        }
                        None => {
                            stage = match hold {
                                Some(d) => Stage::Holding(tokio::time::Instant::now() + d),
                                None => Stage::Finish,
                            }
                        }
                    },
                    Stage::Holding(until) => {
                        if tokio::time::Instant::now() >= until {
                            stage = Stage::Finish;
                            continue;
                        }
                        tokio::time::sleep(HEARTBEAT).await;
                        return Some((Ok(Event::default().comment("hold")), (Stage::Holding(until), guard)));
                    }
                    Stage::Finish => {
                        guard.sent += 1;
                        guard.finished = true;
                        return Some((Ok(Event::default().data(finish.to_string())), (Stage::Done, guard)));
                    }
                    Stage::Done => return Some((Ok(Event::default().data("[DONE]")), (Stage::End, guard))),
                    Stage::End => return None,
                }
            }
        }
    });
    Sse::new(events).into_response()
}

/// A mock upstream serving on a background task.
pub struct MockUpstream {
    pub addr: SocketAddr,
    pub log: InteractionLog,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl MockUpstream {
    pub async fn start(traces: Vec<Trace>, options: MockOptions) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0".parse().expect("literal address"), traces, options).await
    }

    pub async fn bind(addr: SocketAddr, traces: Vec<Trace>, options: MockOptions) -> std::io::Result<Self> {
        let log = InteractionLog::default();
        let app = router(traces, options, log.clone());
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        Ok(Self {
            addr,
            log,
            shutdown: Some(tx),
            task,
        })
    }

    /// Base URL for [`crate::UpstreamConfig::new`].
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}
