//! One monitored client request.
//!
//! Tokens from the upstream thinking stream are fed to a [`Session`] and
//! relayed as they arrive. On early exit or budget exhaustion the upstream
//! stream is dropped (cancelling it), the termination marker is emitted, and
//! a single continuation request for `P ⊕ R ⊕ T` with the remaining budget
//! supplies the answer. After a natural end the upstream answer is relayed
//! untouched.

use std::collections::VecDeque;

use axum::http::HeaderValue;
use futures::StreamExt;
use rpdi_core::{entropy_from_topk_logprobs, Metrics, PolicyConfig, Session, SessionAction, TokenObservation};
use serde_json::{json, Value};
use tokio::sync::mpsc;

use crate::config::CompletionStyle;
use crate::error::GatewayError;
use crate::protocol::{chunk_text, parse_chunk, render_messages, text_chunk, token_chunk, Endpoint, ParsedChunk};
use crate::upstream::{DataStream, UpstreamClient};

/// Field removed from client bodies that opts into annotations.
pub const ANNOTATIONS_FIELD: &str = "rpdi_annotations";
pub const ANNOTATIONS_HEADER: &str = "x-rpdi-annotations";
pub const EVENT_OBJECT: &str = "rpdi.event";

#[derive(Debug, Clone, PartialEq)]
pub enum OutEvent {
    Chunk(Value),
    Error(Value),
    Done,
}

#[derive(Debug, Clone)]
pub struct MonitoredRequest {
    pub endpoint: Endpoint,
    /// Client body with gateway-only fields stripped.
    pub body: Value,
    pub annotations: bool,
    pub auth: Option<HeaderValue>,
}

impl MonitoredRequest {
    /// The prompt `P` the session is anchored on.
    fn prompt(&self, style: CompletionStyle) -> Result<String, GatewayError> {
        match (self.endpoint, style) {
            (Endpoint::Completions, _) => self.body["prompt"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| GatewayError::BadRequest("prompt must be a single string".into())),
            // the chat template is applied upstream; the continuation reuses it
            (Endpoint::Chat, CompletionStyle::Chat) => Ok(String::new()),
            (Endpoint::Chat, CompletionStyle::RawCompletion) => Ok(render_messages(self.messages()?)),
        }
    }

    fn messages(&self) -> Result<&Vec<Value>, GatewayError> {
        self.body["messages"]
            .as_array()
            .ok_or_else(|| GatewayError::BadRequest("messages must be an array".into()))
    }

    fn initial_body(&self, policy: &PolicyConfig, top_k: usize) -> Value {
        let mut b = self.body.clone();
        b["stream"] = json!(true);
        b["max_tokens"] = json!(policy.budget);
        if let Some(o) = b.as_object_mut() {
            o.remove("max_completion_tokens");
            o.remove("n");
        }
        match self.endpoint {
            Endpoint::Chat => {
                b["logprobs"] = json!(true);
                b["top_logprobs"] = json!(top_k);
            }
            Endpoint::Completions => b["logprobs"] = json!(top_k),
        }
        b
    }

    /// Continuation request for `prefix = P ⊕ R ⊕ T`; returns the endpoint used.
    fn continuation(&self, style: CompletionStyle, prefix: &str, max_tokens: u64) -> (Endpoint, Value) {
        let mut b = self.body.clone();
        if let Some(o) = b.as_object_mut() {
            for k in ["logprobs", "top_logprobs", "max_completion_tokens", "n", "messages", "prompt"] {
                o.remove(k);
            }
        }
        b["stream"] = json!(true);
        b["max_tokens"] = json!(max_tokens);
        match (self.endpoint, style) {
            (Endpoint::Chat, CompletionStyle::Chat) => {
                let mut messages = self.body["messages"].as_array().cloned().unwrap_or_default();
                messages.push(json!({"role": "assistant", "content": prefix}));
                b["messages"] = json!(messages);
                b["continue_final_message"] = json!(true);
                b["add_generation_prompt"] = json!(false);
                (Endpoint::Chat, b)
            }
            _ => {
                b["prompt"] = json!(prefix);
                (Endpoint::Completions, b)
            }
        }
    }
}

/// The opening of an upstream stream, read ahead so that contract
/// violations can still be reported with an HTTP status.
pub struct OpenedStream {
    buffered: VecDeque<String>,
    rest: DataStream,
}

impl OpenedStream {
    async fn next(&mut self) -> Option<Result<String, GatewayError>> {
        match self.buffered.pop_front() {
            Some(d) => Some(Ok(d)),
            None => self.rest.next().await,
        }
    }
}

/// Opens the thinking stream and checks its first token-bearing chunk.
pub async fn open(
    client: &UpstreamClient,
    policy: &PolicyConfig,
    req: &MonitoredRequest,
) -> Result<OpenedStream, GatewayError> {
    req.prompt(client.config().completion_style)?;
    let body = req.initial_body(policy, client.config().logprobs_top_k);
    let mut rest = client.open_stream(req.endpoint, &body, req.auth.as_ref()).await?;
    let mut buffered = VecDeque::new();
    while let Some(item) = rest.next().await {
        let data = item?;
        if data == "[DONE]" {
            buffered.push_back(data);
            break;
        }
        let chunk: Value = serde_json::from_str(&data).map_err(|e| GatewayError::Stream(format!("bad chunk: {e}")))?;
        let has_tokens = !parse_chunk(req.endpoint, &chunk)?.tokens.is_empty();
        buffered.push_back(data);
        if has_tokens {
            break;
        }
    }
    Ok(OpenedStream { buffered, rest })
}

fn event(kind: &str, fields: Value) -> Value {
    let mut ev = json!({ "type": kind });
    if let (Some(ev), Some(f)) = (ev.as_object_mut(), fields.as_object()) {
        ev.extend(f.clone());
    }
    json!({ "object": EVENT_OBJECT, "rpdi_event": ev })
}

fn annotation(step: u64, entropy: f64, metrics: Option<Metrics>, top_k: usize, decision: &str) -> Value {
    let mut a = json!({ "step": step, "entropy": entropy, "top_k": top_k, "decision": decision });
    if let Some(m) = metrics.filter(|m| m.step == step) {
        a["ltf"] = json!(m.ltf);
        a["gtf"] = json!(m.gtf);
        a["rpdi"] = json!(m.rpdi);
        a["evaluated"] = json!(m.evaluated);
    }
    a
}

enum Phase {
    Thinking,
    Answering,
}

struct Driver {
    req: MonitoredRequest,
    client: UpstreamClient,
    session: Session,
    tx: mpsc::Sender<OutEvent>,
    answer_tokens: u64,
    template: Value,
}

/// Client went away; stop work and drop upstream streams.
struct Disconnected;

impl Driver {
    async fn send(&self, ev: OutEvent) -> Result<(), Disconnected> {
        self.tx.send(ev).await.map_err(|_| Disconnected)
    }

    async fn fail(&self, err: GatewayError, extra: Value) -> Result<(), Disconnected> {
        let mut body = err.body();
        if let Some(f) = extra.as_object() {
            body["error"].as_object_mut().expect("error object").extend(f.clone());
        }
        self.send(OutEvent::Error(body)).await?;
        self.send(OutEvent::Done).await
    }

    async fn summary(&self) -> Result<(), Disconnected> {
        if self.req.annotations {
            let s = &self.session;
            let ev = event(
                "summary",
                json!({
                    "outcome": s.outcome(),
                    "thinking_tokens": s.outcome().step().unwrap_or(s.monitor().step()),
                    "answer_tokens": self.answer_tokens,
                }),
            );
            self.send(OutEvent::Chunk(ev)).await?;
        }
        Ok(())
    }

    async fn run(mut self, mut upstream: OpenedStream) -> Result<(), Disconnected> {
        let top_k = self.client.config().logprobs_top_k;
        let tail_policy = self.session.config().tail_policy;
        let mut phase = Phase::Thinking;
        let mut step = 0u64;

        while let Some(item) = upstream.next().await {
            let data = match item {
                Ok(d) => d,
                Err(e) => return self.fail(e, json!({})).await,
            };
            if data == "[DONE]" {
                break;
            }
            let chunk: Value = match serde_json::from_str(&data) {
                Ok(v) => v,
                Err(e) => return self.fail(GatewayError::Stream(format!("bad chunk: {e}")), json!({})).await,
            };
            if matches!(phase, Phase::Answering) {
                self.answer_tokens += parse_chunk(self.req.endpoint, &chunk).map_or(0, |p| p.tokens.len() as u64);
                self.send(OutEvent::Chunk(chunk)).await?;
                continue;
            }
            let ParsedChunk { tokens, .. } = match parse_chunk(self.req.endpoint, &chunk) {
                Ok(p) => p,
                Err(e) => return self.fail(e, json!({ "step": step })).await,
            };
            if tokens.is_empty() {
                self.template = chunk.clone();
                self.send(OutEvent::Chunk(chunk)).await?;
                continue;
            }
            self.template = chunk.clone();
            let count = tokens.len();
            for (i, tok) in tokens.into_iter().enumerate() {
                let mut out = token_chunk(self.req.endpoint, &chunk, i, count, &tok.text);
                if matches!(phase, Phase::Answering) {
                    self.answer_tokens += 1;
                    self.send(OutEvent::Chunk(out)).await?;
                    continue;
                }
                step += 1;
                let h = match entropy_from_topk_logprobs(&tok.top_logprobs, tail_policy) {
                    Ok(h) => h,
                    Err(e) => {
                        let err = GatewayError::MissingField {
                            missing_field: "choices[0].logprobs (valid top logprobs)".into(),
                            detail: e.to_string(),
                        };
                        return self.fail(err, json!({ "step": step })).await;
                    }
                };
                let obs = TokenObservation {
                    step,
                    token_id: None,
                    token_text: tok.text,
                    entropy_nats: h,
                };
                let action = match self.session.feed(&obs) {
                    Ok(a) => a,
                    Err(e) => return self.fail(GatewayError::Stream(e.to_string()), json!({ "step": step })).await,
                };
                if self.req.annotations {
                    let decision = match &action {
                        SessionAction::KeepStreaming(_) => "continue",
                        SessionAction::Finish { .. } => "natural-end",
                        SessionAction::EnactExit(p) if p.budget_exhausted => "budget-exhausted",
                        SessionAction::EnactExit(_) => "early-exit",
                    };
                    out["rpdi"] = annotation(step, h, self.session.monitor().last_metrics(), top_k, decision);
                }
                self.send(OutEvent::Chunk(out)).await?;
                match action {
                    SessionAction::KeepStreaming(_) => {}
                    SessionAction::Finish { step, answer_budget } => {
                        phase = Phase::Answering;
                        if self.req.annotations {
                            let ev = event("natural_end", json!({ "step": step, "answer_budget": answer_budget }));
                            self.send(OutEvent::Chunk(ev)).await?;
                        }
                    }
                    SessionAction::EnactExit(plan) => {
                        // dropping the stream closes the upstream connection
                        drop(upstream);
                        return self.enact_exit(plan).await;
                    }
                }
            }
        }
        let _ = self.session.record_answer_tokens(self.answer_tokens);
        self.summary().await?;
        self.send(OutEvent::Done).await
    }

    async fn enact_exit(mut self, plan: rpdi_core::ExitPlan) -> Result<(), Disconnected> {
        let marker = self.session.config().termination_marker.clone();
        if self.req.annotations {
            let kind = if plan.budget_exhausted { "budget_exhausted" } else { "early_exit" };
            let m = self.session.monitor().last_metrics();
            let ev = event(
                kind,
                json!({
                    "step": plan.exit_step,
                    "rpdi": plan.rpdi,
                    "ltf": m.map(|m| m.ltf),
                    "gtf": m.map(|m| m.gtf),
                    "answer_budget": plan.answer_budget,
                }),
            );
            self.send(OutEvent::Chunk(ev)).await?;
        }
        self.send(OutEvent::Chunk(text_chunk(self.req.endpoint, &self.template, &marker, None)))
            .await?;
        if plan.answer_budget == 0 {
            let fin = text_chunk(self.req.endpoint, &self.template, "", Some("length"));
            self.send(OutEvent::Chunk(fin)).await?;
            self.summary().await?;
            return self.send(OutEvent::Done).await;
        }

        let style = self.client.config().completion_style;
        let (cont_endpoint, body) = self.req.continuation(style, &plan.continuation_prefix, plan.answer_budget);
        let partial = json!({ "partial_reasoning": self.session.reasoning(), "exit_step": plan.exit_step });
        let mut stream = match self.client.open_stream(cont_endpoint, &body, self.req.auth.as_ref()).await {
            Ok(s) => s,
            Err(e) => {
                let err = match e {
                    GatewayError::UpstreamStatus { status, body } => GatewayError::UpstreamStatus {
                        status,
                        body: format!("continuation rejected: {body}"),
                    },
                    other => other,
                };
                return self.fail(err, partial).await;
            }
        };
        while let Some(item) = stream.next().await {
            let data = match item {
                Ok(d) => d,
                Err(e) => return self.fail(e, partial).await,
            };
            if data == "[DONE]" {
                break;
            }
            let chunk: Value = match serde_json::from_str(&data) {
                Ok(v) => v,
                Err(e) => return self.fail(GatewayError::Stream(format!("bad chunk: {e}")), partial).await,
            };
            let text = chunk_text(&chunk);
            if !text.is_empty() {
                self.answer_tokens += 1;
            }
            let out = if cont_endpoint == self.req.endpoint {
                chunk
            } else {
                let finish = chunk["choices"][0]["finish_reason"].as_str();
                text_chunk(self.req.endpoint, &self.template, text, finish)
            };
            self.send(OutEvent::Chunk(out)).await?;
        }
        let _ = self.session.record_answer_tokens(self.answer_tokens.min(plan.answer_budget));
        self.summary().await?;
        self.send(OutEvent::Done).await
    }
}

/// Drives a request whose upstream stream is already open. Runs until the
/// response is complete or the client disconnects.
pub async fn drive(
    client: UpstreamClient,
    policy: PolicyConfig,
    req: MonitoredRequest,
    upstream: OpenedStream,
    tx: mpsc::Sender<OutEvent>,
) {
    let prompt = match req.prompt(client.config().completion_style) {
        Ok(p) => p,
        Err(_) => String::new(),
    };
    let session = match Session::start(prompt, policy) {
        Ok(s) => s,
        Err(e) => {
            let _ = tx.send(OutEvent::Error(GatewayError::Config(e.to_string()).body())).await;
            let _ = tx.send(OutEvent::Done).await;
            return;
        }
    };
    let driver = Driver {
        req,
        client,
        session,
        tx,
        answer_tokens: 0,
        template: Value::Null,
    };
    let _ = driver.run(upstream).await;
}
