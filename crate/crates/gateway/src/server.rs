//! HTTP front end: OpenAI-compatible routes backed by the monitoring pipeline.

use std::convert::Infallible;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::State;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use crate::config::GatewayConfig;
use crate::error::GatewayError;
use crate::pipeline::{self, MonitoredRequest, OutEvent, ANNOTATIONS_FIELD, ANNOTATIONS_HEADER, EVENT_OBJECT};
use crate::protocol::{chunk_finish_reason, chunk_text, Endpoint};
use crate::upstream::UpstreamClient;

const CHANNEL_DEPTH: usize = 64;

#[derive(Clone)]
struct AppState {
    config: Arc<GatewayConfig>,
    client: UpstreamClient,
}

pub fn router(config: GatewayConfig) -> Result<Router, GatewayError> {
    config.validate()?;
    let client = UpstreamClient::new(config.upstream.clone())?;
    let state = AppState {
        config: Arc::new(config),
        client,
    };
    Ok(Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/completions", post(completions))
        .route("/health", get(health))
        .with_state(state))
}

async fn health(State(s): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "monitoring": s.config.monitoring,
        "upstream": s.client.config().base_url.as_str(),
    }))
}

async fn chat(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    handle(s, Endpoint::Chat, headers, body).await
}

async fn completions(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    handle(s, Endpoint::Completions, headers, body).await
}

fn truthy(v: &HeaderValue) -> bool {
    matches!(v.to_str().map(|s| s.trim().to_ascii_lowercase()).as_deref(), Ok("1" | "true" | "yes" | "on"))
}

async fn handle(s: AppState, endpoint: Endpoint, headers: HeaderMap, body: Bytes) -> Response {
    let auth = headers.get(header::AUTHORIZATION).cloned();
    if !s.config.monitoring {
        return pass_through(&s.client, endpoint, body, headers.get(header::CONTENT_TYPE), auth.as_ref()).await;
    }
    match monitored(&s, endpoint, &headers, &body, auth).await {
        Ok(r) => r,
        Err(e) => {
            tracing::warn!(kind = e.kind(), "request failed: {e}");
            e.into_response()
        }
    }
}

async fn monitored(
    s: &AppState,
    endpoint: Endpoint,
    headers: &HeaderMap,
    body: &Bytes,
    auth: Option<HeaderValue>,
) -> Result<Response, GatewayError> {
    let mut body: Value =
        serde_json::from_slice(body).map_err(|e| GatewayError::BadRequest(format!("body is not JSON: {e}")))?;
    let obj = body
        .as_object_mut()
        .ok_or_else(|| GatewayError::BadRequest("body must be a JSON object".into()))?;
    let body_flag = obj.remove(ANNOTATIONS_FIELD).and_then(|v| v.as_bool()).unwrap_or(false);
    let annotations = body_flag || headers.get(ANNOTATIONS_HEADER).is_some_and(truthy);
    let streaming = obj.get("stream").and_then(Value::as_bool).unwrap_or(false);

    let req = MonitoredRequest {
        endpoint,
        body,
        annotations,
        auth,
    };
    let opened = pipeline::open(&s.client, &s.config.policy, &req).await?;
    let (tx, rx) = mpsc::channel(CHANNEL_DEPTH);
    tokio::spawn(pipeline::drive(s.client.clone(), s.config.policy.clone(), req, opened, tx));

    if streaming {
        Ok(sse(rx).into_response())
    } else {
        Ok(aggregate(endpoint, annotations, rx).await)
    }
}

fn sse(rx: mpsc::Receiver<OutEvent>) -> Sse<impl futures::Stream<Item = Result<Event, Infallible>>> {
    let events = stream::unfold(rx, |mut rx| async move {
        let ev = match rx.recv().await? {
            OutEvent::Chunk(v) | OutEvent::Error(v) => Event::default().data(v.to_string()),
            OutEvent::Done => Event::default().data("[DONE]"),
        };
        Some((Ok(ev), rx))
    });
    Sse::new(events)
}

/// Collects a monitored stream into one non-streaming response.
async fn aggregate(endpoint: Endpoint, annotations: bool, mut rx: mpsc::Receiver<OutEvent>) -> Response {
    let mut text = String::new();
    let mut finish_reason = Value::Null;
    let mut template = Value::Null;
    let mut events = Vec::new();
    while let Some(ev) = rx.recv().await {
        match ev {
            OutEvent::Chunk(c) if c["object"] == EVENT_OBJECT => events.push(c["rpdi_event"].clone()),
            OutEvent::Chunk(c) => {
                text.push_str(chunk_text(&c));
                if let Some(f) = chunk_finish_reason(&c) {
                    finish_reason = json!(f);
                }
                if template.is_null() {
                    template = c;
                }
            }
            OutEvent::Error(mut e) => {
                e["error"]["partial_output"] = json!(text);
                return (StatusCode::BAD_GATEWAY, Json(e)).into_response();
            }
            OutEvent::Done => break,
        }
    }
    let (object, choice) = match endpoint {
        Endpoint::Chat => (
            "chat.completion",
            json!({"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": finish_reason}),
        ),
        Endpoint::Completions => (
            "text_completion",
            json!({"index": 0, "text": text, "logprobs": null, "finish_reason": finish_reason}),
        ),
    };
    let mut out = json!({
        "id": template.get("id").cloned().unwrap_or(json!("rpdi-gateway")),
        "object": object,
        "created": template.get("created").cloned().unwrap_or(json!(0)),
        "model": template.get("model").cloned().unwrap_or(Value::Null),
        "choices": [choice],
    });
    if annotations {
        out["rpdi_events"] = json!(events);
    }
    Json(out).into_response()
}

/// Relays the request and response bytes unmodified.
async fn pass_through(
    client: &UpstreamClient,
    endpoint: Endpoint,
    body: Bytes,
    content_type: Option<&HeaderValue>,
    auth: Option<&HeaderValue>,
) -> Response {
    let resp = match client.forward(endpoint, body, content_type, auth).await {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let mut out = Response::builder().status(resp.status().as_u16());
    if let Some(ct) = resp.headers().get(reqwest::header::CONTENT_TYPE) {
        out = out.header(header::CONTENT_TYPE, ct.as_bytes());
    }
    out.body(Body::from_stream(resp.bytes_stream()))
        .unwrap_or_else(|e| GatewayError::Stream(e.to_string()).into_response())
}

/// A gateway serving on a background task.
pub struct RunningGateway {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl RunningGateway {
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}

async fn prepare(config: &GatewayConfig) -> Result<(Router, TcpListener), GatewayError> {
    let app = router(config.clone())?;
    if !config.skip_health_check {
        UpstreamClient::new(config.upstream.clone())?.health().await?;
    }
    let listener = TcpListener::bind(config.listen).await.map_err(|source| GatewayError::Bind {
        addr: config.listen.to_string(),
        source,
    })?;
    Ok((app, listener))
}

/// Binds and serves in the background; `listen` may use port 0.
pub async fn spawn(config: GatewayConfig) -> Result<RunningGateway, GatewayError> {
    let (app, listener) = prepare(&config).await?;
    let addr = listener.local_addr().map_err(|source| GatewayError::Bind {
        addr: config.listen.to_string(),
        source,
    })?;
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(RunningGateway {
        addr,
        shutdown: Some(tx),
        task,
    })
}

/// Serves until `shutdown` resolves.
pub async fn serve(config: GatewayConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), GatewayError> {
    let (app, listener) = prepare(&config).await?;
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, upstream = %config.upstream.base_url, monitoring = config.monitoring, "gateway listening");
    }
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| GatewayError::Stream(e.to_string()))
}
