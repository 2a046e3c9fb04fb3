//! Minimal consumer of the gateway's streaming responses.

use futures::StreamExt;
use eventsource_stream::Eventsource;
use serde_json::Value;

use crate::error::GatewayError;
use crate::pipeline::EVENT_OBJECT;
use crate::protocol::chunk_text;

#[derive(Debug, Clone, Default)]
pub struct StreamedResponse {
    pub status: u16,
    /// Completion chunks in arrival order.
    pub chunks: Vec<Value>,
    /// `rpdi_event` payloads (exit, natural end, summary).
    pub events: Vec<Value>,
    /// Error object, from a non-2xx body or an in-stream error event.
    pub error: Option<Value>,
    /// Concatenated visible text.
    pub text: String,
    /// Whether the stream ended with `[DONE]`.
    pub done: bool,
    /// Raw response body for non-2xx answers.
    pub body: Option<Value>,
}

impl StreamedResponse {
    pub fn event(&self, kind: &str) -> Option<&Value> {
        self.events.iter().find(|e| e["type"] == kind)
    }
}

/// POSTs `body` and drains the SSE response.
pub async fn post_stream(
    http: &reqwest::Client,
    url: &str,
    body: &Value,
    headers: &[(&str, &str)],
) -> Result<StreamedResponse, GatewayError> {
    let mut req = http.post(url).json(body);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let resp = req.send().await.map_err(|e| GatewayError::Unreachable(e.to_string()))?;
    let mut out = StreamedResponse {
        status: resp.status().as_u16(),
        ..Default::default()
    };
    if !resp.status().is_success() {
        let body: Value = resp.json().await.unwrap_or(Value::Null);
        out.error = body.get("error").cloned();
        out.body = Some(body);
        return Ok(out);
    }
    let mut events = resp.bytes_stream().eventsource();
    while let Some(ev) = events.next().await {
        let data = ev.map_err(|e| GatewayError::Stream(e.to_string()))?.data;
        if data == "[DONE]" {
            out.done = true;
            continue;
        }
        let v: Value = serde_json::from_str(&data).map_err(|e| GatewayError::Stream(e.to_string()))?;
        if v["object"] == EVENT_OBJECT {
            out.events.push(v["rpdi_event"].clone());
        } else if let Some(err) = v.get("error") {
            out.error = Some(err.clone());
        } else {
            out.text.push_str(chunk_text(&v));
            out.chunks.push(v);
        }
    }
    Ok(out)
}
