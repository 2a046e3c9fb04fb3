//! Shared HTTP client for the upstream inference server.

use std::pin::Pin;
use std::time::Duration;

use axum::http::HeaderValue;
use eventsource_stream::Eventsource;
use futures::{Stream, StreamExt};
use serde_json::Value;

use crate::config::UpstreamConfig;
use crate::error::GatewayError;
use crate::protocol::Endpoint;

/// `data:` payloads of an upstream SSE stream, `[DONE]` included.
pub type DataStream = Pin<Box<dyn Stream<Item = Result<String, GatewayError>> + Send>>;

/// Cheap to clone; all clones share one connection pool.
#[derive(Clone)]
pub struct UpstreamClient {
    http: reqwest::Client,
    config: UpstreamConfig,
}

impl UpstreamClient {
    pub fn new(config: UpstreamConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let http = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .read_timeout(config.request_timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self { http, config })
    }

    pub fn config(&self) -> &UpstreamConfig {
        &self.config
    }

    pub async fn health(&self) -> Result<(), GatewayError> {
        let resp = self
            .http
            .get(self.config.endpoint("models"))
            .timeout(Duration::from_secs(10))
            .send()
            .await
            .map_err(|e| GatewayError::Health(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(GatewayError::Health(format!("GET models returned {}", resp.status())));
        }
        Ok(())
    }

    fn post(&self, endpoint: Endpoint, auth: Option<&HeaderValue>) -> reqwest::RequestBuilder {
        let mut req = self.http.post(self.config.endpoint(endpoint.path()));
        if let Some(a) = auth {
            req = req.header(reqwest::header::AUTHORIZATION, a.as_bytes());
        }
        req
    }

    /// Sends a streaming request and returns its event payloads. Dropping the
    /// stream closes the connection, which cancels generation upstream.
    pub async fn open_stream(
        &self,
        endpoint: Endpoint,
        body: &Value,
        auth: Option<&HeaderValue>,
    ) -> Result<DataStream, GatewayError> {
        let resp = self
            .post(endpoint, auth)
            .json(body)
            .send()
            .await
            .map_err(|e| GatewayError::Unreachable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(GatewayError::UpstreamStatus {
                status: status.as_u16(),
                body,
            });
        }
        let events = resp.bytes_stream().eventsource().map(|ev| match ev {
            Ok(ev) => Ok(ev.data),
            Err(e) => Err(GatewayError::Stream(e.to_string())),
        });
        Ok(Box::pin(events))
    }

    /// Relays a request body verbatim; used when monitoring is disabled.
    pub async fn forward(
        &self,
        endpoint: Endpoint,
        body: axum::body::Bytes,
        content_type: Option<&HeaderValue>,
        auth: Option<&HeaderValue>,
    ) -> Result<reqwest::Response, GatewayError> {
        let mut req = self.post(endpoint, auth).body(body);
        if let Some(ct) = content_type {
            req = req.header(reqwest::header::CONTENT_TYPE, ct.as_bytes());
        }
        req.send().await.map_err(|e| GatewayError::Unreachable(e.to_string()))
    }
}
