use std::net::SocketAddr;
use std::time::Duration;

use reqwest::Url;
use rpdi_core::PolicyConfig;
use serde::{Deserialize, Serialize};

use crate::error::GatewayError;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_UPSTREAM: &str = "http://127.0.0.1:8000/v1";
pub const DEFAULT_TOP_K: usize = 20;
pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(300);

/// How a chat request is continued after an exit.
///
/// `chat` re-sends the conversation with `R ⊕ T` as a trailing assistant
/// message to be continued; `raw-completion` renders the messages into a
/// plain prompt and continues through `/completions`. Requests that arrive
/// on `/v1/completions` always continue through `/completions`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionStyle {
    #[default]
    Chat,
    RawCompletion,
}

impl std::str::FromStr for CompletionStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chat" => Ok(Self::Chat),
            "raw-completion" => Ok(Self::RawCompletion),
            other => Err(format!("unknown completion style {other:?} (expected chat or raw-completion)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpstreamConfig {
    /// OpenAI-style base URL, e.g. `http://host:8000/v1`.
    pub base_url: Url,
    pub logprobs_top_k: usize,
    /// Per-read timeout on upstream streams.
    pub request_timeout: Duration,
    pub completion_style: CompletionStyle,
}

impl UpstreamConfig {
    pub fn new(base_url: &str) -> Result<Self, GatewayError> {
        let mut url = Url::parse(base_url).map_err(|e| GatewayError::Config(format!("base_url {base_url:?}: {e}")))?;
        // built without a TLS stack: upstreams are expected on a private network
        if url.cannot_be_a_base() || url.scheme() != "http" {
            return Err(GatewayError::Config(format!("base_url {base_url:?} is not an http:// URL")));
        }
        if !url.path().ends_with('/') {
            let p = format!("{}/", url.path());
            url.set_path(&p);
        }
        Ok(Self {
            base_url: url,
            logprobs_top_k: DEFAULT_TOP_K,
            request_timeout: DEFAULT_REQUEST_TIMEOUT,
            completion_style: CompletionStyle::Chat,
        })
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.logprobs_top_k == 0 {
            return Err(GatewayError::Config("logprobs_top_k must be at least 1".into()));
        }
        if self.request_timeout.is_zero() {
            return Err(GatewayError::Config("request_timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn endpoint(&self, path: &str) -> Url {
        self.base_url.join(path).expect("relative endpoint joins onto a base URL")
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub listen: SocketAddr,
    pub upstream: UpstreamConfig,
    pub policy: PolicyConfig,
    /// When false, requests are relayed to the upstream untouched.
    pub monitoring: bool,
    pub skip_health_check: bool,
}

impl GatewayConfig {
    pub fn new(listen: SocketAddr, upstream: UpstreamConfig, policy: PolicyConfig) -> Self {
        Self {
            listen,
            upstream,
            policy,
            monitoring: true,
            skip_health_check: false,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        self.upstream.validate()?;
        self.policy.validate().map_err(|e| GatewayError::Config(e.to_string()))
    }
}
