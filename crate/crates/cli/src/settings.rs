//! Layered configuration: built-in defaults, then a TOML file, then `RPDI_*`
//! environment variables, then command-line flags.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rpdi_core::{PolicyConfig, TailPolicy, Variant};
use rpdi_gateway::config::{DEFAULT_LISTEN, DEFAULT_REQUEST_TIMEOUT, DEFAULT_TOP_K, DEFAULT_UPSTREAM};
use rpdi_gateway::{CompletionStyle, GatewayConfig, UpstreamConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const ENV_CONFIG: &str = "RPDI_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpstreamSection {
    pub base_url: String,
    pub logprobs_top_k: usize,
    pub request_timeout_secs: u64,
    pub completion_style: CompletionStyle,
}

impl Default for UpstreamSection {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_UPSTREAM.to_string(),
            logprobs_top_k: DEFAULT_TOP_K,
            request_timeout_secs: DEFAULT_REQUEST_TIMEOUT.as_secs(),
            completion_style: CompletionStyle::Chat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub listen: String,
    pub monitoring: bool,
    pub skip_health_check: bool,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            listen: DEFAULT_LISTEN.to_string(),
            monitoring: true,
            skip_health_check: false,
        }
    }
}

/// Effective settings; also the schema of the TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub policy: PolicyConfig,
    pub upstream: UpstreamSection,
    pub server: ServerSection,
}

/// Values that environment variables and flags can override.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub window: Option<usize>,
    pub threshold: Option<f64>,
    pub budget: Option<u64>,
    pub answer_reserve: Option<u64>,
    pub variant: Option<Variant>,
    pub tail_policy: Option<TailPolicy>,
    pub upstream_url: Option<String>,
    pub top_k: Option<usize>,
    pub listen: Option<String>,
    pub monitoring: Option<bool>,
}

/// Environment variable for each override, in declaration order.
pub const ENV_VARS: [&str; 10] = [
    "RPDI_WINDOW",
    "RPDI_THRESHOLD",
    "RPDI_BUDGET",
    "RPDI_ANSWER_RESERVE",
    "RPDI_VARIANT",
    "RPDI_TAIL_POLICY",
    "RPDI_UPSTREAM_URL",
    "RPDI_TOP_K",
    "RPDI_LISTEN",
    "RPDI_MONITORING",
];

fn env_value<T: std::str::FromStr>(env: &dyn Fn(&str) -> Option<String>, var: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    match env(var) {
        None => Ok(None),
        Some(raw) => raw
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| CliError::Config(format!("{var}={raw:?}: {e}"))),
    }
}

impl Overrides {
    pub fn from_env(env: &dyn Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        Ok(Self {
            window: env_value(env, "RPDI_WINDOW")?,
            threshold: env_value(env, "RPDI_THRESHOLD")?,
            budget: env_value(env, "RPDI_BUDGET")?,
            answer_reserve: env_value(env, "RPDI_ANSWER_RESERVE")?,
            variant: env_value(env, "RPDI_VARIANT")?,
            tail_policy: env_value(env, "RPDI_TAIL_POLICY")?,
            upstream_url: env("RPDI_UPSTREAM_URL"),
            top_k: env_value(env, "RPDI_TOP_K")?,
            listen: env("RPDI_LISTEN"),
            monitoring: env_value(env, "RPDI_MONITORING")?,
        })
    }

    fn apply(&self, s: &mut Settings) {
        let p = &mut s.policy;
        if let Some(v) = self.window {
            p.window = v;
        }
        if let Some(v) = self.threshold {
            p.threshold = v;
        }
        if let Some(v) = self.budget {
            p.budget = v;
        }
        if let Some(v) = self.answer_reserve {
            p.answer_reserve = v;
        }
        if let Some(v) = self.variant {
            p.variant = v;
        }
        if let Some(v) = self.tail_policy {
            p.tail_policy = v;
        }
        if let Some(v) = &self.upstream_url {
            s.upstream.base_url = v.clone();
        }
        if let Some(v) = self.top_k {
            s.upstream.logprobs_top_k = v;
        }
        if let Some(v) = &self.listen {
            s.server.listen = v.clone();
        }
        if let Some(v) = self.monitoring {
            s.server.monitoring = v;
        }
    }
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn load_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Resolves `flags > env > file > defaults`. The file comes from
    /// `config_path`, else from `RPDI_CONFIG`.
    pub fn resolve(
        config_path: Option<&Path>,
        env: &dyn Fn(&str) -> Option<String>,
        flags: &Overrides,
    ) -> Result<Self, CliError> {
        let path = config_path.map(Path::to_path_buf).or_else(|| env(ENV_CONFIG).map(PathBuf::from));
        let mut s = match path {
            Some(p) => Self::load_file(&p)?,
            None => Self::default(),
        };
        Overrides::from_env(env)?.apply(&mut s);
        flags.apply(&mut s);
        s.policy.validate().map_err(|e| CliError::Config(format!("policy: {e}")))?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }

    pub fn gateway_config(&self) -> Result<GatewayConfig, CliError> {
        let listen: SocketAddr = self
            .server
            .listen
            .parse()
            .map_err(|e| CliError::Config(format!("listen {:?}: {e}", self.server.listen)))?;
        let mut upstream = UpstreamConfig::new(&self.upstream.base_url).map_err(|e| CliError::Config(e.to_string()))?;
        upstream.logprobs_top_k = self.upstream.logprobs_top_k;
        upstream.request_timeout = Duration::from_secs(self.upstream.request_timeout_secs);
        upstream.completion_style = self.upstream.completion_style;
        let mut config = GatewayConfig::new(listen, upstream, self.policy.clone());
        config.monitoring = self.server.monitoring;
        config.skip_health_check = self.server.skip_health_check;
        config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }
}
