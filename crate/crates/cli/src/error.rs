use rpdi_gateway::GatewayError;
use rpdi_tracelab::{LabError, TraceError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Trace { path: String, source: TraceError },
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0} invalid trace file(s)")]
    InvalidTraces(usize),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Trace { .. } | CliError::InvalidTraces(_) => "trace",
            CliError::Lab(_) => "lab",
            CliError::Gateway(e) => e.kind(),
            CliError::Io { .. } => "io",
        }
    }

    /// 2: bad configuration or usage, 3: invalid input data, 1: anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Gateway(GatewayError::Config(_)) => 2,
            CliError::Trace { .. } | CliError::InvalidTraces(_) => 3,
            _ => 1,
        }
    }

    /// Single-line `key=value` record followed by the human-readable text.
    pub fn line(&self) -> String {
        let mut head = format!("rpdi: error kind={} code={}", self.kind(), self.exit_code());
        match self {
            CliError::Trace { path, source } => {
                head.push_str(&format!(" path={path:?}"));
                if let Some(l) = source.line() {
                    head.push_str(&format!(" line={l}"));
                }
            }
            CliError::Io { path, .. } => head.push_str(&format!(" path={path:?}")),
            _ => {}
        }
        format!("{head}: {}", self.to_string().replace('\n', " "))
    }
}
