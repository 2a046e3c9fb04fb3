use rpdi_core::error::{ConfigError, EntropyError, SessionError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("trace has no meta record on its first line")]
    MissingMeta,
    #[error("line {line}: meta record must be the first line")]
    MetaNotFirst { line: usize },
    #[error("unsupported schema_version {0}")]
    SchemaVersion(u32),
    #[error("line {line}: step gap, expected step {expected} but found {got}")]
    StepGap { line: usize, expected: u64, got: u64 },
    #[error("line {line}: thinking record after the answer phase began")]
    PhaseOrder { line: usize },
    #[error("step {step}: record has neither entropy_nats nor top_logprobs")]
    NoEntropy { step: u64 },
    #[error("step {step}: invalid entropy_nats {value}")]
    InvalidEntropy { step: u64, value: f64 },
    #[error("step {step}: {source}")]
    Entropy { step: u64, source: EntropyError },
    #[error("line {line}: {source}")]
    AtLine { line: usize, source: Box<TraceError> },
    #[error("line {line}: entropy_nats {recorded} disagrees with top_logprobs ({computed})")]
    Disagreement {
        line: usize,
        recorded: f64,
        computed: f64,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TraceError {
    pub(crate) fn at_line(self, line: usize) -> Self {
        TraceError::AtLine {
            line,
            source: Box::new(self),
        }
    }

    /// The 1-based line number the error refers to, when known.
    pub fn line(&self) -> Option<usize> {
        match self {
            TraceError::Parse { line, .. }
            | TraceError::MetaNotFirst { line }
            | TraceError::StepGap { line, .. }
            | TraceError::PhaseOrder { line }
            | TraceError::AtLine { line, .. }
            | TraceError::Disagreement { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum LabError {
    #[error("trace {name}: {source}")]
    Trace { name: String, source: TraceError },
    #[error("invalid policy: {0}")]
    Config(#[from] ConfigError),
    #[error("trace {name}: {source}")]
    Session { name: String, source: SessionError },
    #[error("no traces given")]
    EmptyTraceSet,
    #[error("empty sweep grid")]
    EmptyGrid,
    #[error("sweep cell W={window} λ={threshold} {variant}: {source}")]
    Cell {
        window: usize,
        threshold: f64,
        variant: String,
        source: ConfigError,
    },
    #[error("n_bins must be positive")]
    ZeroBins,
    #[error("top_fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("invalid synth profile: {0}")]
    Profile(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
