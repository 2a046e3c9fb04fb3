use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EntropyError {
    #[error("probability distribution has no entries")]
    Empty,
    #[error("entry {index} has invalid probability {value}")]
    InvalidProbability { index: usize, value: f64 },
    #[error("full distribution sums to {sum}, expected 1 within {tolerance}")]
    NotNormalized { sum: f64, tolerance: f64 },
    #[error("top-k distribution sums to {sum}, which exceeds 1 + {tolerance}")]
    ExcessMass { sum: f64, tolerance: f64 },
    #[error("logprob {index} is {value}; logprobs must be <= 0")]
    PositiveLogprob { index: usize, value: f64 },
    #[error("logprob {index} is not a number")]
    NanLogprob { index: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("window must be >= 1")]
    ZeroWindow,
    #[error("threshold must be > 0, got {0}")]
    NonPositiveThreshold(f64),
    #[error("gtf_epsilon must be > 0, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("budget ({budget}) must exceed the window ({window}) for the standard variant")]
    BudgetNotAboveWindow { budget: u64, window: usize },
    #[error("budget must be >= 1")]
    ZeroBudget,
    #[error("answer_reserve ({reserve}) must be smaller than the budget ({budget})")]
    ReserveTooLarge { reserve: u64, budget: u64 },
    #[error("termination marker must not be empty")]
    EmptyMarker,
    #[error("boundary set contains an empty string")]
    EmptyBoundary,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error("out-of-order observation: expected step {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("monitor no longer accepts observations (phase: {0})")]
    NotThinking(&'static str),
    #[error("entropy {0} is not a finite non-negative value")]
    InvalidEntropy(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("session already has an outcome")]
    Finished,
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("answer tokens ({requested}) exceed remaining budget ({remaining})")]
    BudgetExceeded { requested: u64, remaining: u64 },
}
