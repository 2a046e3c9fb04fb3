//! Reasoning path deviation monitoring.
//!
//! A reasoning model's per-token entropy is tracked as it streams. The ratio
//! of the recent (windowed) mean entropy to the running global mean is the
//! deviation index: it sits near 1 while reasoning progresses steadily and
//! spikes when the model starts wandering between alternatives ("Wait",
//! "But", ...). When the index exceeds a threshold at a sentence boundary the
//! thinking phase is cut short: the termination marker is appended and the
//! model answers from the reasoning so far, within the remaining budget.
//!
//! * [`entropy`] computes token entropy from distributions or top-k logprobs.
//! * [`monitor`] keeps the O(1)-per-token accumulators and emits decisions.
//! * [`session`] drives one request's thinking/answer lifecycle.

pub mod boundary;
pub mod config;
pub mod entropy;
pub mod error;
pub mod monitor;
pub mod session;
pub mod summation;

pub use boundary::{is_boundary, BoundarySet, DEFAULT_BOUNDARIES};
pub use config::{PolicyConfig, Variant};
pub use entropy::{
    decode_observation, entropy_from_topk_logprobs, shannon_entropy, DistributionKind,
    EntropySource, ProbDistribution, TailPolicy, TokenObservation,
};
pub use error::{ConfigError, EntropyError, MonitorError, SessionError};
pub use monitor::{DecisionKind, ExitDecision, Metrics, Monitor, Phase};
pub use session::{detect_marker, ExitPlan, Outcome, Session, SessionAction};
pub use summation::{compensated_sum, NeumaierSum};
