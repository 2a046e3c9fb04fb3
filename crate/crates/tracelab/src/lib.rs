//! Offline tooling for entropy-deviation policies: a versioned JSONL trace
//! format, deterministic replay, (W, λ, variant) sweeps, corpus entropy
//! statistics, a fixed-budget baseline and a synthetic trace generator.

pub mod analytics;
pub mod baseline;
pub mod error;
pub mod golden;
pub mod replay;
pub mod sweep;
pub mod synth;
pub mod trace;

pub use analytics::{entropy_contribution_bins, is_complete_word, top_contributor_tokens, BinReport, TokenFrequency};
pub use baseline::{fixed_budget_policy, BudgetDecision, BudgetTable};
pub use error::{LabError, TraceError};
pub use replay::{replay, OutcomeTuple, PreparedTrace, ReplayResult, DEFAULT_CONTINUATION_ANSWER};
pub use sweep::{sweep, DecisionHistogram, SweepCell, SweepGrid, SweepResult};
pub use synth::{synth_longtail, synth_named, synth_trace, LongTailProfile, SpikeSpec, SynthProfile};
pub use trace::{read_dir, TopLogprob, Trace, TraceMeta, TracePhase, TraceRecord, SCHEMA_VERSION};
