//! Policy configuration shared by the monitor, session controller, gateway
//! and trace tooling.

use serde::{Deserialize, Serialize};

use crate::boundary::BoundarySet;
use crate::entropy::TailPolicy;
use crate::error::ConfigError;

pub const DEFAULT_WINDOW: usize = 512;
pub const DEFAULT_THRESHOLD: f64 = 2.0;
pub const DEFAULT_BUDGET: u64 = 16_384;
/// Budget profile for models with extended reasoning chains.
pub const EXTENDED_BUDGET: u64 = 32_768;
pub const DEFAULT_ANSWER_RESERVE: u64 = 256;
pub const DEFAULT_GTF_EPSILON: f64 = 1e-9;
pub const DEFAULT_TERMINATION_MARKER: &str = "</think>";

/// Which parts of the deviation index are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Standard,
    /// Global baseline fixed at 1; the index is the windowed mean alone.
    NoGtf,
    /// Window forced to a single token.
    NoLtf,
    /// Evaluate at every token past warmup instead of only at boundaries.
    NoBtm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Standard, Variant::NoGtf, Variant::NoLtf, Variant::NoBtm];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::NoGtf => "no-gtf",
            Variant::NoLtf => "no-ltf",
            Variant::NoBtm => "no-btm",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant {s:?} (expected standard, no-gtf, no-ltf or no-btm)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Sliding window length in tokens.
    pub window: usize,
    /// Early exit fires when the index is strictly greater than this.
    pub threshold: f64,
    pub boundary_set: BoundarySet,
    /// Total token budget (thinking + answer).
    pub budget: u64,
    /// Tokens carved out of `budget` for the answer when thinking runs out.
    pub answer_reserve: u64,
    /// The index is undefined while the global mean is below this.
    pub gtf_epsilon: f64,
    pub variant: Variant,
    pub tail_policy: TailPolicy,
    pub termination_marker: String,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            threshold: DEFAULT_THRESHOLD,
            boundary_set: BoundarySet::default(),
            budget: DEFAULT_BUDGET,
            answer_reserve: DEFAULT_ANSWER_RESERVE,
            gtf_epsilon: DEFAULT_GTF_EPSILON,
            variant: Variant::Standard,
            tail_policy: TailPolicy::Renormalize,
            termination_marker: DEFAULT_TERMINATION_MARKER.to_string(),
        }
    }
}

impl PolicyConfig {
    /// Default policy with the extended 32k budget.
    pub fn extended() -> Self {
        Self {
            budget: EXTENDED_BUDGET,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.window == 0 {
            return Err(ConfigError::ZeroWindow);
        }
        if !(self.threshold > 0.0) {
            return Err(ConfigError::NonPositiveThreshold(self.threshold));
        }
        if !(self.gtf_epsilon > 0.0) {
            return Err(ConfigError::NonPositiveEpsilon(self.gtf_epsilon));
        }
        if self.budget == 0 {
            return Err(ConfigError::ZeroBudget);
        }
        if self.variant == Variant::Standard && self.budget <= self.window as u64 {
            return Err(ConfigError::BudgetNotAboveWindow {
                budget: self.budget,
                window: self.window,
            });
        }
        if self.answer_reserve >= self.budget {
            return Err(ConfigError::ReserveTooLarge {
                reserve: self.answer_reserve,
                budget: self.budget,
            });
        }
        if self.termination_marker.is_empty() {
            return Err(ConfigError::EmptyMarker);
        }
        if self.boundary_set.iter().any(str::is_empty) {
            return Err(ConfigError::EmptyBoundary);
        }
        Ok(())
    }

    /// Window actually used by the monitor (`no-ltf` forces 1).
    pub fn effective_window(&self) -> usize {
        match self.variant {
            Variant::NoLtf => 1,
            _ => self.window,
        }
    }

    /// Last step at which the thinking phase may still run.
    pub fn thinking_cap(&self) -> u64 {
        self.budget - self.answer_reserve
    }
}
