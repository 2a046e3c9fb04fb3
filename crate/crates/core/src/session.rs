//! Two-phase generation lifecycle around a [`Monitor`].
//!
//! Thinking tokens are appended to the reasoning text and fed to the monitor
//! until one of three things happens: the model writes the termination marker
//! itself (natural end), the monitor requests an early exit, or the thinking
//! budget runs out. In the latter two cases the caller must continue
//! generation from `prompt ⊕ reasoning ⊕ marker` with the advertised answer
//! budget.

use serde::{Deserialize, Serialize};

use crate::config::PolicyConfig;
use crate::entropy::TokenObservation;
use crate::error::{MonitorError, SessionError};
use crate::monitor::{DecisionKind, ExitDecision, Monitor};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    #[default]
    Pending,
    ExitedEarly { step: u64, rpdi: f64 },
    EndedNaturally { step: u64 },
    BudgetExhausted { step: u64 },
}

impl Outcome {
    pub fn is_pending(&self) -> bool {
        matches!(self, Outcome::Pending)
    }

    pub fn kind_str(&self) -> &'static str {
        match self {
            Outcome::Pending => "pending",
            Outcome::ExitedEarly { .. } => "exited-early",
            Outcome::EndedNaturally { .. } => "ended-naturally",
            Outcome::BudgetExhausted { .. } => "budget-exhausted",
        }
    }

    pub fn step(&self) -> Option<u64> {
        match *self {
            Outcome::Pending => None,
            Outcome::ExitedEarly { step, .. }
            | Outcome::EndedNaturally { step }
            | Outcome::BudgetExhausted { step } => Some(step),
        }
    }

    pub fn rpdi(&self) -> Option<f64> {
        match *self {
            Outcome::ExitedEarly { rpdi, .. } => Some(rpdi),
            _ => None,
        }
    }
}

/// What the caller must do to move a monitored generation into its answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitPlan {
    /// `prompt ⊕ reasoning ⊕ marker`.
    pub continuation_prefix: String,
    pub exit_step: u64,
    /// Tokens left for the answer: `budget - exit_step`.
    pub answer_budget: u64,
    pub rpdi: Option<f64>,
    /// Set when the thinking budget ran out instead of the monitor firing.
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionAction {
    KeepStreaming(ExitDecision),
    EnactExit(ExitPlan),
    /// The model closed its own thinking phase; keep streaming its answer.
    Finish { step: u64, answer_budget: u64 },
}

/// True iff `marker` occurs in `window_text`.
pub fn detect_marker(window_text: &str, marker: &str) -> bool {
    window_text.contains(marker)
}

fn floor_char_boundary(s: &str, mut index: usize) -> usize {
    while index > 0 && !s.is_char_boundary(index) {
        index -= 1;
    }
    index
}

#[derive(Debug, Clone)]
pub struct Session {
    prompt: String,
    reasoning: String,
    monitor: Monitor,
    tokens_consumed: u64,
    outcome: Outcome,
}

impl Session {
    pub fn start(prompt: impl Into<String>, config: PolicyConfig) -> Result<Self, SessionError> {
        Ok(Self::with_monitor(prompt, Monitor::new(config)?))
    }

    pub fn with_monitor(prompt: impl Into<String>, monitor: Monitor) -> Self {
        Self {
            prompt: prompt.into(),
            reasoning: String::new(),
            monitor,
            tokens_consumed: 0,
            outcome: Outcome::Pending,
        }
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    pub fn reasoning(&self) -> &str {
        &self.reasoning
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    pub fn config(&self) -> &PolicyConfig {
        self.monitor.config()
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    pub fn tokens_consumed(&self) -> u64 {
        self.tokens_consumed
    }

    pub fn answer_budget_remaining(&self) -> u64 {
        self.config().budget - self.tokens_consumed
    }

    pub fn continuation_prefix(&self) -> String {
        let marker = &self.config().termination_marker;
        let mut s = String::with_capacity(self.prompt.len() + self.reasoning.len() + marker.len());
        s.push_str(&self.prompt);
        s.push_str(&self.reasoning);
        s.push_str(marker);
        s
    }

    pub fn feed(&mut self, obs: &TokenObservation) -> Result<SessionAction, SessionError> {
        if !self.outcome.is_pending() {
            return Err(SessionError::Finished);
        }
        let expected = self.tokens_consumed + 1;
        if obs.step != expected {
            return Err(MonitorError::OutOfOrder {
                expected,
                got: obs.step,
            }
            .into());
        }
        if !(obs.entropy_nats >= 0.0 && obs.entropy_nats.is_finite()) {
            return Err(MonitorError::InvalidEntropy(obs.entropy_nats).into());
        }

        let marker_len = self.config().termination_marker.len();
        let before = self.reasoning.len();
        self.reasoning.push_str(&obs.token_text);
        self.tokens_consumed = obs.step;

        // Only an occurrence that ends inside the new text can be new.
        let from = floor_char_boundary(&self.reasoning, before.saturating_sub(marker_len - 1));
        if detect_marker(&self.reasoning[from..], &self.monitor.config().termination_marker) {
            self.monitor.end_thinking();
            self.outcome = Outcome::EndedNaturally { step: obs.step };
            return Ok(SessionAction::Finish {
                step: obs.step,
                answer_budget: self.answer_budget_remaining(),
            });
        }

        let decision = self.monitor.observe(obs)?;
        let (outcome, rpdi, budget_exhausted) = match decision.kind {
            DecisionKind::Continue | DecisionKind::NaturalEnd => {
                return Ok(SessionAction::KeepStreaming(decision))
            }
            DecisionKind::EarlyExit { rpdi } => (
                Outcome::ExitedEarly {
                    step: decision.at_step,
                    rpdi,
                },
                Some(rpdi),
                false,
            ),
            DecisionKind::BudgetExhausted => (
                Outcome::BudgetExhausted {
                    step: decision.at_step,
                },
                None,
                true,
            ),
        };
        self.outcome = outcome;
        Ok(SessionAction::EnactExit(ExitPlan {
            continuation_prefix: self.continuation_prefix(),
            exit_step: decision.at_step,
            answer_budget: self.answer_budget_remaining(),
            rpdi,
            budget_exhausted,
        }))
    }

    /// Counts answer-phase tokens against the budget; they are never observed
    /// by the monitor.
    pub fn record_answer_tokens(&mut self, n: u64) -> Result<(), SessionError> {
        let remaining = self.answer_budget_remaining();
        if n > remaining {
            return Err(SessionError::BudgetExceeded {
                requested: n,
                remaining,
            });
        }
        self.tokens_consumed += n;
        Ok(())
    }

    pub fn finish(&mut self) {
        self.monitor.terminate();
    }
}
