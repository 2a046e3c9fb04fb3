//! Offline replay of a policy over a recorded trace.
//!
//! Replay drives a [`Session`] exactly as the gateway does for a live stream:
//! every record is fed in order until the session reaches a terminal action.
//! The transcript is what a client of the gateway would see.

use rpdi_core::{ExitPlan, Metrics, Outcome, PolicyConfig, Session, SessionAction, TokenObservation};
use serde::Serialize;

use crate::error::LabError;
use crate::trace::Trace;

/// Answer tokens a scripted upstream returns when a trace does not specify any.
pub const DEFAULT_CONTINUATION_ANSWER: &[&str] = &["\n\n", "The", " answer", " is", " 42", "."];

/// A trace with entropies decoded once, ready to replay under many policies.
#[derive(Debug, Clone)]
pub struct PreparedTrace {
    pub name: String,
    pub prompt: String,
    pub observations: Vec<TokenObservation>,
    pub continuation_answer: Vec<String>,
}

impl PreparedTrace {
    pub fn new(trace: &Trace) -> Result<Self, LabError> {
        let policy = trace.tail_policy();
        let observations = trace
            .records
            .iter()
            .map(|r| r.observation(policy))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|source| LabError::Trace {
                name: trace.name.clone(),
                source,
            })?;
        Ok(Self {
            name: trace.name.clone(),
            prompt: trace.meta.prompt.clone(),
            observations,
            continuation_answer: continuation_answer(trace),
        })
    }

    pub fn replay(&self, config: &PolicyConfig) -> Result<ReplayResult, LabError> {
        self.run(config, true)
    }

    /// Like [`replay`](Self::replay) without collecting the per-step series.
    pub fn outcome(&self, config: &PolicyConfig) -> Result<ReplayResult, LabError> {
        self.run(config, false)
    }

    fn run(&self, config: &PolicyConfig, with_series: bool) -> Result<ReplayResult, LabError> {
        let session_err = |source| LabError::Session {
            name: self.name.clone(),
            source,
        };
        let mut session = Session::start(self.prompt.clone(), config.clone()).map_err(session_err)?;
        let budget = config.budget as usize;
        let mut series = Vec::new();
        let mut transcript = String::new();
        let mut plan = None;
        let mut answer_tokens = 0u64;

        let mut rest = self.observations.iter();
        for obs in rest.by_ref() {
            let action = session.feed(obs).map_err(session_err)?;
            transcript.push_str(&obs.token_text);
            match action {
                SessionAction::KeepStreaming(_) => {
                    if with_series {
                        series.extend(session.monitor().last_metrics());
                    }
                }
                SessionAction::EnactExit(p) => {
                    if with_series {
                        series.extend(session.monitor().last_metrics());
                    }
                    plan = Some(p);
                    break;
                }
                SessionAction::Finish { .. } => break,
            }
        }

        match (&plan, session.outcome()) {
            (Some(p), _) => {
                transcript.push_str(&config.termination_marker);
                for t in self.continuation_answer.iter().take(p.answer_budget as usize) {
                    transcript.push_str(t);
                    answer_tokens += 1;
                }
            }
            (None, Outcome::EndedNaturally { step }) => {
                // the upstream keeps streaming the model's own answer
                let remaining = budget.saturating_sub(step as usize);
                for obs in rest.take(remaining) {
                    transcript.push_str(&obs.token_text);
                    answer_tokens += 1;
                }
            }
            _ => {}
        }
        session.record_answer_tokens(answer_tokens).map_err(session_err)?;
        session.finish();

        Ok(ReplayResult {
            name: self.name.clone(),
            outcome: session.outcome(),
            thinking_tokens: session.outcome().step().unwrap_or(session.monitor().step()),
            answer_tokens,
            exit_plan: plan,
            series,
            transcript,
        })
    }
}

fn continuation_answer(trace: &Trace) -> Vec<String> {
    if trace.meta.continuation_answer.is_empty() {
        DEFAULT_CONTINUATION_ANSWER.iter().map(|s| s.to_string()).collect()
    } else {
        trace.meta.continuation_answer.clone()
    }
}

/// Comparable summary of a run: outcome kind, terminal step and RPDI at exit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutcomeTuple {
    pub kind: &'static str,
    pub step: Option<u64>,
    pub rpdi: Option<f64>,
}

impl From<Outcome> for OutcomeTuple {
    fn from(o: Outcome) -> Self {
        Self {
            kind: o.kind_str(),
            step: o.step(),
            rpdi: o.rpdi(),
        }
    }
}

impl std::fmt::Display for OutcomeTuple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.kind)?;
        if let Some(s) = self.step {
            write!(f, " step={s}")?;
        }
        if let Some(r) = self.rpdi {
            write!(f, " rpdi={r:.6}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplayResult {
    pub name: String,
    pub outcome: Outcome,
    /// Thinking tokens consumed before the thinking phase closed.
    pub thinking_tokens: u64,
    pub answer_tokens: u64,
    pub exit_plan: Option<ExitPlan>,
    /// One entry per monitored thinking step.
    #[serde(skip)]
    pub series: Vec<Metrics>,
    pub transcript: String,
}

impl ReplayResult {
    pub fn tuple(&self) -> OutcomeTuple {
        self.outcome.into()
    }
}

pub fn replay(trace: &Trace, config: &PolicyConfig) -> Result<ReplayResult, LabError> {
    PreparedTrace::new(trace)?.replay(config)
}
