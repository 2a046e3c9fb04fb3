//! Fixed token-budget truncation, for side-by-side comparison with the
//! entropy-driven policy.

use serde::Serialize;

use crate::error::LabError;
use crate::trace::Trace;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BudgetDecision {
    pub trace: String,
    pub thinking_length: usize,
    pub truncated: bool,
    /// Last thinking step kept.
    pub stop_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetTable {
    pub budget: usize,
    pub rows: Vec<BudgetDecision>,
}

impl BudgetTable {
    pub fn truncation_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.truncated).count() as f64 / self.rows.len() as f64
    }
}

/// Cuts every trace's thinking phase at `budget` tokens.
pub fn fixed_budget_policy(traces: &[Trace], budget: usize) -> Result<BudgetTable, LabError> {
    if budget == 0 {
        return Err(LabError::ZeroBudget);
    }
    let rows = traces
        .iter()
        .map(|t| {
            let len = t.thinking_len();
            BudgetDecision {
                trace: t.name.clone(),
                thinking_length: len,
                truncated: len > budget,
                stop_step: len.min(budget),
            }
        })
        .collect();
    Ok(BudgetTable { budget, rows })
}
