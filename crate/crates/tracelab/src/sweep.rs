//! (W, λ, variant) grid sweeps. Every cell replays every trace from scratch.

use std::io::Write;

use rayon::prelude::*;
use rpdi_core::{Outcome, PolicyConfig, Variant};
use serde::Serialize;

use crate::error::LabError;
use crate::replay::PreparedTrace;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub windows: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub variants: Vec<Variant>,
}

impl SweepGrid {
    pub fn new(windows: Vec<usize>, thresholds: Vec<f64>, variants: Vec<Variant>) -> Self {
        Self {
            windows,
            thresholds,
            variants,
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len() * self.thresholds.len() * self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in output order: window, then threshold, then variant.
    pub fn cells(&self) -> Vec<(usize, f64, Variant)> {
        let mut out = Vec::with_capacity(self.len());
        for &w in &self.windows {
            for &t in &self.thresholds {
                for &v in &self.variants {
                    out.push((w, t, v));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DecisionHistogram {
    pub exited_early: usize,
    pub ended_naturally: usize,
    pub budget_exhausted: usize,
    pub pending: usize,
}

impl DecisionHistogram {
    fn add(&mut self, o: &Outcome) {
        match o {
            Outcome::ExitedEarly { .. } => self.exited_early += 1,
            Outcome::EndedNaturally { .. } => self.ended_naturally += 1,
            Outcome::BudgetExhausted { .. } => self.budget_exhausted += 1,
            Outcome::Pending => self.pending += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub window: usize,
    pub threshold: f64,
    pub variant: Variant,
    pub traces: usize,
    pub exit_rate: f64,
    /// Mean step of early exits; `None` when no trace exited.
    pub mean_exit_step: Option<f64>,
    pub mean_thinking_length: f64,
    pub histogram: DecisionHistogram,
    /// Per-trace outcomes, in input order.
    #[serde(skip)]
    pub outcomes: Vec<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    window: usize,
    threshold: f64,
    variant: &'a str,
    traces: usize,
    exit_rate: f64,
    mean_exit_step: Option<f64>,
    mean_thinking_length: f64,
    exited_early: usize,
    ended_naturally: usize,
    budget_exhausted: usize,
    pending: usize,
}

impl SweepResult {
    pub fn cell(&self, window: usize, threshold: f64, variant: Variant) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.window == window && c.threshold == threshold && c.variant == variant)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), LabError> {
        let mut out = csv::Writer::from_writer(w);
        for c in &self.cells {
            out.serialize(CsvRow {
                window: c.window,
                threshold: c.threshold,
                variant: c.variant.as_str(),
                traces: c.traces,
                exit_rate: c.exit_rate,
                mean_exit_step: c.mean_exit_step,
                mean_thinking_length: c.mean_thinking_length,
                exited_early: c.histogram.exited_early,
                ended_naturally: c.histogram.ended_naturally,
                budget_exhausted: c.histogram.budget_exhausted,
                pending: c.histogram.pending,
            })?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Replays every trace under every grid cell; `base` supplies all other
/// policy fields. Output order is independent of scheduling.
pub fn sweep(traces: &[PreparedTrace], grid: &SweepGrid, base: &PolicyConfig) -> Result<SweepResult, LabError> {
    if traces.is_empty() {
        return Err(LabError::EmptyTraceSet);
    }
    if grid.is_empty() {
        return Err(LabError::EmptyGrid);
    }
    let cells = grid
        .cells()
        .into_par_iter()
        .map(|(window, threshold, variant)| {
            let config = PolicyConfig {
                window,
                threshold,
                variant,
                ..base.clone()
            };
            config.validate().map_err(|source| LabError::Cell {
                window,
                threshold,
                variant: variant.to_string(),
                source,
            })?;
            run_cell(traces, config)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepResult { cells })
}

fn run_cell(traces: &[PreparedTrace], config: PolicyConfig) -> Result<SweepCell, LabError> {
    let mut histogram = DecisionHistogram::default();
    let mut outcomes = Vec::with_capacity(traces.len());
    let mut exit_steps = 0u64;
    let mut thinking = 0u64;
    for t in traces {
        let r = t.outcome(&config)?;
        histogram.add(&r.outcome);
        if let Outcome::ExitedEarly { step, .. } = r.outcome {
            exit_steps += step;
        }
        thinking += r.thinking_tokens;
        outcomes.push(r.outcome);
    }
    let n = traces.len() as f64;
    Ok(SweepCell {
        window: config.window,
        threshold: config.threshold,
        variant: config.variant,
        traces: traces.len(),
        exit_rate: histogram.exited_early as f64 / n,
        mean_exit_step: (histogram.exited_early > 0)
            .then(|| exit_steps as f64 / histogram.exited_early as f64),
        mean_thinking_length: thinking as f64 / n,
        histogram,
        outcomes,
    })
}
