//! Slow, obviously-correct reference computations for tests.
//!
//! Nothing here shares code with the production crates: sums are recomputed
//! from scratch at every step, marker detection searches the full text, and
//! exact totals use 128-bit fixed point.

/// Per-step values recomputed from the full prefix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepValues {
    pub ltf: f64,
    pub gtf: f64,
    pub rpdi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleVariant {
    Standard,
    NoGtf,
    NoLtf,
    NoBtm,
}

#[derive(Debug, Clone)]
pub struct OracleParams {
    pub window: usize,
    pub threshold: f64,
    pub budget: u64,
    pub answer_reserve: u64,
    pub gtf_epsilon: f64,
    pub variant: OracleVariant,
    pub marker: String,
    pub boundaries: Vec<String>,
}

impl OracleParams {
    pub fn effective_window(&self) -> usize {
        if self.variant == OracleVariant::NoLtf {
            1
        } else {
            self.window
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleOutcome {
    /// Tokens ran out before any terminal event.
    Pending { consumed: u64 },
    ExitedEarly { step: u64, rpdi: f64 },
    EndedNaturally { step: u64 },
    BudgetExhausted { step: u64 },
}

impl OracleOutcome {
    pub fn kind(&self) -> &'static str {
        match self {
            OracleOutcome::Pending { .. } => "pending",
            OracleOutcome::ExitedEarly { .. } => "exited-early",
            OracleOutcome::EndedNaturally { .. } => "ended-naturally",
            OracleOutcome::BudgetExhausted { .. } => "budget-exhausted",
        }
    }

    pub fn step(&self) -> Option<u64> {
        match *self {
            OracleOutcome::Pending { .. } => None,
            OracleOutcome::ExitedEarly { step, .. }
            | OracleOutcome::EndedNaturally { step }
            | OracleOutcome::BudgetExhausted { step } => Some(step),
        }
    }
}

/// Four independent accumulators; plain left-to-right within each lane.
pub fn slow_sum(values: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let chunks = values.chunks_exact(4);
    let rest = chunks.remainder();
    for c in chunks {
        lanes[0] += c[0];
        lanes[1] += c[1];
        lanes[2] += c[2];
        lanes[3] += c[3];
    }
    let mut total = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for v in rest {
        total += v;
    }
    total
}

const FIXED_SCALE: f64 = 18_446_744_073_709_551_616.0; // 2^64

/// Sum of non-negative values in 64.64 fixed point; error below n * 2^-64.
pub fn fixed_point_sum(values: &[f64]) -> f64 {
    let mut acc: i128 = 0;
    for &v in values {
        assert!(v >= 0.0 && v < 1e15, "fixed_point_sum expects moderate non-negative values");
        let int = v.trunc();
        let frac = v - int;
        acc += (int as i128) << 64;
        acc += (frac * FIXED_SCALE) as i128;
    }
    let int = (acc >> 64) as f64;
    let frac = (acc & ((1i128 << 64) - 1)) as f64 / FIXED_SCALE;
    int + frac
}

/// `-Σ p ln p`, naive.
pub fn entropy(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// Entropy of a top-k logprob list; `renormalize` rescales to unit mass.
pub fn topk_entropy(logprobs: &[f64], renormalize: bool) -> f64 {
    let probs: Vec<f64> = logprobs.iter().map(|l| l.min(0.0).exp()).collect();
    if renormalize {
        let z: f64 = probs.iter().sum();
        entropy(&probs.iter().map(|p| p / z).collect::<Vec<_>>())
    } else {
        entropy(&probs)
    }
}

/// LTF/GTF/RPDI at every step, each recomputed from scratch.
pub fn series(entropies: &[f64], params: &OracleParams) -> Vec<StepValues> {
    let w = params.effective_window();
    (1..=entropies.len())
        .map(|i| {
            let global = slow_sum(&entropies[..i]);
            let local = slow_sum(&entropies[i.saturating_sub(w)..i]);
            let ltf = local / i.min(w) as f64;
            let gtf = if params.variant == OracleVariant::NoGtf {
                1.0
            } else {
                global / i as f64
            };
            let rpdi = (gtf >= params.gtf_epsilon).then(|| ltf / gtf);
            StepValues { ltf, gtf, rpdi }
        })
        .collect()
}

/// Suffix match after trailing-whitespace normalisation.
pub fn boundary(token: &str, members: &[String]) -> bool {
    let norm = |s: &str| s.trim_end_matches(|c: char| c.is_whitespace()).to_string();
    let token_norm = norm(token);
    members.iter().any(|m| {
        let m_norm = norm(m);
        token.ends_with(m.as_str()) || (!m_norm.is_empty() && token_norm.ends_with(&m_norm))
    })
}

/// Step (1-based) whose segment completes the first occurrence of `marker`.
pub fn marker_completion_step(segments: &[&str], marker: &str) -> Option<usize> {
    let mut text = String::new();
    for (i, s) in segments.iter().enumerate() {
        text.push_str(s);
        if text.contains(marker) {
            return Some(i + 1);
        }
    }
    None
}

/// Full session replay: natural-end check on the whole text so far, then
/// budget, then the threshold test at evaluation steps.
pub fn run_session(tokens: &[(String, f64)], params: &OracleParams) -> OracleOutcome {
    let cap = params.budget - params.answer_reserve;
    let w = params.effective_window() as u64;
    let mut text = String::new();
    for i in 1..=tokens.len() {
        let (t, _) = &tokens[i - 1];
        text.push_str(t);
        if text.contains(params.marker.as_str()) {
            return OracleOutcome::EndedNaturally { step: i as u64 };
        }
        let step = i as u64;
        if step >= cap {
            return OracleOutcome::BudgetExhausted { step };
        }
        let evaluated =
            step >= w && (params.variant == OracleVariant::NoBtm || boundary(t, &params.boundaries));
        if evaluated {
            let hs: Vec<f64> = tokens[..i].iter().map(|(_, h)| *h).collect();
            let global = slow_sum(&hs);
            let local = slow_sum(&hs[i - w as usize..]);
            let ltf = local / w as f64;
            let gtf = if params.variant == OracleVariant::NoGtf {
                1.0
            } else {
                global / i as f64
            };
            if gtf >= params.gtf_epsilon {
                let rpdi = ltf / gtf;
                if rpdi > params.threshold {
                    return OracleOutcome::ExitedEarly { step, rpdi };
                }
            }
        }
    }
    OracleOutcome::Pending {
        consumed: tokens.len() as u64,
    }
}
