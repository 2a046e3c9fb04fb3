//! Incremental sliding-window entropy tracking and the deviation index.
//!
//! Per token the monitor does O(1) work: the entropy is added to a global and
//! a local accumulator, and once more than `W` tokens have been seen the value
//! leaving the window is subtracted from the local one. Only the last `W`
//! entropies are retained.
//!
//! * LTF = local sum / min(step, W)
//! * GTF = global sum / step (fixed to 1 for [`Variant::NoGtf`])
//! * RPDI = LTF / GTF, undefined while GTF < `gtf_epsilon`
//!
//! RPDI is evaluated once `step >= W`, at boundary tokens only unless the
//! variant is [`Variant::NoBtm`], and triggers an early exit when strictly
//! greater than the threshold.

use serde::{Deserialize, Serialize};

use crate::boundary::is_boundary;
use crate::config::{PolicyConfig, Variant};
use crate::entropy::TokenObservation;
use crate::error::{ConfigError, MonitorError};
use crate::summation::{compensated_sum, NeumaierSum};

/// Exact rebuild of the running sums happens every this many observations.
pub const DEFAULT_REBUILD_INTERVAL: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Thinking,
    Answering,
    Terminated,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Thinking => "thinking",
            Phase::Answering => "answering",
            Phase::Terminated => "terminated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DecisionKind {
    Continue,
    EarlyExit { rpdi: f64 },
    NaturalEnd,
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitDecision {
    #[serde(flatten)]
    pub kind: DecisionKind,
    pub at_step: u64,
}

impl ExitDecision {
    pub fn is_continue(&self) -> bool {
        matches!(self.kind, DecisionKind::Continue)
    }

    pub fn rpdi(&self) -> Option<f64> {
        match self.kind {
            DecisionKind::EarlyExit { rpdi } => Some(rpdi),
            _ => None,
        }
    }
}

/// Monitor values after the most recent observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub step: u64,
    pub entropy: f64,
    pub ltf: f64,
    pub gtf: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rpdi: Option<f64>,
    /// Whether this step was an evaluation point (warm, and boundary or no-btm).
    pub evaluated: bool,
}

/// Fixed-capacity ring of the most recent entropies.
#[derive(Debug, Clone)]
struct EntropyRing {
    buf: Vec<f64>,
    capacity: usize,
    head: usize,
}

impl EntropyRing {
    fn new(capacity: usize) -> Self {
        Self {
            buf: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            head: 0,
        }
    }

    /// Pushes a value, returning the evicted one once the ring is full.
    #[inline]
    fn push(&mut self, value: f64) -> Option<f64> {
        if self.buf.len() < self.capacity {
            self.buf.push(value);
            None
        } else {
            let old = std::mem::replace(&mut self.buf[self.head], value);
            self.head += 1;
            if self.head == self.capacity {
                self.head = 0;
            }
            Some(old)
        }
    }

    fn len(&self) -> usize {
        self.buf.len()
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.buf[self.head..].iter().chain(&self.buf[..self.head]).copied()
    }
}

#[derive(Debug, Clone)]
pub struct Monitor {
    config: PolicyConfig,
    window: usize,
    thinking_cap: u64,
    step: u64,
    sum_global: f64,
    sum_local: f64,
    global_exact: NeumaierSum,
    ring: EntropyRing,
    phase: Phase,
    /// Set while every observed entropy is bitwise identical; the means are
    /// then that value exactly.
    constant: Option<f64>,
    all_constant: bool,
    last: Option<Metrics>,
    rebuild_interval: Option<u64>,
}

impl Monitor {
    pub fn new(config: PolicyConfig) -> Result<Self, ConfigError> {
        Self::with_rebuild_interval(config, Some(DEFAULT_REBUILD_INTERVAL))
    }

    /// `None` disables periodic rebuilds entirely.
    pub fn with_rebuild_interval(
        config: PolicyConfig,
        rebuild_interval: Option<u64>,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let window = config.effective_window();
        Ok(Self {
            window,
            thinking_cap: config.thinking_cap(),
            step: 0,
            sum_global: 0.0,
            sum_local: 0.0,
            global_exact: NeumaierSum::new(),
            ring: EntropyRing::new(window),
            phase: Phase::Thinking,
            constant: None,
            all_constant: true,
            last: None,
            rebuild_interval: rebuild_interval.filter(|&n| n > 0),
            config,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn ring_capacity(&self) -> usize {
        self.ring.capacity
    }

    pub fn ring_len(&self) -> usize {
        self.ring.len()
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn sum_global(&self) -> f64 {
        self.sum_global
    }

    pub fn sum_local(&self) -> f64 {
        self.sum_local
    }

    /// Compensated running total of every observed entropy.
    pub fn exact_global(&self) -> f64 {
        self.global_exact.value()
    }

    /// Compensated sum of the entropies currently in the window.
    pub fn exact_local(&self) -> f64 {
        compensated_sum(self.ring.values())
    }

    pub fn last_metrics(&self) -> Option<Metrics> {
        self.last
    }

    /// Local transition frequency; `None` before the first observation.
    pub fn ltf(&self) -> Option<f64> {
        if self.step == 0 {
            return None;
        }
        if let Some(c) = self.constant {
            return Some(c);
        }
        Some(self.sum_local / self.step.min(self.window as u64) as f64)
    }

    /// Global transition frequency; `None` before the first observation.
    pub fn gtf(&self) -> Option<f64> {
        if self.step == 0 {
            return None;
        }
        Some(match (self.config.variant, self.constant) {
            (Variant::NoGtf, _) => 1.0,
            (_, Some(c)) => c,
            _ => self.sum_global / self.step as f64,
        })
    }

    /// Deviation index; `None` before the first observation or while the
    /// global baseline is below `gtf_epsilon`.
    pub fn rpdi(&self) -> Option<f64> {
        let gtf = self.gtf()?;
        if gtf < self.config.gtf_epsilon {
            return None;
        }
        Some(self.ltf()? / gtf)
    }

    pub fn observe(&mut self, obs: &TokenObservation) -> Result<ExitDecision, MonitorError> {
        if self.phase != Phase::Thinking {
            return Err(MonitorError::NotThinking(self.phase.as_str()));
        }
        if obs.step != self.step + 1 {
            return Err(MonitorError::OutOfOrder {
                expected: self.step + 1,
                got: obs.step,
            });
        }
        let h = obs.entropy_nats;
        if !(h >= 0.0 && h.is_finite()) {
            return Err(MonitorError::InvalidEntropy(h));
        }

        self.step += 1;
        if self.all_constant {
            match self.constant {
                None if self.step == 1 => self.constant = Some(h),
                Some(c) if c.to_bits() == h.to_bits() => {}
                _ => {
                    self.constant = None;
                    self.all_constant = false;
                }
            }
        }
        self.sum_global += h;
        self.global_exact.add(h);
        self.sum_local += h;
        if let Some(evicted) = self.ring.push(h) {
            self.sum_local -= evicted;
            if self.sum_local < 0.0 {
                self.sum_local = 0.0;
            }
        }
        if let Some(n) = self.rebuild_interval {
            if self.step % n == 0 {
                self.rebuild_sums();
            }
        }

        let evaluated = self.step >= self.window as u64
            && (self.config.variant == Variant::NoBtm
                || is_boundary(&obs.token_text, &self.config.boundary_set));
        let rpdi = self.rpdi();
        self.last = Some(Metrics {
            step: self.step,
            entropy: h,
            ltf: self.ltf().unwrap_or(0.0),
            gtf: self.gtf().unwrap_or(0.0),
            rpdi,
            evaluated,
        });

        let kind = if self.step >= self.thinking_cap {
            DecisionKind::BudgetExhausted
        } else {
            match rpdi {
                Some(r) if evaluated && r > self.config.threshold => DecisionKind::EarlyExit { rpdi: r },
                _ => DecisionKind::Continue,
            }
        };
        if !matches!(kind, DecisionKind::Continue) {
            self.phase = Phase::Answering;
        }
        Ok(ExitDecision {
            kind,
            at_step: self.step,
        })
    }

    /// Recomputes both sums exactly: local from the ring, global from the
    /// compensated running total.
    pub fn rebuild_sums(&mut self) {
        self.sum_local = self.exact_local();
        self.sum_global = self.global_exact.value();
    }

    /// Leaves the thinking phase without a monitor decision (natural end).
    pub fn end_thinking(&mut self) {
        if self.phase == Phase::Thinking {
            self.phase = Phase::Answering;
        }
    }

    pub fn terminate(&mut self) {
        self.phase = Phase::Terminated;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundarySet;

    fn cfg(window: usize, threshold: f64) -> PolicyConfig {
        PolicyConfig {
            window,
            threshold,
            budget: 10_000,
            answer_reserve: 0,
            ..PolicyConfig::default()
        }
    }

    fn run(m: &mut Monitor, entropies: &[f64], boundary_at: impl Fn(u64) -> bool) -> Vec<ExitDecision> {
        let mut out = Vec::new();
        for (i, &h) in entropies.iter().enumerate() {
            let step = i as u64 + 1;
            let text = if boundary_at(step) { "." } else { "x" };
            out.push(m.observe(&TokenObservation::new(step, text, h)).unwrap());
        }
        out
    }

    #[test]
    fn fresh_state() {
        let m = Monitor::new(PolicyConfig::default()).unwrap();
        assert_eq!(m.step(), 0);
        assert_eq!(m.sum_global(), 0.0);
        assert_eq!(m.sum_local(), 0.0);
        assert_eq!(m.ring_len(), 0);
        assert_eq!(m.phase(), Phase::Thinking);
        assert_eq!(m.ring_capacity(), 512);
        assert_eq!(m.config().threshold, 2.0);
        assert!(m.ltf().is_none() && m.rpdi().is_none());

        let mut c = PolicyConfig::default();
        c.variant = Variant::NoLtf;
        c.window = 1;
        assert_eq!(Monitor::new(c).unwrap().ring_capacity(), 1);
    }

    #[test]
    fn rejects_invalid_config() {
        let mut c = PolicyConfig::default();
        c.window = 0;
        assert!(Monitor::new(c).is_err());
    }

    #[test]
    fn tie_at_threshold_does_not_trigger() {
        // W=4: local = 8, LTF 2.0; global 8 over 8 steps, GTF 1.0; RPDI = 2.0.
        let mut m = Monitor::new(cfg(4, 2.0)).unwrap();
        let d = run(&mut m, &[0., 0., 0., 0., 2., 2., 2., 2.], |s| s == 8);
        assert!(d.iter().all(ExitDecision::is_continue));
        assert_eq!(m.sum_local(), 8.0);
        assert_eq!(m.ltf(), Some(2.0));
        assert_eq!(m.gtf(), Some(1.0));
        assert_eq!(m.rpdi(), Some(2.0));
    }

    #[test]
    fn zero_prefix_pins_ratio_at_two() {
        // With W zeros followed by W positive values the ratio is 2 exactly
        // whatever the tail looks like.
        for last in [2.5, 3.0] {
            let mut m = Monitor::new(cfg(4, 2.0)).unwrap();
            let d = run(&mut m, &[0., 0., 0., 0., 2., 2., 2., last], |s| s == 8);
            assert!(d[7].is_continue());
            assert_eq!(m.rpdi(), Some(2.0));
        }
        let mut m = Monitor::new(cfg(4, 2.0)).unwrap();
        run(&mut m, &[0., 0., 0., 0., 2., 2., 2., 2.5], |_| false);
        assert_eq!(m.ltf(), Some(2.125));
        assert_eq!(m.gtf(), Some(1.0625));
    }

    #[test]
    fn spike_after_flat_prefix_exits() {
        // step 8: local 9 over 4, global 9 over 8, ratio 2.0 (tie);
        // step 9: local 0+4+5+6 = 15 over 4, global 15 over 9, ratio 2.25.
        let mut m = Monitor::new(cfg(4, 2.0)).unwrap();
        let d = run(&mut m, &[0., 0., 0., 0., 0., 0., 4., 5., 6.], |s| s >= 8);
        assert!(d[7].is_continue()); // 9/4 over 9/8 = 2.0 exactly
        let rpdi = d[8].rpdi().expect("exit at step 9");
        assert!((rpdi - (15.0 / 4.0) / (15.0 / 9.0)).abs() < 1e-12);
        assert_eq!(d[8].at_step, 9);
        assert_eq!(m.phase(), Phase::Answering);
    }

    #[test]
    fn all_zero_entropy_never_triggers() {
        let mut m = Monitor::new(cfg(4, 2.0)).unwrap();
        let d = run(&mut m, &[0.0; 12], |_| true);
        assert!(d.iter().all(ExitDecision::is_continue));
        assert_eq!(m.rpdi(), None);
    }

    #[test]
    fn constant_entropy_is_exactly_one() {
        let mut m = Monitor::new(cfg(8, 2.0)).unwrap();
        for step in 1..=100u64 {
            m.observe(&TokenObservation::new(step, ".", 0.37)).unwrap();
            if step >= 8 {
                assert_eq!(m.rpdi(), Some(1.0), "step {step}");
            }
        }
    }

    #[test]
    fn no_gtf_uses_raw_ltf() {
        let mut c = cfg(2, 2.0);
        c.variant = Variant::NoGtf;
        let mut m = Monitor::new(c).unwrap();
        run(&mut m, &[5.0, 1.7, 1.7], |_| false);
        assert_eq!(m.gtf(), Some(1.0));
        assert!((m.rpdi().unwrap() - 1.7).abs() < 1e-15);
    }

    #[test]
    fn one_shot_and_ordering() {
        let mut m = Monitor::new(cfg(2, 1.2)).unwrap();
        m.observe(&TokenObservation::new(1, "x", 0.1)).unwrap();
        assert_eq!(
            m.observe(&TokenObservation::new(3, "x", 0.1)),
            Err(MonitorError::OutOfOrder { expected: 2, got: 3 })
        );
        m.observe(&TokenObservation::new(2, "x", 0.1)).unwrap();
        let d = m.observe(&TokenObservation::new(3, ".", 5.0)).unwrap();
        assert!(d.rpdi().is_some());
        assert_eq!(
            m.observe(&TokenObservation::new(4, ".", 5.0)),
            Err(MonitorError::NotThinking("answering"))
        );
    }

    #[test]
    fn invalid_entropy_rejected() {
        let mut m = Monitor::new(cfg(2, 1.5)).unwrap();
        assert!(m.observe(&TokenObservation::new(1, "x", -0.5)).is_err());
        assert!(m.observe(&TokenObservation::new(1, "x", f64::NAN)).is_err());
        assert_eq!(m.step(), 0);
    }

    #[test]
    fn budget_wins_tie_with_exit() {
        let mut c = cfg(2, 1.5);
        c.budget = 4;
        c.answer_reserve = 1;
        let mut m = Monitor::new(c).unwrap();
        let d = run(&mut m, &[0.1, 0.1, 9.0], |_| true);
        assert_eq!(d[2].kind, DecisionKind::BudgetExhausted);
        assert_eq!(d[2].at_step, 3);
    }

    #[test]
    fn no_boundary_tokens_means_no_exit() {
        let mut c = cfg(2, 1.01);
        c.boundary_set = BoundarySet::empty();
        let mut m = Monitor::new(c).unwrap();
        let d = run(&mut m, &[0.1, 0.1, 9.0, 9.0, 0.0, 20.0], |_| true);
        assert!(d.iter().all(ExitDecision::is_continue));
    }

    #[test]
    fn rebuild_on_fresh_state_is_identity() {
        let mut m = Monitor::new(PolicyConfig::default()).unwrap();
        m.rebuild_sums();
        assert_eq!(m.sum_local(), 0.0);
        assert_eq!(m.sum_global(), 0.0);
        assert_eq!(m.step(), 0);
    }

    #[test]
    fn ring_keeps_last_window() {
        let mut r = EntropyRing::new(3);
        assert_eq!(r.push(1.0), None);
        assert_eq!(r.push(2.0), None);
        assert_eq!(r.push(3.0), None);
        assert_eq!(r.push(4.0), Some(1.0));
        assert_eq!(r.push(5.0), Some(2.0));
        assert_eq!(r.values().collect::<Vec<_>>(), vec![3.0, 4.0, 5.0]);
        assert_eq!(r.len(), 3);
    }
}
