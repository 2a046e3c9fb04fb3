//! Deterministic synthetic traces.
//!
//! Reasoning profiles produce a flat low-entropy baseline with optional
//! high-entropy spike regions built from transition words ("Wait", "But",
//! ...), boundary punctuation at a fixed period, and optionally a natural
//! `</think>` followed by answer tokens. With `top_k` set, every record
//! carries a geometric top-k distribution fitted to the target entropy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpdi_core::TailPolicy;
use serde::{Deserialize, Serialize};

use crate::error::LabError;
use crate::trace::{TopLogprob, Trace, TraceMeta, TracePhase, TraceRecord, SCHEMA_VERSION};

pub const PROFILE_NAMES: &[&str] = &["flat", "spike", "multi-spike", "natural", "budget", "longtail"];

const FILLER: &[&str] = &[
    " so", " we", " the", " value", " of", " x", " is", " then", " sum", " gives", " 2", " 3", " +",
    " =", " check", " term", " each", " case", " next", " first", " let", " us", " compute",
    " factor", " and", " with", " from", " n", " 10", " result", " a", " b", " root", " side",
    " area", " total", " count", " now", " this", " that",
];
const TRANSITIONS: &[(&str, u32)] = &[(" Wait", 4), (" But", 3), (" Alternatively", 1), (" Hmm", 1), (" maybe", 1)];
const BOUNDARIES: &[&str] = &[".", ".\n\n", ";"];
const SPIKE_BOUNDARIES: &[&str] = &["?", "."];
const MARKER_TOKENS: &[&str] = &["\n", "</", "think", ">"];
const ANSWER: &[&str] = &["\n\n", "The", " answer", " is", " 42", "."];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeSpec {
    /// First step of the spike region.
    pub start: u64,
    pub len: u64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub name: String,
    pub seed: u64,
    /// Thinking tokens before the closing marker (or in total, without one).
    pub thinking_tokens: usize,
    pub baseline_entropy: f64,
    /// Uniform noise half-width around the baseline.
    pub jitter: f64,
    pub spikes: Vec<SpikeSpec>,
    pub spike_jitter: f64,
    /// A boundary token every this many steps; 0 disables boundaries.
    pub boundary_every: usize,
    pub top_k: Option<usize>,
    pub natural_end: bool,
    pub answer_tokens: usize,
    pub prompt: String,
}

impl SynthProfile {
    pub fn named(name: &str, seed: u64) -> Result<Self, LabError> {
        let base = SynthProfile {
            name: name.to_string(),
            seed,
            thinking_tokens: 1200,
            baseline_entropy: 0.4,
            jitter: 0.1,
            spikes: vec![],
            spike_jitter: 0.1,
            boundary_every: 12,
            top_k: Some(8),
            natural_end: true,
            answer_tokens: 16,
            prompt: "Question: what is 6 times 7?\n<think>\n".to_string(),
        };
        let p = match name {
            "flat" => base,
            "spike" => SynthProfile {
                thinking_tokens: 1600,
                baseline_entropy: 0.05,
                jitter: 0.03,
                spikes: vec![SpikeSpec {
                    start: 600,
                    len: 600,
                    entropy: 1.8,
                }],
                boundary_every: 10,
                ..base
            },
            "multi-spike" => SynthProfile {
                thinking_tokens: 2400,
                baseline_entropy: 0.05,
                jitter: 0.03,
                spikes: vec![
                    SpikeSpec {
                        start: 500,
                        len: 60,
                        entropy: 1.8,
                    },
                    SpikeSpec {
                        start: 1400,
                        len: 600,
                        entropy: 1.8,
                    },
                ],
                boundary_every: 10,
                ..base
            },
            "natural" => SynthProfile {
                thinking_tokens: 300,
                baseline_entropy: 0.3,
                jitter: 0.2,
                boundary_every: 10,
                ..base
            },
            "budget" => SynthProfile {
                thinking_tokens: 17_000,
                natural_end: false,
                answer_tokens: 0,
                ..base
            },
            other => return Err(LabError::Profile(format!("unknown profile {other:?}"))),
        };
        Ok(p)
    }

    fn entropy_cap(&self) -> f64 {
        self.top_k.map_or(f64::INFINITY, |k| (k as f64).ln())
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |m: String| Err(LabError::Profile(m));
        if self.thinking_tokens == 0 {
            return bad("thinking_tokens must be positive".into());
        }
        if !(self.baseline_entropy >= 0.0 && self.baseline_entropy.is_finite()) {
            return bad(format!("baseline_entropy {}", self.baseline_entropy));
        }
        if !(self.jitter >= 0.0 && self.spike_jitter >= 0.0) {
            return bad("jitter must be non-negative".into());
        }
        if let Some(k) = self.top_k {
            if k < 2 {
                return bad(format!("top_k {k} must be at least 2"));
            }
        }
        let cap = self.entropy_cap();
        if self.baseline_entropy + self.jitter >= cap {
            return bad(format!("baseline entropy reaches ln(top_k) = {cap}"));
        }
        for s in &self.spikes {
            if s.len == 0 || s.start == 0 || s.start + s.len - 1 > self.thinking_tokens as u64 {
                return bad(format!("spike {s:?} outside 1..={}", self.thinking_tokens));
            }
            if !(s.entropy >= 0.0) || s.entropy + self.spike_jitter >= cap {
                return bad(format!("spike entropy {} must be in [0, ln(top_k))", s.entropy));
            }
        }
        Ok(())
    }
}

fn pick_weighted<'a>(rng: &mut ChaCha8Rng, items: &[(&'a str, u32)]) -> &'a str {
    let total: u32 = items.iter().map(|(_, w)| w).sum();
    let mut r = rng.random_range(0..total);
    for (t, w) in items {
        if r < *w {
            return t;
        }
        r -= w;
    }
    unreachable!()
}

fn jittered(rng: &mut ChaCha8Rng, centre: f64, jitter: f64) -> f64 {
    if jitter > 0.0 {
        (centre + rng.random_range(-jitter..jitter)).max(0.0)
    } else {
        centre
    }
}

/// Log-probabilities of `p_j ∝ exp(-β j)`, `j < k`, with entropy `target`
/// (`0 ≤ target < ln k`), plus the distribution's entropy.
pub fn geometric_topk(target: f64, k: usize) -> (Vec<f64>, f64) {
    let eval = |beta: f64| {
        let log_z = (0..k).map(|j| (-beta * j as f64).exp()).sum::<f64>().ln();
        let lps: Vec<f64> = (0..k).map(|j| -beta * j as f64 - log_z).collect();
        let h = -lps.iter().map(|&lp| lp.exp() * lp).sum::<f64>();
        (lps, h)
    };
    let (mut lo, mut hi) = (0.0f64, 1000.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eval(mid).1 > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    eval(0.5 * (lo + hi))
}

fn record(step: u64, text: &str, h: f64, top_k: Option<usize>, phase: TracePhase) -> TraceRecord {
    let (entropy_nats, top_logprobs) = match top_k {
        Some(k) => {
            let (lps, h) = geometric_topk(h, k);
            let entries = lps
                .into_iter()
                .enumerate()
                .map(|(j, logprob)| TopLogprob {
                    token: if j == 0 { text.to_string() } else { format!("#{j}") },
                    logprob,
                })
                .collect();
            (h, Some(entries))
        }
        None => (h, None),
    };
    TraceRecord {
        step,
        token_text: text.to_string(),
        token_id: None,
        entropy_nats: Some(entropy_nats),
        top_logprobs,
        phase,
    }
}

pub fn synth_trace(p: &SynthProfile) -> Result<Trace, LabError> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut records = Vec::new();
    for i in 0..p.thinking_tokens {
        let step = i as u64 + 1;
        let spike = p.spikes.iter().find(|s| step >= s.start && step < s.start + s.len);
        let boundary = p.boundary_every > 0 && step % p.boundary_every as u64 == 0;
        let (text, h) = match spike {
            Some(s) => {
                let text = if boundary {
                    SPIKE_BOUNDARIES[rng.random_range(0..SPIKE_BOUNDARIES.len())]
                } else {
                    pick_weighted(&mut rng, TRANSITIONS)
                };
                (text, jittered(&mut rng, s.entropy, p.spike_jitter))
            }
            None => {
                let text = if boundary {
                    BOUNDARIES[rng.random_range(0..BOUNDARIES.len())]
                } else {
                    FILLER[rng.random_range(0..FILLER.len())]
                };
                (text, jittered(&mut rng, p.baseline_entropy, p.jitter))
            }
        };
        records.push(record(step, text, h, p.top_k, TracePhase::Thinking));
    }
    if p.natural_end {
        for t in MARKER_TOKENS {
            let h = jittered(&mut rng, p.baseline_entropy, p.jitter);
            records.push(record(records.len() as u64 + 1, t, h, p.top_k, TracePhase::Thinking));
        }
        for i in 0..p.answer_tokens {
            let h = jittered(&mut rng, p.baseline_entropy, p.jitter);
            let t = ANSWER[i % ANSWER.len()];
            records.push(record(records.len() as u64 + 1, t, h, p.top_k, TracePhase::Answer));
        }
    }
    let meta = TraceMeta {
        schema_version: SCHEMA_VERSION,
        model: "synthetic".into(),
        tail_policy: TailPolicy::Renormalize,
        tokenizer: "synthetic-v1".into(),
        top_k: p.top_k,
        prompt: p.prompt.clone(),
        continuation_answer: vec![],
        planted_spikes: p.spikes.iter().map(|s| [s.start, s.start + s.len - 1]).collect(),
        profile: Some(p.name.clone()),
        seed: Some(p.seed),
    };
    Ok(Trace::new(format!("{}-{}", p.name, p.seed), meta, records))
}

/// Analytics corpus: each thinking token independently lands in the high
/// entropy tail with probability `high_fraction`. Tail tokens are mostly
/// "Wait" and "But"; the rest draw from a wide filler vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailProfile {
    pub seed: u64,
    pub tokens: usize,
    pub low_entropy: f64,
    pub high_entropy: f64,
    pub high_fraction: f64,
}

impl LongTailProfile {
    pub fn new(seed: u64, tokens: usize) -> Self {
        Self {
            seed,
            tokens,
            low_entropy: 0.01,
            high_entropy: 5.0,
            high_fraction: 0.05,
        }
    }
}

const TAIL_TOKENS: &[(&str, u32)] = &[
    (" Wait", 40),
    (" But", 30),
    (" Alternatively", 8),
    (" Hmm", 7),
    ("?", 10),
    (" So", 5),
];

pub fn synth_longtail(p: &LongTailProfile) -> Result<Trace, LabError> {
    if p.tokens == 0 || !(0.0..=1.0).contains(&p.high_fraction) || !(p.low_entropy >= 0.0 && p.high_entropy >= 0.0) {
        return Err(LabError::Profile(format!("invalid long-tail profile {p:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let records = (0..p.tokens)
        .map(|i| {
            let (text, h) = if rng.random_bool(p.high_fraction) {
                (pick_weighted(&mut rng, TAIL_TOKENS), p.high_entropy)
            } else {
                (FILLER[rng.random_range(0..FILLER.len())], p.low_entropy)
            };
            record(i as u64 + 1, text, h, None, TracePhase::Thinking)
        })
        .collect();
    let meta = TraceMeta {
        model: "synthetic".into(),
        tokenizer: "synthetic-v1".into(),
        profile: Some("longtail".into()),
        seed: Some(p.seed),
        ..TraceMeta::default()
    };
    Ok(Trace::new(format!("longtail-{}", p.seed), meta, records))
}

/// Generates a named profile; `length` overrides the thinking length.
pub fn synth_named(name: &str, seed: u64, length: Option<usize>) -> Result<Trace, LabError> {
    if name == "longtail" {
        return synth_longtail(&LongTailProfile::new(seed, length.unwrap_or(1_000_000)));
    }
    let mut p = SynthProfile::named(name, seed)?;
    if let Some(n) = length {
        p.thinking_tokens = n;
    }
    synth_trace(&p)
}
