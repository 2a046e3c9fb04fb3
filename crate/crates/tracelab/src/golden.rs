//! The golden fixture set: synthetic traces paired with the policy they are
//! replayed under and their expected outcome.
//!
//! `specs()` is the single source of truth for how fixtures are generated;
//! `manifest.json` next to the files records the expected outcome tuples.

use std::path::{Path, PathBuf};

use rpdi_core::{PolicyConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::LabError;
use crate::synth::{SpikeSpec, SynthProfile};
use crate::trace::Trace;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedOutcome {
    pub kind: String,
    pub step: Option<u64>,
    pub rpdi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenFixture {
    pub file: String,
    pub profile: String,
    pub policy: PolicyConfig,
    pub expected: ExpectedOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fixtures: Vec<GoldenFixture>,
}

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(dir.as_ref().join(MANIFEST))?;
        serde_json::from_str(&text).map_err(|e| LabError::Io(e.into()))
    }

    /// Every fixture with its parsed trace.
    pub fn traces(&self, dir: impl AsRef<Path>) -> Result<Vec<(GoldenFixture, Trace)>, LabError> {
        self.fixtures
            .iter()
            .map(|f| {
                let path: PathBuf = dir.as_ref().join(&f.file);
                let trace = Trace::read(&path).map_err(|source| LabError::Trace {
                    name: f.file.clone(),
                    source,
                })?;
                Ok((f.clone(), trace))
            })
            .collect()
    }
}

/// How one fixture is generated.
#[derive(Debug, Clone)]
pub struct GoldenSpec {
    pub file: String,
    pub profile: SynthProfile,
    pub policy: PolicyConfig,
}

const TOP_K: usize = 5;

fn scaled_policy(window: usize, budget: u64, reserve: u64) -> PolicyConfig {
    PolicyConfig {
        window,
        budget,
        answer_reserve: reserve,
        ..PolicyConfig::default()
    }
}

fn base(name: &str, seed: u64) -> SynthProfile {
    SynthProfile {
        name: name.to_string(),
        seed,
        thinking_tokens: 300,
        baseline_entropy: 0.4,
        jitter: 0.1,
        spikes: vec![],
        spike_jitter: 0.05,
        boundary_every: 10,
        top_k: Some(TOP_K),
        natural_end: true,
        answer_tokens: 12,
        prompt: format!("Problem {seed}: find the value.\n<think>\n"),
    }
}

fn spike(name: &str, seed: u64, len: usize, spikes: Vec<SpikeSpec>) -> SynthProfile {
    SynthProfile {
        thinking_tokens: len,
        baseline_entropy: 0.05,
        jitter: 0.03,
        spikes,
        ..base(name, seed)
    }
}

fn region(start: u64, len: u64) -> SpikeSpec {
    SpikeSpec {
        start,
        len,
        entropy: 1.5,
    }
}

pub fn specs() -> Vec<GoldenSpec> {
    let mut out = Vec::new();
    let mut push = |profile: SynthProfile, policy: PolicyConfig| {
        out.push(GoldenSpec {
            file: format!("{}-{:02}.jsonl", profile.name, profile.seed),
            profile,
            policy,
        })
    };
    let small = scaled_policy(128, 4096, 64);
    for seed in 1..=6 {
        push(spike("spike", seed, 500, vec![region(300, 200)]), small.clone());
    }
    for seed in 1..=2 {
        push(spike("spike-w512", seed, 1250, vec![region(600, 600)]), PolicyConfig::default());
    }
    for seed in 1..=3 {
        push(
            spike("multi-spike", seed, 900, vec![region(200, 20), region(700, 200)]),
            small.clone(),
        );
    }
    for seed in 1..=4 {
        push(base("flat", seed), small.clone());
    }
    for seed in 1..=3 {
        push(
            SynthProfile {
                thinking_tokens: 100,
                baseline_entropy: 0.3,
                jitter: 0.2,
                ..base("natural", seed)
            },
            small.clone(),
        );
    }
    for seed in 1..=4 {
        push(
            SynthProfile {
                thinking_tokens: 1100,
                natural_end: false,
                answer_tokens: 0,
                ..base("budget", seed)
            },
            scaled_policy(64, 1024, 32),
        );
    }
    for (seed, variant) in [(1, Variant::NoBtm), (2, Variant::NoLtf)] {
        push(
            spike(&format!("spike-{variant}"), seed, 500, vec![region(300, 200)]),
            PolicyConfig {
                variant,
                ..small.clone()
            },
        );
    }
    out
}
