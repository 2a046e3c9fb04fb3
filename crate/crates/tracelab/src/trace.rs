//! JSONL trace format.
//!
//! The first line is a `meta` record; every following line is a `token`
//! record. Steps are consecutive from 1 and cover both phases.
//!
//! ```text
//! {"type":"meta","schema_version":1,"model":"synthetic","tail_policy":"renormalize",...}
//! {"type":"token","step":1,"token_text":" so","entropy_nats":0.31,"top_logprobs":[...],"phase":"thinking"}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rpdi_core::{entropy_from_topk_logprobs, TailPolicy, TokenObservation};
use serde::{Deserialize, Serialize};

use crate::error::TraceError;

pub const SCHEMA_VERSION: u32 = 1;

/// Agreement required between a record's `entropy_nats` and its logprobs.
pub const ENTROPY_AGREEMENT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub schema_version: u32,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub tail_policy: TailPolicy,
    #[serde(default)]
    pub tokenizer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub prompt: String,
    /// Answer tokens a scripted upstream returns for a continuation request.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub continuation_answer: Vec<String>,
    /// Inclusive `[start, end]` step ranges of planted entropy spikes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub planted_spikes: Vec<[u64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for TraceMeta {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: String::new(),
            tail_policy: TailPolicy::Renormalize,
            tokenizer: String::new(),
            top_k: None,
            prompt: String::new(),
            continuation_answer: Vec::new(),
            planted_spikes: Vec::new(),
            profile: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TracePhase {
    #[default]
    Thinking,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub token_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_nats: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_logprobs: Option<Vec<TopLogprob>>,
    #[serde(default)]
    pub phase: TracePhase,
}

impl TraceRecord {
    pub fn logprobs(&self) -> Option<Vec<f64>> {
        self.top_logprobs
            .as_ref()
            .map(|v| v.iter().map(|t| t.logprob).collect())
    }

    /// Entropy from the top logprobs when present, else the recorded value.
    pub fn entropy(&self, tail_policy: TailPolicy) -> Result<f64, TraceError> {
        match (&self.top_logprobs, self.entropy_nats) {
            (Some(lps), _) => {
                let lps: Vec<f64> = lps.iter().map(|t| t.logprob).collect();
                entropy_from_topk_logprobs(&lps, tail_policy).map_err(|source| {
                    TraceError::Entropy {
                        step: self.step,
                        source,
                    }
                })
            }
            (None, Some(h)) if h >= 0.0 && h.is_finite() => Ok(h),
            (None, Some(h)) => Err(TraceError::InvalidEntropy { step: self.step, value: h }),
            (None, None) => Err(TraceError::NoEntropy { step: self.step }),
        }
    }

    pub fn observation(&self, tail_policy: TailPolicy) -> Result<TokenObservation, TraceError> {
        Ok(TokenObservation {
            step: self.step,
            token_id: self.token_id,
            token_text: self.token_text.clone(),
            entropy_nats: self.entropy(tail_policy)?,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Meta(TraceMeta),
    Token(TraceRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Display name, usually the file stem; not serialized.
    pub name: String,
    pub meta: TraceMeta,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(name: impl Into<String>, meta: TraceMeta, records: Vec<TraceRecord>) -> Self {
        Self {
            name: name.into(),
            meta,
            records,
        }
    }

    pub fn tail_policy(&self) -> TailPolicy {
        self.meta.tail_policy
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn thinking_len(&self) -> usize {
        self.records
            .iter()
            .take_while(|r| r.phase == TracePhase::Thinking)
            .count()
    }

    /// Checks step continuity, entropy availability and logprob agreement.
    /// Errors carry the 1-based line number of the offending record.
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.meta.schema_version != SCHEMA_VERSION {
            return Err(TraceError::SchemaVersion(self.meta.schema_version));
        }
        let policy = self.tail_policy();
        let mut seen_answer = false;
        for (i, r) in self.records.iter().enumerate() {
            let line = i + 2;
            let expected = i as u64 + 1;
            if r.step != expected {
                return Err(TraceError::StepGap {
                    line,
                    expected,
                    got: r.step,
                });
            }
            let h = r.entropy(policy).map_err(|e| e.at_line(line))?;
            if let (Some(recorded), Some(_)) = (r.entropy_nats, &r.top_logprobs) {
                if (recorded - h).abs() > ENTROPY_AGREEMENT {
                    return Err(TraceError::Disagreement {
                        line,
                        recorded,
                        computed: h,
                    });
                }
            }
            match r.phase {
                TracePhase::Answer => seen_answer = true,
                TracePhase::Thinking if seen_answer => {
                    return Err(TraceError::PhaseOrder { line });
                }
                TracePhase::Thinking => {}
            }
        }
        Ok(())
    }

    pub fn from_reader(name: impl Into<String>, reader: impl BufRead) -> Result<Self, TraceError> {
        let mut meta = None;
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            match (parsed, meta.is_some()) {
                (Line::Meta(m), false) if records.is_empty() => meta = Some(m),
                (Line::Meta(_), _) => return Err(TraceError::MetaNotFirst { line: line_no }),
                (Line::Token(_), false) => return Err(TraceError::MissingMeta),
                (Line::Token(r), true) => records.push(r),
            }
        }
        let meta = meta.ok_or(TraceError::MissingMeta)?;
        let trace = Self::new(name, meta, records);
        trace.validate()?;
        Ok(trace)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let file = File::open(path).map_err(|e| TraceError::Open {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_reader(name, BufReader::new(file))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), TraceError> {
        serde_json::to_writer(&mut w, &Line::Meta(self.meta.clone()))?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, &LineRef::Token(r))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        let file = File::create(path.as_ref())?;
        self.write_to(BufWriter::new(file))
    }
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LineRef<'a> {
    Token(&'a TraceRecord),
}

/// Reads every `*.jsonl` file in a directory, sorted by file name.
pub fn read_dir(dir: impl AsRef<Path>) -> Result<Vec<Trace>, TraceError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(Trace::read).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        let lp = |p: f64| TopLogprob {
            token: "x".into(),
            logprob: p.ln(),
        };
        Trace::new(
            "sample",
            TraceMeta {
                model: "m".into(),
                ..TraceMeta::default()
            },
            vec![
                TraceRecord {
                    step: 1,
                    token_text: "a".into(),
                    token_id: Some(4),
                    entropy_nats: Some(0.0),
                    top_logprobs: None,
                    phase: TracePhase::Thinking,
                },
                TraceRecord {
                    step: 2,
                    token_text: ".".into(),
                    token_id: None,
                    entropy_nats: Some(std::f64::consts::LN_2),
                    top_logprobs: Some(vec![lp(0.5), lp(0.5)]),
                    phase: TracePhase::Answer,
                },
            ],
        )
    }

    #[test]
    fn round_trip() {
        let t = sample();
        let text = t.to_jsonl();
        assert!(text.starts_with("{\"type\":\"meta\""));
        let back = Trace::from_reader("sample", text.as_bytes()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.thinking_len(), 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let t = sample();
        let mut lines: Vec<String> = t.to_jsonl().lines().map(str::to_string).collect();
        lines[2] = lines[2].replace("\"step\":2", "\"step\":3");
        let err = Trace::from_reader("x", lines.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::StepGap { line: 3, expected: 2, got: 3 }), "{err}");

        let err = Trace::from_reader("x", "{\"type\":\"meta\",\"schema_version\":1}\nnot json".as_bytes())
            .unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 2, .. }));

        let err = Trace::from_reader(
            "x",
            "{\"type\":\"token\",\"step\":1,\"token_text\":\"a\",\"entropy_nats\":0.1}".as_bytes(),
        )
        .unwrap_err();
        assert!(matches!(err, TraceError::MissingMeta));
    }

    #[test]
    fn disagreement_detected() {
        let mut t = sample();
        t.records[1].entropy_nats = Some(0.5);
        assert!(matches!(t.validate(), Err(TraceError::Disagreement { line: 3, .. })));
    }

    #[test]
    fn missing_entropy_detected() {
        let mut t = sample();
        t.records[0].entropy_nats = None;
        let err = t.validate().unwrap_err();
        assert_eq!(err.line(), Some(2));
        assert!(matches!(err, TraceError::AtLine { source, .. } if matches!(*source, TraceError::NoEntropy { step: 1 })));
    }

    #[test]
    fn thinking_after_answer_rejected() {
        let mut t = sample();
        t.records[0].phase = TracePhase::Answer;
        t.records[1].phase = TracePhase::Thinking;
        assert!(matches!(t.validate(), Err(TraceError::PhaseOrder { line: 3 })));
    }
}
