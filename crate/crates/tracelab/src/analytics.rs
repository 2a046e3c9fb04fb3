//! Corpus-level entropy statistics over thinking-phase tokens.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;

use rpdi_core::compensated_sum;
use serde::Serialize;

use crate::error::LabError;
use crate::trace::{Trace, TracePhase};

#[derive(Debug, Clone, Copy)]
struct Sample {
    entropy: f64,
    step: u64,
    trace: usize,
    record: usize,
}

/// Thinking-phase tokens in ascending (entropy, step, trace) order.
fn sorted_samples(traces: &[Trace]) -> Result<Vec<Sample>, LabError> {
    let mut samples = Vec::new();
    for (ti, t) in traces.iter().enumerate() {
        let policy = t.tail_policy();
        for (ri, r) in t.records.iter().enumerate() {
            if r.phase != TracePhase::Thinking {
                continue;
            }
            let entropy = r.entropy(policy).map_err(|source| LabError::Trace {
                name: t.name.clone(),
                source,
            })?;
            samples.push(Sample {
                entropy,
                step: r.step,
                trace: ti,
                record: ri,
            });
        }
    }
    samples.sort_unstable_by(cmp_samples);
    Ok(samples)
}

fn cmp_samples(a: &Sample, b: &Sample) -> Ordering {
    a.entropy
        .total_cmp(&b.entropy)
        .then(a.step.cmp(&b.step))
        .then(a.trace.cmp(&b.trace))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinReport {
    /// Share of total entropy per bin, lowest-entropy bin first.
    pub shares: Vec<f64>,
    pub counts: Vec<usize>,
    pub sums: Vec<f64>,
    pub total_entropy: f64,
    pub tokens: usize,
    /// Set when no token has positive entropy; all shares are then 0.
    pub all_zero: bool,
}

impl BinReport {
    /// Combined share of the lowest `k` bins.
    pub fn bottom_share(&self, k: usize) -> f64 {
        compensated_sum(self.shares.iter().take(k).copied())
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), LabError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin", "tokens", "entropy_sum", "share"])?;
        for (i, ((c, s), share)) in self.counts.iter().zip(&self.sums).zip(&self.shares).enumerate() {
            out.write_record([i.to_string(), c.to_string(), s.to_string(), share.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Splits thinking tokens, sorted ascending by entropy, into `n_bins`
/// equal-count bins (sizes differ by at most one) and reports each bin's
/// share of the total entropy.
pub fn entropy_contribution_bins(traces: &[Trace], n_bins: usize) -> Result<BinReport, LabError> {
    if traces.is_empty() {
        return Err(LabError::EmptyTraceSet);
    }
    if n_bins == 0 {
        return Err(LabError::ZeroBins);
    }
    let samples = sorted_samples(traces)?;
    let n = samples.len();
    let mut counts = Vec::with_capacity(n_bins);
    let mut sums = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let (lo, hi) = (b * n / n_bins, (b + 1) * n / n_bins);
        counts.push(hi - lo);
        sums.push(compensated_sum(samples[lo..hi].iter().map(|s| s.entropy)));
    }
    let total = compensated_sum(sums.iter().copied());
    let all_zero = !(total > 0.0);
    let shares = if all_zero {
        vec![0.0; n_bins]
    } else {
        sums.iter().map(|s| s / total).collect()
    };
    Ok(BinReport {
        shares,
        counts,
        sums,
        total_entropy: total,
        tokens: n,
        all_zero,
    })
}

/// Non-empty and alphabetic after trimming whitespace.
pub fn is_complete_word(token: &str) -> bool {
    let t = token.trim();
    !t.is_empty() && t.chars().all(char::is_alphabetic)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TokenFrequency {
    pub token: String,
    pub count: usize,
}

/// Frequency table of word tokens among the highest-entropy `top_fraction`
/// of thinking tokens, most frequent first (ties alphabetical).
pub fn top_contributor_tokens(traces: &[Trace], top_fraction: f64) -> Result<Vec<TokenFrequency>, LabError> {
    if traces.is_empty() {
        return Err(LabError::EmptyTraceSet);
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(LabError::BadFraction(top_fraction));
    }
    let samples = sorted_samples(traces)?;
    let take = ((samples.len() as f64 * top_fraction).ceil() as usize).min(samples.len());
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in &samples[samples.len() - take..] {
        let text = traces[s.trace].records[s.record].token_text.as_str();
        if is_complete_word(text) {
            *freq.entry(text.trim()).or_default() += 1;
        }
    }
    let mut table: Vec<TokenFrequency> = freq
        .into_iter()
        .map(|(token, count)| TokenFrequency {
            token: token.to_string(),
            count,
        })
        .collect();
    table.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
    Ok(table)
}

pub fn write_frequency_csv(table: &[TokenFrequency], w: impl Write) -> Result<(), LabError> {
    let mut out = csv::Writer::from_writer(w);
    for row in table {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{TraceMeta, TraceRecord};

    fn corpus(tokens: &[(&str, f64)]) -> Vec<Trace> {
        let records = tokens
            .iter()
            .enumerate()
            .map(|(i, &(t, h))| TraceRecord {
                step: i as u64 + 1,
                token_text: t.into(),
                token_id: None,
                entropy_nats: Some(h),
                top_logprobs: None,
                phase: TracePhase::Thinking,
            })
            .collect();
        vec![Trace::new("c", TraceMeta::default(), records)]
    }

    #[test]
    fn single_positive_token_owns_last_bin() {
        let mut toks = vec![("a", 0.0); 999];
        toks.push(("b", 3.0));
        let r = entropy_contribution_bins(&corpus(&toks), 100).unwrap();
        assert_eq!(r.shares[99], 1.0);
        assert!(r.shares[..99].iter().all(|&s| s == 0.0));
        assert!(r.counts.iter().all(|&c| c == 10));
    }

    #[test]
    fn uniform_corpus_has_equal_shares() {
        let toks = vec![("a", 0.37); 1000];
        let r = entropy_contribution_bins(&corpus(&toks), 100).unwrap();
        assert!(r.shares.iter().all(|&s| (s - 0.01).abs() < 1e-12));
        assert!((compensated_sum(r.shares.iter().copied()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_zero_corpus_is_flagged() {
        let r = entropy_contribution_bins(&corpus(&[("a", 0.0); 10]), 4).unwrap();
        assert!(r.all_zero);
        assert_eq!(r.shares, vec![0.0; 4]);
    }

    #[test]
    fn uneven_bins_within_one() {
        let toks: Vec<(&str, f64)> = (0..1037).map(|i| ("a", i as f64 * 0.01)).collect();
        let r = entropy_contribution_bins(&corpus(&toks), 100).unwrap();
        let (min, max) = (r.counts.iter().min().unwrap(), r.counts.iter().max().unwrap());
        assert!(max - min <= 1);
        assert_eq!(r.counts.iter().sum::<usize>(), 1037);
    }

    #[test]
    fn word_filter() {
        assert!(is_complete_word(" Wait"));
        assert!(is_complete_word("But\n"));
        assert!(!is_complete_word(" 42"));
        assert!(!is_complete_word("?"));
        assert!(!is_complete_word("   "));
        assert!(!is_complete_word("don't"));
    }

    #[test]
    fn punctuation_only_tail_gives_empty_table() {
        let mut toks = vec![(" the", 0.1); 80];
        toks.extend(vec![("?", 4.0); 20]);
        assert!(top_contributor_tokens(&corpus(&toks), 0.2).unwrap().is_empty());
    }

    #[test]
    fn full_fraction_is_overall_word_frequency() {
        let toks = [(" a", 0.1), ("b", 0.2), (" a", 0.3), ("!", 0.4), (" c", 0.0)];
        let table = top_contributor_tokens(&corpus(&toks), 1.0).unwrap();
        let pairs: Vec<(&str, usize)> = table.iter().map(|t| (t.token.as_str(), t.count)).collect();
        assert_eq!(pairs, vec![("a", 2), ("b", 1), ("c", 1)]);
        assert!(top_contributor_tokens(&corpus(&toks), 0.0).is_err());
    }
}
