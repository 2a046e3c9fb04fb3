//! Shannon entropy of next-token distributions, in nats.
//!
//! Two inputs are supported: an explicit distribution (full vocabulary or a
//! truncated top-k slice) and the top-k logprob lists exposed by serving APIs.
//! For the latter the probability mass outside the top-k is unknown, so the
//! caller picks a [`TailPolicy`].

use serde::{Deserialize, Serialize};

use crate::error::EntropyError;
use crate::summation::NeumaierSum;

/// Sum tolerance for distributions and logprob sign checks.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Distributions with more entries than this are summed with compensation.
pub const COMPENSATED_THRESHOLD: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionKind {
    Full,
    TopK,
}

/// How to treat the probability mass missing from a top-k logprob list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailPolicy {
    /// Sum `-p ln p` over the listed entries only.
    IgnoreTail,
    /// Rescale the listed probabilities to sum to one first.
    #[default]
    Renormalize,
}

impl TailPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            TailPolicy::IgnoreTail => "ignore-tail",
            TailPolicy::Renormalize => "renormalize",
        }
    }
}

impl std::str::FromStr for TailPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ignore-tail" => Ok(TailPolicy::IgnoreTail),
            "renormalize" => Ok(TailPolicy::Renormalize),
            other => Err(format!(
                "unknown tail policy {other:?} (expected ignore-tail or renormalize)"
            )),
        }
    }
}

/// A validated next-token probability distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDistribution {
    entries: Vec<(u32, f64)>,
    kind: DistributionKind,
}

impl ProbDistribution {
    pub fn new(entries: Vec<(u32, f64)>, kind: DistributionKind) -> Result<Self, EntropyError> {
        if entries.is_empty() {
            return Err(EntropyError::Empty);
        }
        for (index, &(_, p)) in entries.iter().enumerate() {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(EntropyError::InvalidProbability { index, value: p });
            }
        }
        let sum = accumulate(entries.len(), entries.iter().map(|&(_, p)| p));
        match kind {
            DistributionKind::Full if (sum - 1.0).abs() > MASS_TOLERANCE => {
                Err(EntropyError::NotNormalized {
                    sum,
                    tolerance: MASS_TOLERANCE,
                })
            }
            DistributionKind::TopK if sum > 1.0 + MASS_TOLERANCE => Err(EntropyError::ExcessMass {
                sum,
                tolerance: MASS_TOLERANCE,
            }),
            _ => Ok(Self { entries, kind }),
        }
    }

    /// Full distribution from probabilities, with token ids assigned by position.
    pub fn full(probs: &[f64]) -> Result<Self, EntropyError> {
        Self::new(
            probs.iter().enumerate().map(|(i, &p)| (i as u32, p)).collect(),
            DistributionKind::Full,
        )
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    /// Number of entries with strictly positive probability.
    pub fn support(&self) -> usize {
        self.entries.iter().filter(|&&(_, p)| p > 0.0).count()
    }
}

#[inline]
fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

fn accumulate(len: usize, values: impl Iterator<Item = f64>) -> f64 {
    if len > COMPENSATED_THRESHOLD {
        values.collect::<NeumaierSum>().value()
    } else {
        values.sum()
    }
}

/// `-Σ p ln p` over the distribution; zero-probability entries contribute 0.
pub fn shannon_entropy(dist: &ProbDistribution) -> f64 {
    let h = -accumulate(dist.entries.len(), dist.entries.iter().map(|&(_, p)| plogp(p)));
    h.max(0.0)
}

/// Validates and computes entropy of raw probabilities as a full distribution.
pub fn entropy_of_probs(probs: &[f64]) -> Result<f64, EntropyError> {
    ProbDistribution::full(probs).map(|d| shannon_entropy(&d))
}

/// Entropy of a truncated top-k logprob list under the given tail policy.
///
/// Logprobs up to [`MASS_TOLERANCE`] above zero are treated as 0; `-inf`
/// entries are zero-mass and contribute nothing.
pub fn entropy_from_topk_logprobs(logprobs: &[f64], policy: TailPolicy) -> Result<f64, EntropyError> {
    if logprobs.is_empty() {
        return Err(EntropyError::Empty);
    }
    let mut max = f64::NEG_INFINITY;
    for (index, &lp) in logprobs.iter().enumerate() {
        if lp.is_nan() {
            return Err(EntropyError::NanLogprob { index });
        }
        if lp > MASS_TOLERANCE {
            return Err(EntropyError::PositiveLogprob { index, value: lp });
        }
        max = max.max(lp.min(0.0));
    }
    let n = logprobs.len();
    let h = match policy {
        TailPolicy::IgnoreTail => {
            let mass = accumulate(n, logprobs.iter().map(|&lp| lp.min(0.0).exp()));
            if mass > 1.0 + MASS_TOLERANCE {
                return Err(EntropyError::ExcessMass {
                    sum: mass,
                    tolerance: MASS_TOLERANCE,
                });
            }
            -accumulate(n, logprobs.iter().map(|&lp| plogp(lp.min(0.0).exp())))
        }
        TailPolicy::Renormalize => {
            if max == f64::NEG_INFINITY {
                // every entry has zero mass; nothing to renormalize
                return Ok(0.0);
            }
            let z = accumulate(n, logprobs.iter().map(|&lp| (lp.min(0.0) - max).exp()));
            let log_norm = max + z.ln();
            -accumulate(
                n,
                logprobs.iter().map(|&lp| {
                    let lq = lp.min(0.0) - log_norm;
                    if lq == f64::NEG_INFINITY {
                        0.0
                    } else {
                        lq.exp() * lq
                    }
                }),
            )
        }
    };
    Ok(h.max(0.0))
}

/// One generated token with the entropy of the distribution it was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenObservation {
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_id: Option<u32>,
    pub token_text: String,
    pub entropy_nats: f64,
}

impl TokenObservation {
    pub fn new(step: u64, token_text: impl Into<String>, entropy_nats: f64) -> Self {
        Self {
            step,
            token_id: None,
            token_text: token_text.into(),
            entropy_nats,
        }
    }
}

/// Where a token's uncertainty evidence comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum EntropySource {
    Distribution(ProbDistribution),
    TopLogprobs(Vec<f64>),
}

pub fn decode_observation(
    step: u64,
    token_id: Option<u32>,
    token_text: impl Into<String>,
    source: &EntropySource,
    tail_policy: TailPolicy,
) -> Result<TokenObservation, EntropyError> {
    let entropy_nats = match source {
        EntropySource::Distribution(d) => shannon_entropy(d),
        EntropySource::TopLogprobs(lps) => entropy_from_topk_logprobs(lps, tail_policy)?,
    };
    Ok(TokenObservation {
        step,
        token_id,
        token_text: token_text.into(),
        entropy_nats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Frozen from a 50-digit mpmath evaluation of -Σ p ln p.
    const H_07_02_01: f64 = 0.801_818_552_543_337_3;
    const H_TWO_THIRDS: f64 = 0.636_514_168_294_812_8;
    const LN_4: f64 = 1.386_294_361_119_890_6;

    #[test]
    fn uniform_four() {
        let h = entropy_of_probs(&[0.25; 4]).unwrap();
        assert!((h - LN_4).abs() < 1e-15);
    }

    #[test]
    fn one_hot_is_zero() {
        assert_eq!(entropy_of_probs(&[1.0]).unwrap(), 0.0);
        assert_eq!(entropy_of_probs(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn matches_high_precision_oracle() {
        let h = entropy_of_probs(&[0.7, 0.2, 0.1]).unwrap();
        assert!((h - H_07_02_01).abs() < 1e-12, "{h}");
    }

    #[test]
    fn rejects_invalid_distributions() {
        assert_eq!(entropy_of_probs(&[]), Err(EntropyError::Empty));
        assert!(matches!(
            entropy_of_probs(&[0.5, -0.1, 0.6]),
            Err(EntropyError::InvalidProbability { index: 1, .. })
        ));
        assert!(matches!(
            entropy_of_probs(&[0.5, 0.4]),
            Err(EntropyError::NotNormalized { .. })
        ));
        assert!(matches!(
            ProbDistribution::new(vec![(0, 0.7), (1, 0.5)], DistributionKind::TopK),
            Err(EntropyError::ExcessMass { .. })
        ));
        assert!(ProbDistribution::new(vec![(0, 0.7), (1, 0.2)], DistributionKind::TopK).is_ok());
        assert!(entropy_of_probs(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn topk_covering_uniform_support() {
        let lps = [0.25f64.ln(); 4];
        for policy in [TailPolicy::Renormalize, TailPolicy::IgnoreTail] {
            let h = entropy_from_topk_logprobs(&lps, policy).unwrap();
            assert!((h - LN_4).abs() < 1e-12);
        }
    }

    #[test]
    fn topk_single_zero_logprob() {
        for policy in [TailPolicy::Renormalize, TailPolicy::IgnoreTail] {
            assert_eq!(entropy_from_topk_logprobs(&[0.0], policy).unwrap(), 0.0);
        }
    }

    #[test]
    fn topk_renormalized_matches_oracle() {
        let h = entropy_from_topk_logprobs(&[0.6f64.ln(), 0.3f64.ln()], TailPolicy::Renormalize)
            .unwrap();
        assert!((h - H_TWO_THIRDS).abs() < 1e-12, "{h}");
        let ignored =
            entropy_from_topk_logprobs(&[0.6f64.ln(), 0.3f64.ln()], TailPolicy::IgnoreTail).unwrap();
        assert!((ignored - 0.667_687_215_557_375_2).abs() < 1e-12, "{ignored}");
    }

    #[test]
    fn topk_errors() {
        assert_eq!(
            entropy_from_topk_logprobs(&[], TailPolicy::Renormalize),
            Err(EntropyError::Empty)
        );
        assert!(matches!(
            entropy_from_topk_logprobs(&[-0.1, 0.01], TailPolicy::Renormalize),
            Err(EntropyError::PositiveLogprob { index: 1, .. })
        ));
        // within tolerance is clamped
        assert_eq!(
            entropy_from_topk_logprobs(&[5e-7], TailPolicy::IgnoreTail).unwrap(),
            0.0
        );
        assert!(entropy_from_topk_logprobs(&[f64::NAN], TailPolicy::IgnoreTail).is_err());
    }

    #[test]
    fn neg_infinity_logprob_is_zero_mass() {
        let h = entropy_from_topk_logprobs(&[0.5f64.ln(), 0.5f64.ln(), f64::NEG_INFINITY], TailPolicy::Renormalize)
            .unwrap();
        assert!((h - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn decode_observation_uses_source() {
        let one_hot = EntropySource::Distribution(ProbDistribution::full(&[1.0]).unwrap());
        let obs = decode_observation(1, Some(3), "a", &one_hot, TailPolicy::Renormalize).unwrap();
        assert_eq!(obs.entropy_nats, 0.0);
        assert_eq!(obs.step, 1);

        let uniform = EntropySource::Distribution(ProbDistribution::full(&[0.25; 4]).unwrap());
        let obs = decode_observation(5, None, "b", &uniform, TailPolicy::Renormalize).unwrap();
        assert!((obs.entropy_nats - LN_4).abs() < 1e-15);

        let bad = EntropySource::TopLogprobs(vec![]);
        assert!(decode_observation(1, None, "c", &bad, TailPolicy::Renormalize).is_err());
    }

    #[test]
    fn large_vocabulary_uniform() {
        let n = 131_072;
        let probs = vec![1.0 / n as f64; n];
        let h = entropy_of_probs(&probs).unwrap();
        assert!((h - (n as f64).ln()).abs() < 1e-9, "{h}");
    }

    fn distribution() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 1..64).prop_filter_map("positive mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-3).then(|| w.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn bounded_by_log_support(probs in distribution()) {
            let d = ProbDistribution::full(&probs).unwrap();
            let h = shannon_entropy(&d);
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (d.support() as f64).ln() + 1e-9);
        }

        #[test]
        fn permutation_and_zero_mass_neutral(probs in distribution(), rot in 0usize..64, zeros in 0usize..8) {
            let h = entropy_of_probs(&probs).unwrap();
            let mut rotated = probs.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            prop_assert!((entropy_of_probs(&rotated).unwrap() - h).abs() < 1e-12);
            let mut padded = probs.clone();
            padded.extend(std::iter::repeat_n(0.0, zeros));
            prop_assert_eq!(entropy_of_probs(&padded).unwrap(), h);
        }

        #[test]
        fn topk_covering_support_matches_full(probs in distribution()) {
            let h = entropy_of_probs(&probs).unwrap();
            let lps: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
            for policy in [TailPolicy::Renormalize, TailPolicy::IgnoreTail] {
                let t = entropy_from_topk_logprobs(&lps, policy).unwrap();
                prop_assert!((t - h).abs() < 1e-9, "{:?} {} {}", policy, t, h);
            }
        }
    }
}
