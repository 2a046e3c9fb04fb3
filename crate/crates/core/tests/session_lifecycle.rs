use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpdi_core::{Outcome, PolicyConfig, Session, SessionAction, TokenObservation};
use rpdi_oracle::{OracleOutcome, OracleParams, OracleVariant};

fn oracle_params(c: &PolicyConfig) -> OracleParams {
    OracleParams {
        window: c.window,
        threshold: c.threshold,
        budget: c.budget,
        answer_reserve: c.answer_reserve,
        gtf_epsilon: c.gtf_epsilon,
        variant: OracleVariant::Standard,
        marker: c.termination_marker.clone(),
        boundaries: c.boundary_set.iter().map(str::to_string).collect(),
    }
}

fn drive(session: &mut Session, tokens: &[(String, f64)]) -> Option<(u64, SessionAction)> {
    for (i, (text, h)) in tokens.iter().enumerate() {
        let step = i as u64 + 1;
        match session.feed(&TokenObservation::new(step, text.clone(), *h)).unwrap() {
            SessionAction::KeepStreaming(_) => {}
            action => return Some((step, action)),
        }
    }
    None
}

/// Flat 0.3-nat reasoning with sentence ends, followed by 20 boundary
/// terminated bursts of 4-nat "Wait"-style tokens.
fn overthinking_trace() -> Vec<(String, f64)> {
    let mut tokens = Vec::new();
    for i in 0..1500 {
        let text = if i % 25 == 24 { "." } else { " step" };
        tokens.push((text.to_string(), 0.3));
    }
    for _ in 0..20 {
        for _ in 0..15 {
            tokens.push((" Wait".to_string(), 4.0));
        }
        tokens.push(("?".to_string(), 4.0));
        for _ in 0..10 {
            tokens.push((" hmm".to_string(), 0.3));
        }
    }
    tokens
}

#[test]
fn overthinking_trace_exits_at_oracle_step() {
    let config = PolicyConfig::default();
    let tokens = overthinking_trace();
    let expected = rpdi_oracle::run_session(&tokens, &oracle_params(&config));
    let OracleOutcome::ExitedEarly { step: want_step, rpdi: want_rpdi } = expected else {
        panic!("oracle did not exit: {expected:?}");
    };
    // exit happens at the end of a burst, not inside the flat prefix
    assert!(want_step > 1500);

    let mut s = Session::start("Solve: ", config.clone()).unwrap();
    let (step, action) = drive(&mut s, &tokens).expect("session exits");
    assert_eq!(step, want_step);
    let SessionAction::EnactExit(plan) = action else { panic!("{action:?}") };
    assert!((plan.rpdi.unwrap() - want_rpdi).abs() < 1e-9);
    assert!(plan.continuation_prefix.starts_with("Solve: "));
    assert!(plan.continuation_prefix.ends_with("?</think>"));
    assert_eq!(plan.answer_budget, config.budget - step);
    assert_eq!(tokens[step as usize - 1].0, "?");
}

#[test]
fn natural_end_beats_monitored_exit() {
    let config = PolicyConfig {
        window: 4,
        budget: 100,
        answer_reserve: 10,
        ..PolicyConfig::default()
    };
    // the marker completes on the very token that would otherwise trigger an exit
    let mut tokens: Vec<(String, f64)> = (0..8).map(|_| ("a".to_string(), 0.0)).collect();
    tokens.extend([("x".to_string(), 4.0), ("y".to_string(), 5.0), ("</think>.".to_string(), 6.0)]);
    let mut s = Session::start("", config.clone()).unwrap();
    let (step, action) = drive(&mut s, &tokens).unwrap();
    assert_eq!(step, 11);
    assert!(matches!(action, SessionAction::Finish { .. }));
    assert_eq!(s.outcome(), Outcome::EndedNaturally { step: 11 });
    assert_eq!(
        rpdi_oracle::run_session(&tokens, &oracle_params(&config)),
        OracleOutcome::EndedNaturally { step: 11 }
    );
}

const MARKER: &str = "</think>";

fn random_segmentation(rng: &mut ChaCha8Rng) -> (Vec<String>, usize) {
    let alphabet = ['a', 'b', ' ', '<', '/', 't', 'h', 'i', 'n', 'k', '>', 'é', '\n'];
    let noise = |rng: &mut ChaCha8Rng, n: usize| -> String {
        let mut s = String::new();
        while s.chars().count() < n {
            s.push(alphabet[rng.random_range(0..alphabet.len())]);
            if s.contains(MARKER) {
                s.pop();
            }
        }
        s
    };
    loop {
        let (pre_len, suf_len) = (rng.random_range(0..30), rng.random_range(0..30));
        let prefix = noise(rng, pre_len);
        let suffix = noise(rng, suf_len);
        let text = format!("{prefix}{MARKER}{suffix}");
        if text.matches(MARKER).count() != 1 {
            continue;
        }
        // cut at random char boundaries
        let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).skip(1).collect();
        let mut cuts: Vec<usize> = bounds.into_iter().filter(|_| rng.random_bool(0.35)).collect();
        cuts.push(text.len());
        let mut segments = Vec::new();
        let mut start = 0;
        for c in cuts {
            segments.push(text[start..c].to_string());
            start = c;
        }
        let refs: Vec<&str> = segments.iter().map(String::as_str).collect();
        let step = rpdi_oracle::marker_completion_step(&refs, MARKER).unwrap();
        return (segments, step);
    }
}

#[test]
fn marker_detection_matches_segmentation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let config = PolicyConfig {
        window: 4096,
        budget: 8192,
        ..PolicyConfig::default()
    };
    for _ in 0..10_000 {
        let (segments, expected) = random_segmentation(&mut rng);
        let mut s = Session::start("", config.clone()).unwrap();
        let tokens: Vec<(String, f64)> = segments.iter().map(|t| (t.clone(), 0.5)).collect();
        let (step, action) = drive(&mut s, &tokens).expect("marker present");
        assert_eq!(step as usize, expected, "{segments:?}");
        assert!(matches!(action, SessionAction::Finish { .. }));
        assert_eq!(s.reasoning(), segments[..expected].concat());
    }
}

#[test]
fn marker_absent_is_never_detected() {
    assert!(!rpdi_core::detect_marker("</thin", MARKER));
    assert!(rpdi_core::detect_marker("ab</think>", MARKER));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn lifecycle_invariants(
        tokens in prop::collection::vec((prop::sample::select(vec![".", " a", "b", "?\n", "</", "think>"]), 0.0f64..6.0), 1..200),
        window in 1usize..20,
        threshold in 1.0f64..3.0,
        reserve in 0u64..8,
    ) {
        let config = PolicyConfig {
            window,
            threshold,
            budget: window as u64 + 60,
            answer_reserve: reserve,
            ..PolicyConfig::default()
        };
        let tokens: Vec<(String, f64)> = tokens.into_iter().map(|(t, h)| (t.to_string(), h)).collect();
        let run = || {
            let mut s = Session::start("P", config.clone()).unwrap();
            let end = drive(&mut s, &tokens);
            (s, end)
        };
        let (s, end) = run();
        let (s2, end2) = run();
        prop_assert_eq!(s.outcome(), s2.outcome());
        prop_assert_eq!(&end, &end2);

        let fed = end.as_ref().map_or(tokens.len(), |(step, _)| *step as usize);
        let concat: String = tokens[..fed].iter().map(|(t, _)| t.as_str()).collect();
        prop_assert_eq!(s.reasoning(), concat.as_str());
        prop_assert!(s.tokens_consumed() <= config.budget);

        if let Some((step, SessionAction::EnactExit(plan))) = &end {
            prop_assert_eq!(plan.exit_step + plan.answer_budget, config.budget);
            prop_assert_eq!(*step, plan.exit_step);
            prop_assert!(plan.exit_step >= window as u64 || plan.budget_exhausted);
        }

        let oracle = rpdi_oracle::run_session(&tokens, &oracle_params(&config));
        prop_assert_eq!(oracle.kind(), s.outcome().kind_str());
        prop_assert_eq!(oracle.step(), s.outcome().step());
    }
}
