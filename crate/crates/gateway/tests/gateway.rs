//! End-to-end runs against the in-process mock upstream.

use std::path::PathBuf;
use std::time::Duration;

use rpdi_core::{PolicyConfig, Variant};
use rpdi_gateway::{
    post_stream, spawn, CompletionStyle, GatewayConfig, MockOptions, MockUpstream, RunningGateway, StreamedResponse,
    UpstreamConfig,
};
use rpdi_oracle::{OracleOutcome, OracleParams, OracleVariant};
use rpdi_tracelab::golden::Manifest;
use rpdi_tracelab::{replay, synth_named, Trace};
use serde_json::{json, Value};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../tracelab/tests/fixtures/golden")
}

struct Rig {
    mock: MockUpstream,
    gateway: RunningGateway,
    http: reqwest::Client,
}

impl Rig {
    async fn start(traces: Vec<Trace>, options: MockOptions, policy: PolicyConfig) -> Self {
        Self::with(traces, options, policy, |_| {}).await
    }

    async fn with(
        traces: Vec<Trace>,
        options: MockOptions,
        policy: PolicyConfig,
        tweak: impl FnOnce(&mut GatewayConfig),
    ) -> Self {
        let mock = MockUpstream::start(traces, options).await.unwrap();
        let upstream = UpstreamConfig::new(&mock.base_url()).unwrap();
        let mut config = GatewayConfig::new("127.0.0.1:0".parse().unwrap(), upstream, policy);
        tweak(&mut config);
        let gateway = spawn(config).await.unwrap();
        Self {
            mock,
            gateway,
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}/v1/{path}", self.gateway.addr)
    }

    async fn completion(&self, trace: &Trace, annotate: bool) -> StreamedResponse {
        let body = json!({"model": trace.name, "prompt": trace.meta.prompt, "stream": true, "rpdi_annotations": annotate});
        post_stream(&self.http, &self.url("completions"), &body, &[]).await.unwrap()
    }

    async fn chat(&self, model: &str, headers: &[(&str, &str)]) -> StreamedResponse {
        let body = json!({"model": model, "messages": [{"role": "user", "content": "Solve it."}], "stream": true});
        post_stream(&self.http, &self.url("chat/completions"), &body, headers).await.unwrap()
    }

    /// Waits until the mock has seen `n` streams end.
    async fn settle(&self, n: usize) {
        for _ in 0..400 {
            if self.mock.log.stream_ends() >= n {
                return;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("only {} of {n} upstream streams ended", self.mock.log.stream_ends());
    }

    async fn stop(self) {
        self.gateway.shutdown().await;
        self.mock.shutdown().await;
    }
}

fn oracle_outcome(trace: &Trace, c: &PolicyConfig) -> OracleOutcome {
    let tokens: Vec<(String, f64)> = trace
        .records
        .iter()
        .map(|r| {
            let lps: Vec<f64> = r.top_logprobs.as_ref().unwrap().iter().map(|t| t.logprob).collect();
            (r.token_text.clone(), rpdi_oracle::topk_entropy(&lps, true))
        })
        .collect();
    let params = OracleParams {
        window: c.window,
        threshold: c.threshold,
        budget: c.budget,
        answer_reserve: c.answer_reserve,
        gtf_epsilon: c.gtf_epsilon,
        variant: OracleVariant::Standard,
        marker: c.termination_marker.clone(),
        boundaries: c.boundary_set.iter().map(str::to_string).collect(),
    };
    rpdi_oracle::run_session(&tokens, &params)
}

fn reasoning(trace: &Trace, upto: u64) -> String {
    trace.records[..upto as usize].iter().map(|r| r.token_text.as_str()).collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn golden_fixtures_match_replay() {
    let dir = golden_dir();
    let fixtures = Manifest::load(&dir).unwrap().traces(&dir).unwrap();
    assert!(fixtures.len() >= 20);
    for (fixture, trace) in fixtures {
        let policy = fixture.policy.clone();
        let rig = Rig::start(vec![trace.clone()], MockOptions::default(), policy.clone()).await;
        let got = rig.completion(&trace, true).await;
        let want = replay(&trace, &policy).unwrap();
        assert_eq!(got.status, 200, "{}", fixture.file);
        assert!(got.done && got.error.is_none(), "{}: {:?}", fixture.file, got.error);
        assert_eq!(got.text, want.transcript, "{}", fixture.file);
        let summary = got.event("summary").expect("summary event");
        assert_eq!(summary["outcome"]["kind"], want.outcome.kind_str(), "{}", fixture.file);
        assert_eq!(summary["outcome"]["step"].as_u64(), want.outcome.step(), "{}", fixture.file);
        match (summary["outcome"]["rpdi"].as_f64(), want.outcome.rpdi()) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-9, "{}: {a} vs {b}", fixture.file),
            (a, b) => assert_eq!(a, b, "{}", fixture.file),
        }
        assert_eq!(summary["outcome"]["kind"], fixture.expected.kind, "{}", fixture.file);
        rig.stop().await;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn spike_triggers_one_cancel_and_one_continuation() {
    let trace = synth_named("spike", 7, None).unwrap();
    let policy = PolicyConfig::default();
    let expected = oracle_outcome(&trace, &policy);
    let OracleOutcome::ExitedEarly { step, .. } = expected else {
        panic!("oracle does not exit: {expected:?}");
    };
    assert!((600..1200).contains(&step), "exit {step} outside the planted region");

    let options = MockOptions {
        hold_open: Some(Duration::from_secs(2)),
        ..Default::default()
    };
    let rig = Rig::start(vec![trace.clone()], options, policy.clone()).await;
    let got = rig.completion(&trace, true).await;
    rig.settle(2).await;

    let exit = got.event("early_exit").expect("early exit event");
    assert_eq!(exit["step"].as_u64(), Some(step));
    assert_eq!(exit["answer_budget"].as_u64(), Some(policy.budget - step));
    assert_eq!(rig.mock.log.cancels(), 1);
    let conts = rig.mock.log.continuations();
    assert_eq!(conts.len(), 1);
    let (max_tokens, prefix) = &conts[0];
    assert_eq!(*max_tokens, Some(policy.budget - step));
    assert_eq!(*prefix, format!("{}{}{}", trace.meta.prompt, reasoning(&trace, step), policy.termination_marker));
    assert_eq!(got.text, format!("{}</think>\n\nThe answer is 42.", reasoning(&trace, step)));
    rig.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn chat_continuation_prefills_the_assistant_turn() {
    let trace = synth_named("spike", 3, None).unwrap();
    let policy = PolicyConfig::default();
    let rig = Rig::start(vec![trace.clone()], MockOptions::default(), policy.clone()).await;
    let got = rig.chat(&trace.name, &[("x-rpdi-annotations", "1")]).await;
    let step = got.event("early_exit").expect("exit")["step"].as_u64().unwrap();
    rig.settle(2).await;

    let entries = rig.mock.log.entries();
    let cont = entries
        .iter()
        .find_map(|i| match i {
            rpdi_gateway::Interaction::Request {
                kind: rpdi_gateway::RequestKind::Continuation,
                body,
                endpoint,
                ..
            } => Some((body.clone(), *endpoint)),
            _ => None,
        })
        .unwrap();
    assert_eq!(cont.1, "chat/completions");
    let messages = cont.0["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 2);
    assert_eq!(messages[1]["role"], "assistant");
    assert_eq!(messages[1]["content"], format!("{}</think>", reasoning(&trace, step)));
    assert_eq!(cont.0["continue_final_message"], true);
    assert!(cont.0.get("logprobs").is_none());
    // every relayed thinking token carries its monitor values
    let annotated = got.chunks.iter().filter(|c| c.get("rpdi").is_some()).count();
    assert_eq!(annotated as u64, step);
    assert_eq!(got.chunks[0]["choices"][0]["delta"]["role"], "assistant");
    rig.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn raw_completion_style_continues_through_completions() {
    let trace = synth_named("spike", 3, None).unwrap();
    let rig = Rig::with(vec![trace.clone()], MockOptions::default(), PolicyConfig::default(), |c| {
        c.upstream.completion_style = CompletionStyle::RawCompletion
    })
    .await;
    let got = rig.chat(&trace.name, &[]).await;
    rig.settle(2).await;
    let conts = rig.mock.log.continuations();
    assert_eq!(conts.len(), 1);
    assert!(conts[0].1.starts_with("<|user|>\nSolve it.\n<|assistant|>\n"));
    assert!(conts[0].1.ends_with("</think>"));
    // completions chunks are rewritten as chat chunks for the client
    assert!(got.chunks.iter().all(|c| c["object"] == "chat.completion.chunk"));
    assert!(got.text.ends_with("</think>\n\nThe answer is 42."));
    assert!(got.events.is_empty());
    rig.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn natural_end_needs_no_continuation() {
    let trace = synth_named("natural", 1, None).unwrap();
    let rig = Rig::start(vec![trace.clone()], MockOptions::default(), PolicyConfig::default()).await;
    let got = rig.chat(&trace.name, &[("x-rpdi-annotations", "true")]).await;
    rig.settle(1).await;
    assert!(got.done && got.error.is_none());
    assert!(got.event("natural_end").is_some());
    assert!(got.event("early_exit").is_none());
    assert_eq!(rig.mock.log.continuations().len(), 0);
    assert_eq!(rig.mock.log.cancels(), 0);
    let all: String = trace.records.iter().map(|r| r.token_text.as_str()).collect();
    assert_eq!(got.text, all);
    let summary = got.event("summary").unwrap();
    assert_eq!(summary["outcome"]["kind"], "ended-naturally");
    rig.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn missing_logprobs_is_a_structured_502() {
    let trace = synth_named("spike", 1, None).unwrap();
    let options = MockOptions {
        omit_logprobs: true,
        ..Default::default()
    };
    let rig = Rig::start(vec![trace.clone()], options, PolicyConfig::default()).await;
    let got = rig.chat(&trace.name, &[]).await;
    assert_eq!(got.status, 502);
    let err = got.error.unwrap();
    assert_eq!(err["type"], "upstream_contract_violation");
    assert_eq!(err["missing_field"], "choices[0].logprobs.content");

    let got = rig.completion(&trace, false).await;
    assert_eq!(got.status, 502);
    assert_eq!(got.error.unwrap()["missing_field"], "choices[0].logprobs.top_logprobs");
    rig.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn requests_ask_for_logprobs_and_the_policy_budget() {
    let trace = synth_named("natural", 2, None).unwrap();
    let policy = PolicyConfig {
        budget: 4096,
        ..PolicyConfig::default()
    };
    let rig = Rig::with(vec![trace.clone()], MockOptions::default(), policy, |c| c.upstream.logprobs_top_k = 7).await;
    let body = json!({"model": trace.name, "messages": [], "stream": true, "max_tokens": 10, "rpdi_annotations": true});
    post_stream(&rig.http, &rig.url("chat/completions"), &body, &[]).await.unwrap();
    let sent = rig.mock.log.initial_requests().pop().unwrap();
    assert_eq!(sent["logprobs"], true);
    assert_eq!(sent["top_logprobs"], 7);
    assert_eq!(sent["max_tokens"], 4096);
    assert!(sent.get("rpdi_annotations").is_none());
    rig.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn rejected_continuation_keeps_partial_reasoning() {
    let trace = synth_named("spike", 2, None).unwrap();
    let options = MockOptions {
        reject_continuations: true,
        ..Default::default()
    };
    let rig = Rig::start(vec![trace.clone()], options, PolicyConfig::default()).await;
    let got = rig.completion(&trace, true).await;
    let step = got.event("early_exit").expect("exit")["step"].as_u64().unwrap();
    let err = got.error.expect("error event");
    assert_eq!(err["type"], "upstream_error");
    assert_eq!(err["upstream_status"], 400);
    assert_eq!(err["partial_reasoning"], reasoning(&trace, step));
    assert_eq!(err["exit_step"].as_u64(), Some(step));
    assert!(got.done);
    assert_eq!(got.text, format!("{}</think>", reasoning(&trace, step)));
    rig.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn pass_through_is_byte_identical() {
    let trace = synth_named("spike", 4, None).unwrap();
    let rig = Rig::with(vec![trace.clone()], MockOptions::default(), PolicyConfig::default(), |c| c.monitoring = false).await;
    let body = json!({"model": trace.name, "messages": [{"role": "user", "content": "x"}], "stream": true,
        "logprobs": true, "top_logprobs": 5});
    let fetch = |url: String| {
        let http = rig.http.clone();
        let body = body.clone();
        async move {
            let r = http.post(url).json(&body).send().await.unwrap();
            (r.status().as_u16(), r.bytes().await.unwrap())
        }
    };
    let direct = fetch(format!("{}/chat/completions", rig.mock.base_url())).await;
    let relayed = fetch(rig.url("chat/completions")).await;
    assert_eq!(direct.0, 200);
    assert_eq!(direct, relayed);
    assert_eq!(rig.mock.log.continuations().len(), 0);

    // errors are relayed untouched as well
    let bad = json!({"model": trace.name, "messages": [], "stream": false});
    let d = rig.http.post(format!("{}/chat/completions", rig.mock.base_url())).json(&bad).send().await.unwrap();
    let g = rig.http.post(rig.url("chat/completions")).json(&bad).send().await.unwrap();
    assert_eq!(d.status(), g.status());
    assert_eq!(d.bytes().await.unwrap(), g.bytes().await.unwrap());
    rig.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_are_isolated() {
    let mut traces = Vec::new();
    for seed in 0..4 {
        traces.push(synth_named("spike", seed, None).unwrap());
        traces.push(synth_named("natural", seed, None).unwrap());
    }
    traces.push(synth_named("flat", 0, None).unwrap());
    let policy = PolicyConfig::default();
    let rig = Rig::start(traces.clone(), MockOptions::default(), policy.clone()).await;
    let runs = traces.iter().map(|t| rig.completion(t, true));
    let results = futures::future::join_all(runs).await;
    for (t, got) in traces.iter().zip(results) {
        let want = replay(t, &policy).unwrap();
        assert_eq!(got.text, want.transcript, "{}", t.name);
        assert_eq!(got.event("summary").unwrap()["outcome"]["kind"], want.outcome.kind_str());
    }
    rig.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn non_streaming_requests_are_aggregated() {
    let trace = synth_named("spike", 5, None).unwrap();
    let policy = PolicyConfig::default();
    let rig = Rig::start(vec![trace.clone()], MockOptions::default(), policy.clone()).await;
    let body = json!({"model": trace.name, "messages": [{"role": "user", "content": "x"}], "rpdi_annotations": true});
    let resp: Value = rig.http.post(rig.url("chat/completions")).json(&body).send().await.unwrap().json().await.unwrap();
    assert_eq!(resp["object"], "chat.completion");
    let want = replay(&trace, &policy).unwrap();
    assert_eq!(resp["choices"][0]["message"]["content"], want.transcript);
    assert_eq!(resp["choices"][0]["finish_reason"], "stop");
    assert!(resp["rpdi_events"].as_array().unwrap().iter().any(|e| e["type"] == "early_exit"));
    rig.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn ablation_variant_is_applied_live() {
    let trace = synth_named("spike", 0, None).unwrap();
    let policy = PolicyConfig {
        variant: Variant::NoGtf,
        threshold: 1.0,
        ..PolicyConfig::default()
    };
    let rig = Rig::start(vec![trace.clone()], MockOptions::default(), policy.clone()).await;
    let got = rig.completion(&trace, true).await;
    let want = replay(&trace, &policy).unwrap();
    assert_eq!(got.text, want.transcript);
    assert_eq!(got.event("summary").unwrap()["outcome"]["step"].as_u64(), want.outcome.step());
    rig.stop().await;
}

#[tokio::test]
async fn unreachable_upstream_fails_health_check() {
    let upstream = UpstreamConfig::new("http://127.0.0.1:9/v1").unwrap();
    let config = GatewayConfig::new("127.0.0.1:0".parse().unwrap(), upstream, PolicyConfig::default());
    let err = spawn(config).await.err().expect("health check must fail");
    assert_eq!(err.kind(), "upstream_unhealthy");
}
