mod common;

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use emodetect_core::backend::http::{build_request, parse_response, ChatRequest};
use emodetect_core::backend::{
    Backend, BackendError, Completion, GenerationConfig, HttpBackend, RetryPolicy,
};
use emodetect_core::corpus::Track;
use emodetect_core::prompting::{PromptInstance, Strategy};
use serde_json::Value;

fn fast_retry(max_retries: u32) -> RetryPolicy {
    RetryPolicy {
        max_retries,
        base_delay: Duration::from_millis(1),
        max_delay: Duration::from_millis(4),
    }
}

fn prompt() -> PromptInstance {
    PromptInstance {
        sample_id: "s1".into(),
        strategy: Strategy::Base,
        track: Track::A,
        system: "sys".into(),
        user: "Given the sentence: \"x\", which emotions are expressed in it?".into(),
        assistant: None,
        target_label: None,
    }
}

const OK_BODY: &str = r#"{"choices":[{"message":{"content":"joy"},"logprobs":null}]}"#;

#[test]
fn server_errors_exhaust_retries() {
    let server = common::serve(|_| (500, "{}".into()));
    let backend = HttpBackend::new(&server.url(), None, "m", fast_retry(2)).unwrap();
    let err = backend
        .complete(&prompt(), &GenerationConfig::default())
        .unwrap_err();
    assert!(
        matches!(err, BackendError::Transport { attempts: 3, .. }),
        "{err}"
    );
    assert_eq!(server.requests().len(), 3);
    assert_eq!(backend.retries(), 2);
}

#[test]
fn transient_failures_recover() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = calls.clone();
    let server = common::serve(move |_| {
        if seen.fetch_add(1, Ordering::SeqCst) < 2 {
            (503, "busy".into())
        } else {
            (200, OK_BODY.into())
        }
    });
    let backend =
        HttpBackend::new(&server.url(), Some("secret".into()), "m", fast_retry(2)).unwrap();
    let c = backend
        .complete(&prompt(), &GenerationConfig::default())
        .unwrap();
    assert_eq!(c, Completion::text("joy"));
    let reqs = server.requests();
    assert_eq!(reqs.len(), 3);
    assert_eq!(reqs[2].path, "/v1/chat/completions");
    assert!(reqs[2]
        .headers
        .iter()
        .any(|(k, v)| k == "authorization" && v == "Bearer secret"));
}

#[test]
fn client_errors_are_not_retried() {
    let server = common::serve(|_| (400, r#"{"error":"bad role"}"#.into()));
    let backend = HttpBackend::new(&server.url(), None, "m", fast_retry(3)).unwrap();
    let err = backend
        .complete(&prompt(), &GenerationConfig::default())
        .unwrap_err();
    assert!(matches!(err, BackendError::Rejected { status: 400, .. }));
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn malformed_body_is_reported() {
    let server = common::serve(|_| (200, "not json".into()));
    let backend = HttpBackend::new(&server.url(), None, "m", fast_retry(0)).unwrap();
    assert!(matches!(
        backend.complete(&prompt(), &GenerationConfig::default()),
        Err(BackendError::Malformed(_))
    ));
}

#[test]
fn timeouts_surface_after_retries() {
    let server = common::serve(|_| {
        std::thread::sleep(Duration::from_millis(300));
        (200, OK_BODY.into())
    });
    let backend = HttpBackend::new(&server.url(), None, "m", fast_retry(1)).unwrap();
    let cfg = GenerationConfig {
        request_timeout: Duration::from_millis(50),
        ..Default::default()
    };
    let err = backend.complete(&prompt(), &cfg).unwrap_err();
    assert!(
        matches!(err, BackendError::Timeout { attempts: 2 }),
        "{err}"
    );
}

#[test]
fn refuses_prompts_with_answers() {
    let backend = HttpBackend::new("http://127.0.0.1:9", None, "m", fast_retry(0)).unwrap();
    let mut p = prompt();
    p.assistant = Some("joy".into());
    assert!(matches!(
        backend.complete(&p, &GenerationConfig::default()),
        Err(BackendError::AnswerInPrompt(_))
    ));
}

fn fixtures() -> Vec<(PathBuf, Value)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/protocol");
    let mut out: Vec<(PathBuf, Value)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| {
            let v = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
            (p, v)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    assert!(out.len() >= 3);
    out
}

fn prompt_from_request(req: &ChatRequest) -> PromptInstance {
    PromptInstance {
        sample_id: "fixture".into(),
        strategy: Strategy::Base,
        track: Track::A,
        system: req.messages[0].content.clone(),
        user: req.messages[1].content.clone(),
        assistant: None,
        target_label: None,
    }
}

#[test]
fn conformance_fixtures() {
    for (path, fx) in fixtures() {
        let name = path.display();
        let req: ChatRequest = serde_json::from_value(fx["request"].clone()).unwrap();
        let cfg = GenerationConfig {
            want_logprobs: req.logprobs,
            top_logprobs: req.top_logprobs.unwrap_or(5),
            ..Default::default()
        };
        let built = build_request(&prompt_from_request(&req), &cfg, &req.model);
        assert_eq!(
            serde_json::to_string(&built).unwrap(),
            serde_json::to_string(&fx["request"]).unwrap(),
            "{name}"
        );

        let expected: Completion = serde_json::from_value(fx["expected"].clone()).unwrap();
        let body = serde_json::to_string(&fx["response"]).unwrap();
        assert_eq!(parse_response(&body).unwrap(), expected, "{name}");

        // same fixture through the wire
        let served = body.clone();
        let server = common::serve(move |_| (200, served.clone()));
        let backend =
            HttpBackend::new(&server.url(), None, req.model.clone(), fast_retry(0)).unwrap();
        let got = backend.complete(&prompt_from_request(&req), &cfg).unwrap();
        assert_eq!(got, expected, "{name}");
        let sent: Value = serde_json::from_str(&server.requests()[0].body).unwrap();
        assert_eq!(sent, fx["request"], "{name}");
    }
}

#[test]
fn logprob_fixture_yields_probability() {
    let fx = fixtures()
        .into_iter()
        .find(|(p, _)| p.ends_with("pairwise_logprobs.json"))
        .unwrap()
        .1;
    let c = parse_response(&fx["response"].to_string()).unwrap();
    let p = emodetect_core::backend::pairwise_yes_probability(&c).unwrap();
    let yes = 0.1f64 + (-7.5f64).exp();
    let no = (-0.105360515657826f64).exp() + (-6.0f64).exp();
    assert!((p - yes / (yes + no)).abs() < 1e-12);
    assert!(p < 0.5);
}

#[test]
fn positive_logprob_is_malformed() {
    let body = r#"{"choices":[{"message":{"content":"yes"},"logprobs":{"content":[{"token":"yes","logprob":0.5}]}}]}"#;
    assert!(matches!(
        parse_response(body),
        Err(BackendError::Malformed(_))
    ));
}
