use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use dyk_core::backends::mock_http::{MockResponse, MockServer};
use dyk_core::backends::{
    BackendError, BackendKind, BackendSpec, Classifier, Completer, Embedder, RemoteClassifier,
    RemoteCompleter, RemoteEmbedder,
};
use serde_json::{json, Value};

fn spec(kind: BackendKind, server: &MockServer) -> BackendSpec {
    BackendSpec {
        backoff_ms: 1,
        timeout_ms: 5_000,
        ..BackendSpec::remote(kind, server.url())
    }
}

#[test]
fn completer_sends_prompt_and_strips_one_leading_space() {
    let server = MockServer::start(|route, body| {
        assert_eq!(route, "complete");
        let prompt = body["prompt"].as_str().unwrap();
        MockResponse::ok(json!({ "text": format!("  {}", prompt.len()) }))
    });
    let c = RemoteCompleter::new(&spec(BackendKind::Completion, &server)).unwrap();
    let out = c.complete("Who?", 7).unwrap();
    assert_eq!(out, format!(" {}", "Who?\nAnswer:".len()));

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    let body: Value = serde_json::from_str(&reqs[0].body).unwrap();
    assert_eq!(body["prompt"], "Who?\nAnswer:");
    assert_eq!(body["max_new_tokens"], 7);
    assert!(reqs[0].authorization.is_none());
}

#[test]
fn dropped_connections_are_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let server = MockServer::start(move |_, _| {
        if h.fetch_add(1, Ordering::SeqCst) < 2 {
            MockResponse::Drop
        } else {
            MockResponse::ok(json!({ "text": "ok" }))
        }
    });
    let c = RemoteCompleter::new(&spec(BackendKind::Completion, &server)).unwrap();
    assert_eq!(c.complete_prompt("p", 4).unwrap(), "ok");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_give_up_with_attempt_count() {
    let server = MockServer::start(|_, _| MockResponse::Drop);
    let mut s = spec(BackendKind::Completion, &server);
    s.max_retries = 2;
    let c = RemoteCompleter::new(&s).unwrap();
    match c.complete_prompt("p", 4) {
        Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected transport error, got {other:?}"),
    }
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn error_status_is_not_retried() {
    let server = MockServer::start(|_, _| MockResponse::Json(503, "{\"error\":\"busy\"}".into()));
    let c = RemoteCompleter::new(&spec(BackendKind::Completion, &server)).unwrap();
    match c.complete_prompt("p", 4) {
        Err(BackendError::Status { status, body, .. }) => {
            assert_eq!(status, 503);
            assert!(body.contains("busy"));
        }
        other => panic!("expected status error, got {other:?}"),
    }
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn malformed_body_is_reported() {
    let server = MockServer::start(|_, _| MockResponse::Json(200, "{\"txt\":1}".into()));
    let c = RemoteCompleter::new(&spec(BackendKind::Completion, &server)).unwrap();
    assert!(matches!(c.complete_prompt("p", 4), Err(BackendError::Malformed { .. })));
}

#[test]
fn embedder_batches_requests() {
    let server = MockServer::start(|route, body| {
        assert_eq!(route, "embed");
        let n = body["texts"].as_array().unwrap().len();
        let rows: Vec<Vec<f32>> = (0..n).map(|i| vec![i as f32, 1.0, 2.0]).collect();
        MockResponse::ok(json!({ "embeddings": rows }))
    });
    let e = RemoteEmbedder::new(&spec(BackendKind::Embedding, &server)).unwrap();
    let texts: Vec<String> = (0..130).map(|i| format!("t{i}")).collect();
    let out = e.embed(&texts).unwrap();
    assert_eq!(out.len(), 130);
    assert!(out.iter().all(|v| v.len() == 3));

    let sizes: Vec<usize> = server
        .requests()
        .iter()
        .map(|r| serde_json::from_str::<Value>(&r.body).unwrap()["texts"].as_array().unwrap().len())
        .collect();
    let mut sorted = sizes.clone();
    sorted.sort();
    assert_eq!(sorted, vec![2, 64, 64]);
}

#[test]
fn embedder_rejects_count_and_width_mismatch() {
    let short = MockServer::start(|_, _| MockResponse::ok(json!({ "embeddings": [[1.0]] })));
    let e = RemoteEmbedder::new(&spec(BackendKind::Embedding, &short)).unwrap();
    let two = vec!["a".to_string(), "b".to_string()];
    assert!(matches!(e.embed(&two), Err(BackendError::Contract(_))));

    let ragged = MockServer::start(|_, _| MockResponse::ok(json!({ "embeddings": [[1.0], [1.0, 2.0]] })));
    let e = RemoteEmbedder::new(&spec(BackendKind::Embedding, &ragged)).unwrap();
    assert!(matches!(e.embed(&two), Err(BackendError::Contract(_))));
    assert!(matches!(e.embed(&[]), Err(BackendError::Precondition(_))));
}

#[test]
fn classifier_checks_width_and_range() {
    let good = MockServer::start(|route, body| {
        assert_eq!(route, "classify");
        let n = body["texts"].as_array().unwrap().len();
        MockResponse::ok(json!({ "scores": vec![vec![0.2, 0.9, 0.0]; n] }))
    });
    let mut s = spec(BackendKind::Classifier, &good);
    s.k = Some(3);
    let c = RemoteClassifier::new(&s).unwrap();
    let out = c.classify(&["q".to_string()]).unwrap();
    assert_eq!(out, vec![vec![0.2, 0.9, 0.0]]);

    s.k = Some(4);
    let c = RemoteClassifier::new(&s).unwrap();
    assert!(matches!(c.classify(&["q".to_string()]), Err(BackendError::Contract(_))));

    let out_of_range = MockServer::start(|_, _| MockResponse::ok(json!({ "scores": [[1.5]] })));
    let c = RemoteClassifier::new(&spec(BackendKind::Classifier, &out_of_range)).unwrap();
    assert!(matches!(c.classify(&["q".to_string()]), Err(BackendError::Contract(_))));
}

#[test]
fn bearer_token_comes_from_named_env_var() {
    let var = "DYK_HTTP_TEST_TOKEN";
    std::env::set_var(var, "s3cret");
    let server = MockServer::start(|_, _| MockResponse::ok(json!({ "text": "x" })));
    let mut s = spec(BackendKind::Completion, &server);
    s.auth_env = Some(var.into());
    let c = RemoteCompleter::new(&s).unwrap();
    c.complete_prompt("p", 1).unwrap();
    assert_eq!(server.requests()[0].authorization.as_deref(), Some("Bearer s3cret"));
}

#[test]
fn factory_rejects_missing_endpoint() {
    let s = BackendSpec::new(BackendKind::Completion);
    assert!(matches!(
        dyk_core::backends::completer(&s),
        Err(BackendError::Config(_))
    ));
}
