mod common;

use common::Workspace;
use serde_json::json;

#[test]
fn full_pipeline_runs_stage_by_stage() {
    let ws = Workspace::new(12, json!({}));
    let r = ws.run("ingest", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.summary["n_facts"], 12);
    assert_eq!(r.summary["stage"], "ingest");
    assert_eq!(r.summary["articles_attached"], 12);

    let r = ws.run("questions", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.summary["per_dimension"]["Reliability"], 12);
    assert_eq!(r.summary["per_dimension"]["Locality"], 12);

    let r = ws.run("corpus", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.summary["n_records"], 120);
    let corpus = String::from_utf8(ws.read("corpora/corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 120);
    let meta: serde_json::Value = serde_json::from_slice(&ws.read("corpora/corpus.meta.json")).unwrap();
    assert_eq!(meta["objective"], "SpanPrediction");
    assert_eq!(meta["flavor"], "BiLM");
    assert_eq!(meta["config_fingerprint"], r.summary["config_fingerprint"]);

    let r = ws.run("cluster", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let sizes: Vec<u64> = serde_json::from_value(r.summary["sizes"].clone()).unwrap();
    assert_eq!(sizes.iter().sum::<u64>(), 12);

    let r = ws.run("scope-data", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.summary["n_negative"], 0);

    let r = ws.run("rag-index", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.summary["n"], 12);
    assert_eq!(r.summary["d"], 32);

    for system in ["mock", "router", "rag"] {
        let r = ws.run("eval", &["--system", system]);
        assert_eq!(r.code, 0, "{system}: {}", r.stderr);
    }
    let r = ws.run("eval", &["--system", "mock"]);
    assert_eq!(r.summary["dimensions"]["Reliability"]["match_pct"], 100.0);
    assert_eq!(r.summary["reused"], r.summary["n_records"]);

    let r = ws.run("report", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.summary["systems"].as_array().unwrap().len(), 3);
    let md = String::from_utf8(ws.read("reports/report.md")).unwrap();
    assert!(md.starts_with("| System | Reliability Match | Reliability F1 |"));
}

#[test]
fn corpus_with_s_1000_on_100_facts_emits_100000_records() {
    let ws = Workspace::new(100, json!({ "corpus": { "s": 1000 } }));
    assert_eq!(ws.run("ingest", &[]).code, 0);
    let r = ws.run("corpus", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.summary["n_records"], 100_000);
}

#[test]
fn cluster_with_k1_puts_everything_in_cluster_zero() {
    let ws = Workspace::new(10, json!({ "clustering": { "k": 1 } }));
    assert_eq!(ws.run("ingest", &[]).code, 0);
    assert_eq!(ws.run("cluster", &[]).code, 0);
    let file: serde_json::Value = serde_json::from_slice(&ws.read("clusters.json")).unwrap();
    let assignments = file["assignments"].as_object().unwrap();
    assert_eq!(assignments.len(), 10);
    assert!(assignments.values().all(|c| c == 0));
}

#[test]
fn temporal_clustering_needs_no_embedder() {
    let ws = Workspace::new(10, json!({ "clustering": { "kind": "Temporal", "k": 4, "embedder": "none" } }));
    assert_eq!(ws.run("ingest", &[]).code, 0);
    let r = ws.run("cluster", &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.summary["sizes"], json!([3, 3, 2, 2]));
}

#[test]
fn missing_inputs_exit_2() {
    let ws = Workspace::new(5, json!({}));
    let r = ws.run("eval", &[]);
    assert_eq!(r.code, 2);
    assert_eq!(r.summary["status"], "error");
    assert!(r.summary["error"].as_str().unwrap().contains("questions"));
    assert_eq!(ws.run("corpus", &[]).code, 2);
    assert_eq!(ws.run("report", &[]).code, 2);
    let missing = ws.path("nope.json");
    assert_eq!(common::run_bin("ingest", &missing, &[]).code, 2);
}

#[test]
fn invalid_config_exits_3() {
    let ws = Workspace::new(5, json!({ "corpus": { "s": 0 } }));
    assert_eq!(ws.run("ingest", &[]).code, 3);
    let ws = Workspace::new(5, json!({ "router": { "threshold": 1.5 } }));
    assert_eq!(ws.run("ingest", &[]).code, 3);
    let ws = Workspace::new(5, json!({ "unknown_section": {} }));
    assert_eq!(ws.run("ingest", &[]).code, 3);
    let ws = Workspace::new(5, json!({ "questions": { "generator": "${DYK_TEST_SURELY_UNSET_VAR}" } }));
    assert_eq!(ws.run("ingest", &[]).code, 3);
    let ws = Workspace::new(5, json!({ "clustering": { "k": 50 } }));
    assert_eq!(ws.run("ingest", &[]).code, 0);
    assert_eq!(ws.run("cluster", &[]).code, 3);
}

#[test]
fn seed_override_changes_fingerprint_and_corpus() {
    let ws = Workspace::new(6, json!({}));
    assert_eq!(ws.run("ingest", &[]).code, 0);
    let a = ws.run("corpus", &[]);
    let first = ws.read("corpora/corpus.jsonl");
    let b = ws.run("corpus", &["--seed", "99"]);
    assert_ne!(a.summary["config_fingerprint"], b.summary["config_fingerprint"]);
    assert_eq!(b.summary["seed"], 99);
    assert_ne!(first, ws.read("corpora/corpus.jsonl"));
    ws.run("corpus", &[]);
    assert_eq!(first, ws.read("corpora/corpus.jsonl"));
}

#[test]
fn env_interpolation_reaches_backends() {
    let ws = Workspace::new(4, json!({ "questions": { "generator": "${DYK_GEN_NAME}" } }));
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_dyk"))
        .args(["ingest", "--config"])
        .arg(ws.config())
        .env("DYK_GEN_NAME", "generator")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn route_serve_answers_over_http() {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::process::{Command, Stdio};

    let ws = Workspace::new(9, json!({ "router": { "threshold": 0.0 } }));
    for stage in ["ingest", "questions", "cluster"] {
        assert_eq!(ws.run(stage, &[]).code, 0, "{stage}");
    }
    let mut child = Command::new(env!("CARGO_BIN_EXE_dyk"))
        .args(["route-serve", "--listen", "127.0.0.1:0", "--scorer", "gmm", "--config"])
        .arg(ws.config())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let started: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(started["status"], "listening");
    assert_eq!(started["scorer"], "gmm");
    let addr = started["addr"].as_str().unwrap().to_string();

    let request = |raw: String| {
        let mut s = std::net::TcpStream::connect(&addr).unwrap();
        s.write_all(raw.as_bytes()).unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        let body = out.split("\r\n\r\n").nth(1).unwrap().to_string();
        serde_json::from_str::<serde_json::Value>(&body).unwrap()
    };
    let health = request(format!("GET /v1/health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"));
    assert_eq!(health, json!({ "status": "ok", "k": 3, "scorer": "gmm" }));

    let questions: Vec<dyk_core::QAItem> = dyk_core::jsonl::read(ws.path("questions.jsonl")).unwrap();
    let q = questions.iter().find(|q| q.dimension == dyk_core::Dimension::Reliability).unwrap();
    let body = json!({ "question": q.question }).to_string();
    let answer = request(format!(
        "POST /v1/answer HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    ));
    assert_eq!(answer["scores"].as_array().unwrap().len(), 3);
    assert_eq!(answer["route"]["kind"], "cluster");
    assert_eq!(answer["answer"], q.answer.as_str());
    child.kill().unwrap();
    child.wait().unwrap();
}
