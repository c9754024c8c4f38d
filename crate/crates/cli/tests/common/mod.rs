#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use dyk_core::synthetic;
use serde_json::{json, Value};

pub struct Run {
    pub code: i32,
    pub summary: Value,
    pub stderr: String,
}

/// A scratch directory holding a synthetic archive, article pages and a
/// config that uses only in-process backends.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new(n_facts: usize, overrides: Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let facts = synthetic::facts(n_facts, 42);
        std::fs::write(dir.path().join("archive.wiki"), synthetic::archive_wikitext(&facts)).unwrap();
        synthetic::write_articles(&facts, &dir.path().join("articles")).unwrap();
        let mut cfg = json!({
            "paths": { "archive": "archive.wiki", "articles": "articles" },
            "backends": {
                "generator": { "kind": "stub_generator" },
                "embedder": { "kind": "mock_embedding", "dim": 32 },
                "base": { "kind": "mock_memorizer" },
                "memo": { "kind": "mock_memorizer", "entries": "questions.jsonl" },
                "echo": { "kind": "echo" }
            },
            "questions": { "backoff_ms": 0 },
            "corpus": { "s": 10 },
            "clustering": { "k": 3, "seed": 1 },
            "router": { "clusters": ["memo", "memo", "memo"] },
            "eval": { "system": "mock" }
        });
        merge(&mut cfg, overrides);
        let ws = Self { dir };
        ws.write_config(&cfg);
        ws
    }

    pub fn write_config(&self, cfg: &Value) {
        std::fs::write(self.config(), serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn config(&self) -> PathBuf {
        self.path("config.json")
    }

    pub fn run(&self, stage: &str, extra: &[&str]) -> Run {
        run_bin(stage, &self.config(), extra)
    }

    pub fn read(&self, rel: &str) -> Vec<u8> {
        std::fs::read(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

pub fn run_bin(stage: &str, config: &Path, extra: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_dyk"))
        .arg(stage)
        .arg("--config")
        .arg(config)
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run dyk");
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(lines.len(), 1, "expected one summary line, got {stdout:?}");
    Run {
        code: out.status.code().unwrap_or(-1),
        summary: serde_json::from_str(lines[0]).expect("summary is JSON"),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Recursive object merge; non-objects in `patch` replace.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}
