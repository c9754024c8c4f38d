//! Acceptance checks. One line per criterion: PASS/FAIL, elapsed time and
//! budget. Exits nonzero if any check fails or overruns its budget.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use dyk_core::backends::{Completer, EchoCompleter, Embedder, MockEmbedder, MockMemorizer};
use dyk_core::clusterer::{centroids, fit_gmm, temporal_partition, to_f64, EmConfig};
use dyk_core::corpus::{fact_id, FactRecord};
use dyk_core::corpusbuilder::{build_span_corpus, candidate_count, enumerate_span_candidates, splice, Flavor, SpanConfig};
use dyk_core::evalharness::{match_metric, run_eval, token_f1, EvalOptions, OracleRouterSystem, RagSystem};
use dyk_core::ragstore::{docs_from_facts, RagIndex};
use dyk_core::scoperouter::{route_batch, CentroidScorer};
use dyk_core::{synthetic, ClusterAssignment, Decision, Dimension, QAItem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

const VOCAB: &[&str] = &["a", "b", "c", "Tess", "Posner", "two", "three", "years", "AI", "expert"];

fn phrase(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

fn oracle_contains(hay: &str, needle: &str) -> bool {
    let (h, n) = (hay.as_bytes(), needle.as_bytes());
    (0..=h.len().saturating_sub(n.len())).any(|i| h.len() >= n.len() && &h[i..i + n.len()] == n)
}

fn oracle_f1(pred: &str, gold: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() {
        return 0.0;
    }
    let mut used = vec![false; g.len()];
    let mut overlap = 0.0;
    for t in &p {
        if let Some(j) = (0..g.len()).find(|&j| !used[j] && g[j] == *t) {
            used[j] = true;
            overlap += 1.0;
        }
    }
    if overlap == 0.0 {
        return 0.0;
    }
    let (prec, rec) = (overlap / p.len() as f64, overlap / g.len() as f64);
    2.0 * prec * rec / (prec + rec)
}

fn metrics() {
    assert!(match_metric("AI expert Tess Posner", "Tess Posner").unwrap());
    assert!((token_f1("AI expert Tess Posner", "Tess Posner").unwrap() - 2.0 / 3.0).abs() < 1e-4);
    assert!(!match_metric("three years", "two years").unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    while checked < 1000 {
        let pred = phrase(&mut rng, 8);
        let gold = phrase(&mut rng, 4);
        if gold.trim().is_empty() {
            assert!(match_metric(&pred, &gold).is_err());
            assert!(token_f1(&pred, &gold).is_err());
            continue;
        }
        assert_eq!(match_metric(&pred, &gold).unwrap(), oracle_contains(&pred, &gold), "{pred:?} {gold:?}");
        let f = token_f1(&pred, &gold).unwrap();
        assert!((f - oracle_f1(&pred, &gold)).abs() < 1e-12, "{pred:?} {gold:?}");
        assert!((0.0..=1.0).contains(&f));
        checked += 1;
    }
}

fn word_fact(i: usize, len: usize) -> FactRecord {
    let text = (0..len).map(|t| format!("w{i}x{t}")).collect::<Vec<_>>().join(" ");
    let date = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
    FactRecord {
        id: fact_id(date, &text),
        date,
        bold_entity: format!("w{i}x0"),
        text,
        article_title: format!("T{i}"),
        article_text: String::new(),
        source_url: String::new(),
        multi_bold: false,
        links: Vec::new(),
    }
}

fn masking() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let len: usize = rng.random_range(1..=60);
        let expect: usize = (1..=5).map(|l| (len + 1).saturating_sub(l)).sum();
        assert_eq!(candidate_count(len, 1, 5), expect);
        let words: Vec<String> = (0..len).map(|t| format!("t{}", rng.random_range(0..50) + t)).collect();
        let toks: Vec<&str> = words.iter().map(String::as_str).collect();
        let original = toks.join(" ");
        for flavor in [Flavor::BiLM, Flavor::Clm] {
            let cfg = SpanConfig::new(flavor);
            let cands = enumerate_span_candidates("f", &toks, 1, 5, cfg.placeholder()).unwrap();
            assert_eq!(cands.len(), expect);
            for c in &cands {
                assert_eq!(splice(&c.masked_input, &c.target, cfg.placeholder()), original);
            }
        }
    }
    let facts: Vec<FactRecord> = (0..20).map(|i| word_fact(i, 3 + i % 9)).collect();
    for flavor in [Flavor::BiLM, Flavor::Clm] {
        for s in [1, 7, 1000] {
            let corpus = build_span_corpus(&facts, s, &SpanConfig::new(flavor), 5).unwrap();
            let mut per: HashMap<&str, usize> = HashMap::new();
            for r in &corpus.records {
                *per.entry(r.fact_id.as_str()).or_default() += 1;
            }
            assert_eq!(per.len(), facts.len());
            assert!(per.values().all(|&c| c == s), "s={s}");
        }
    }
}

fn gaussian_mixture() {
    let centres = [[0.0, 0.0, 0.0], [10.0, 0.0, -10.0], [-10.0, 10.0, 0.0]];
    let sds = [[1.0, 0.5, 1.5], [0.7, 1.2, 1.0], [1.0, 1.0, 0.6]];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..500 {
        let l = i % 3;
        let row: Vec<f64> = (0..3)
            .map(|t| Normal::new(centres[l][t], sds[l][t]).unwrap().sample(&mut rng))
            .collect();
        x.push(row);
        y.push(l);
    }
    let fit = fit_gmm(&x, 3, 0, EmConfig::default()).unwrap();
    for l in 0..3 {
        let rows: Vec<&Vec<f64>> = x.iter().zip(&y).filter(|(_, c)| **c == l).map(|(r, _)| r).collect();
        let mean: Vec<f64> = (0..3).map(|t| rows.iter().map(|r| r[t]).sum::<f64>() / rows.len() as f64).collect();
        let best = fit
            .params
            .means
            .iter()
            .map(|m| m.iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.1, "component {l}: {best}");
    }
    for seed in 0..50u64 {
        let f = fit_gmm(&x, 3, seed, EmConfig::default()).unwrap();
        for w in f.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "seed {seed}");
        }
    }

    let k1 = fit_gmm(&x, 1, 9, EmConfig::default()).unwrap();
    let n = x.len() as f64;
    let mut mean = [0.0; 3];
    for r in &x {
        for t in 0..3 {
            mean[t] += r[t];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; 3];
    for r in &x {
        for t in 0..3 {
            var[t] += (r[t] - mean[t]) * (r[t] - mean[t]);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let floor = (1e-6 * var.iter().sum::<f64>() / 3.0).max(1e-12);
    assert_eq!(k1.params.weights, vec![1.0]);
    assert_eq!(k1.params.means[0], mean.to_vec());
    assert_eq!(k1.params.variances[0], var.map(|v| v.max(floor)).to_vec());
    assert_eq!(k1.iterations, 0);
}

fn temporal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let start = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap();
    for _ in 0..200 {
        let n = rng.random_range(1..=300);
        let k = rng.random_range(1..=n.min(40));
        let mut facts: Vec<FactRecord> = (0..n)
            .map(|i| {
                let mut f = word_fact(i, 2);
                f.date = start + chrono::Days::new(rng.random_range(0..30));
                f.id = fact_id(f.date, &f.text);
                f
            })
            .collect();
        let a = temporal_partition(&facts, k).unwrap();
        facts.sort_by(|p, q| (p.date, &p.id).cmp(&(q.date, &q.id)));
        let labels: Vec<usize> = facts.iter().map(|f| a.get(&f.id).unwrap()).collect();
        assert!(labels.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
        let mut sizes = vec![0usize; k];
        for l in &labels {
            sizes[*l] += 1;
        }
        let want: Vec<usize> = (0..k).map(|i| if i < n % k { n.div_ceil(k) } else { n / k }).collect();
        assert_eq!(sizes, want, "n={n} k={k}");
    }
    assert!(temporal_partition(&[word_fact(0, 2)], 2).is_err());
}

fn cluster_backends(assignment: &ClusterAssignment, items: &[QAItem]) -> Vec<Arc<dyn Completer>> {
    (0..assignment.k)
        .map(|c| {
            let own = items.iter().filter(|i| assignment.get(&i.fact_id) == Some(c));
            Arc::new(MockMemorizer::from_items(own, "UNKNOWN")) as Arc<dyn Completer>
        })
        .collect()
}

fn perfect_routing() {
    let facts = synthetic::facts(100, 7);
    let rel = synthetic::reliability(&facts);
    let loc = synthetic::locality(&facts);
    let questions: Vec<QAItem> = rel.iter().chain(&loc).cloned().collect();
    let embedder = Arc::new(MockEmbedder::new(64));
    let queries: Vec<String> = rel.iter().map(|i| i.question.clone()).collect();
    let ids: Vec<String> = rel.iter().map(|i| i.fact_id.clone()).collect();
    let x = to_f64(&embedder.embed(&queries).unwrap());
    for k in [3, 5, 10] {
        let assignment = temporal_partition(&facts, k).unwrap();
        let system = OracleRouterSystem {
            clusters: cluster_backends(&assignment, &rel),
            base: Arc::new(MockMemorizer::from_items(&loc, "UNKNOWN")),
            assignment: assignment.clone(),
            max_new_tokens: 32,
        };
        let run = run_eval(&questions, &system, EvalOptions::default(), &[], &mut |_| Ok(())).unwrap();
        let r = &run.report.dimensions[&Dimension::Reliability];
        assert_eq!(r.match_pct, 100.0, "k={k}");
        assert_eq!(r.defer_pct, Some(0.0));
        assert_eq!(run.report.dimensions[&Dimension::Locality].defer_pct, Some(100.0));

        let scorer = CentroidScorer::new(embedder.clone(), centroids(&ids, &x, &assignment).unwrap()).unwrap();
        let mut last = -1.0;
        for step in 0..=20 {
            let routed = route_batch(&queries, &scorer, step as f64 / 20.0).unwrap();
            let rate = routed.iter().filter(|r| r.decision == Decision::Defer).count() as f64 / routed.len() as f64;
            assert!(rate >= last, "k={k} step={step}");
            last = rate;
        }
    }
}

fn rag() {
    let facts = synthetic::facts(100, 5);
    let items = synthetic::reliability(&facts);
    let base = MockEmbedder::new(64);
    let index = RagIndex::build(docs_from_facts(&facts), &base, 2000).unwrap();
    let mut pinned = base.clone();
    for (item, fact) in items.iter().zip(&facts) {
        let pos = index.docs.iter().position(|d| d.doc_id == fact.article_title).unwrap();
        pinned.pin(&item.question, index.vectors[pos].clone());
    }
    for (item, fact) in items.iter().zip(&facts) {
        assert_eq!(index.retrieve_topk(&item.question, 1, &pinned).unwrap().hits[0].doc_id, fact.article_title);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let q: Vec<f32> = (0..64).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let k = rng.random_range(1..10);
        let got: Vec<String> = index.search(&q, k).unwrap().hits.into_iter().map(|h| h.doc_id).collect();
        let norm = q.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        let qn: Vec<f32> = q.iter().map(|&v| (v as f64 / norm) as f32).collect();
        let mut all: Vec<(f64, &str)> = index
            .vectors
            .iter()
            .zip(&index.docs)
            .map(|(v, d)| (v.iter().zip(&qn).map(|(a, b)| *a as f64 * *b as f64).sum(), d.doc_id.as_str()))
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
        let want: Vec<String> = all.iter().take(k).map(|(_, id)| id.to_string()).collect();
        assert_eq!(got, want);
    }

    let system = RagSystem::new(Arc::new(index), Arc::new(pinned), Arc::new(EchoCompleter::default()));
    let run = run_eval(&items, &system, EvalOptions::default(), &[], &mut |_| Ok(())).unwrap();
    assert_eq!(run.report.dimensions[&Dimension::Reliability].match_pct, 100.0);
}

fn pipeline_determinism() {
    let artifacts = ["facts.jsonl", "corpora/corpus.jsonl", "clusters.json", "reports/mock.records.jsonl"];
    let build = || {
        let ws = common::Workspace::new(20, json!({ "clustering": { "k": 2 } }));
        for stage in ["ingest", "questions", "corpus", "cluster", "eval"] {
            let r = ws.run(stage, &["--seed", "17"]);
            assert_eq!(r.code, 0, "{stage}: {}", r.stderr);
        }
        ws
    };
    let (a, b) = (build(), build());
    for rel in artifacts {
        let bytes = a.read(rel);
        assert!(!bytes.is_empty(), "{rel}");
        assert!(bytes == b.read(rel), "{rel} differs");
    }
}

type Check = (&'static str, fn(), Duration);

fn main() {
    let checks: [Check; 7] = [
        ("metrics: fuzzed pairs match brute-force oracles", metrics, Duration::from_secs(5)),
        ("masking: candidate counts, splice, s records per fact", masking, Duration::from_secs(10)),
        ("gmm: recovery within 0.1, monotone EM, exact k=1", gaussian_mixture, Duration::from_secs(30)),
        ("temporal: contiguous balanced blocks", temporal, Duration::from_secs(2)),
        ("routing: oracle routing and monotone defer rate", perfect_routing, Duration::from_secs(60)),
        ("rag: gold rank 1, search oracle, echo match", rag, Duration::from_secs(30)),
        ("pipeline: same seed gives identical artifacts", pipeline_determinism, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (name, check, budget) in checks {
        let start = Instant::now();
        let ok = catch_unwind(AssertUnwindSafe(check)).is_ok();
        let took = start.elapsed();
        let pass = ok && took <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} {name} ({:.2}s / {}s)",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
