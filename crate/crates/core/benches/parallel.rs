use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dyk_core::backends::{Embedder, MockEmbedder};
use dyk_core::clusterer::{fit_gmm, to_f64, EmConfig};
use dyk_core::corpusbuilder::{build_span_corpus, Flavor, SpanConfig};
use dyk_core::ragstore::{docs_from_facts, RagIndex};
use dyk_core::synthetic;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("1-thread", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("default", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn bench_gmm(c: &mut Criterion) {
    let facts = synthetic::facts(2000, 1);
    let texts: Vec<String> = facts.iter().map(|f| f.text.clone()).collect();
    let x = to_f64(&MockEmbedder::new(64).embed(&texts).unwrap());
    let cfg = EmConfig { max_iter: 20, tol: 0.0 };
    let mut group = c.benchmark_group("fit_gmm_n2000_d64_k10");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| fit_gmm(&x, 10, 0, cfg).unwrap()))
        });
    }
    group.finish();
}

fn bench_span_corpus(c: &mut Criterion) {
    let facts = synthetic::facts(200, 2);
    let cfg = SpanConfig::new(Flavor::BiLM);
    let mut group = c.benchmark_group("span_corpus_200x100");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| build_span_corpus(&facts, 100, &cfg, 0).unwrap()))
        });
    }
    group.finish();
}

fn bench_search(c: &mut Criterion) {
    let facts = synthetic::facts(5000, 3);
    let emb = MockEmbedder::new(128);
    let index = RagIndex::build(docs_from_facts(&facts), &emb, 1000).unwrap();
    let queries: Vec<Vec<f32>> = facts.iter().take(64).map(|f| emb.embed_one(&f.text)).collect();
    let mut group = c.benchmark_group("rag_search_5000x64");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| queries.iter().map(|q| index.search(q, 3).unwrap()).collect::<Vec<_>>()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_gmm, bench_span_corpus, bench_search);
criterion_main!(benches);
