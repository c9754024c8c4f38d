//! One function per pipeline stage.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context as _;
use dyk_core::backends::{self, Completer, Embedder, MockMemorizer};
use dyk_core::clusterer::{
    self, centroids, fit_gmm, gmm_assign, temporal_partition, to_f64, ClusterError, ClustersFile, EmConfig,
};
use dyk_core::corpus::{self, ArticleSource, DirArticleSource, RateLimited};
use dyk_core::corpusbuilder::{self, CorpusMeta, Objective};
use dyk_core::evalharness::{
    self, run_eval, AnswerFn, EvalOptions, EvalRecord, EvalReport, OracleRouterSystem, RagSystem, StaticSystem,
};
use dyk_core::jsonl::{self, Sink};
use dyk_core::qagen::{Generators, QuestionPipeline, RetryPolicy};
use dyk_core::ragstore::{docs_from_facts, RagIndex};
use dyk_core::scoperouter::{build_scope_dataset, density_gate, Split};
use dyk_core::{ClusterKind, Dimension, FactRecord, QAItem};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{PipelineConfig, SystemKind};
use crate::CliError;

pub struct Context {
    pub cfg: PipelineConfig,
    pub fingerprint: String,
}

impl Context {
    /// Load the config, apply the seed override, fingerprint, then resolve
    /// paths against the config's directory.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = PipelineConfig::load(path)?;
        if let Some(seed) = seed {
            cfg.override_seed(seed);
        }
        Ok(Self::new(cfg, path.parent().unwrap_or(Path::new("."))))
    }

    pub fn new(mut cfg: PipelineConfig, base: &Path) -> Self {
        let fingerprint = cfg.fingerprint();
        cfg.resolve_paths(base);
        Self { cfg, fingerprint }
    }

    pub fn completer(&self, name: &str) -> Result<Arc<dyn Completer>, CliError> {
        backends::completer(self.cfg.backend(name)?).map_err(|e| CliError::Invalid(format!("backend {name}: {e}")))
    }

    pub fn embedder(&self, name: &str) -> Result<Arc<dyn Embedder>, CliError> {
        backends::embedder(self.cfg.backend(name)?).map_err(|e| CliError::Invalid(format!("backend {name}: {e}")))
    }

    fn write_meta<T: Serialize>(&self, output: &Path, meta: &T) -> Result<(), CliError> {
        let mut value = serde_json::to_value(meta).map_err(CliError::runtime)?;
        if let Value::Object(map) = &mut value {
            map.insert("config_fingerprint".into(), self.fingerprint.clone().into());
        }
        let path = sidecar(output);
        let body = serde_json::to_string_pretty(&value).map_err(CliError::runtime)? + "\n";
        std::fs::write(&path, body)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(CliError::Runtime)
    }
}

/// `dir/name.ext` → `dir/name.meta.json`.
pub fn sidecar(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.meta.json"))
}

pub fn require(path: &Path, artifact: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing {
            artifact: artifact.to_string(),
            path: path.to_path_buf(),
        })
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(CliError::Runtime)?;
    }
    Ok(())
}

fn load_facts(path: &Path, artifact: &str) -> Result<Vec<FactRecord>, CliError> {
    require(path, artifact)?;
    corpus::load_facts(path).map_err(|e| CliError::Invalid(e.to_string()))
}

fn load_items(path: &Path, artifact: &str) -> Result<Vec<QAItem>, CliError> {
    require(path, artifact)?;
    jsonl::read(path).map_err(|e| CliError::Invalid(e.to_string()))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<usize, CliError> {
    ensure_parent(path)?;
    jsonl::write(path, items).map_err(CliError::runtime)
}

fn archive_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wiki" || x == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn ingest(ctx: &Context) -> Result<Value, CliError> {
    let paths = &ctx.cfg.paths;
    let archive = paths
        .archive
        .as_ref()
        .ok_or_else(|| CliError::Invalid("paths.archive is not set".into()))?;
    require(archive, "archive")?;
    let mut all = Vec::new();
    let mut report = corpus::ParseReport::default();
    for file in archive_files(archive)? {
        let raw = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
        let page = corpus::parse_archive(&raw);
        all.extend(page.facts);
        report.merge(page.report);
    }
    corpus::canonical_order(&mut all);
    let mut attached = 0;
    if let Some(dir) = &paths.articles {
        require(dir, "articles directory")?;
        let source = RateLimited::new(
            DirArticleSource::new(dir),
            Duration::from_millis(ctx.cfg.ingest.fetch_interval_ms),
        );
        attached = corpus::attach_articles(&mut all, &source);
    }
    let facts = match &ctx.cfg.ingest.window {
        Some(w) => corpus::filter_facts(&all, w),
        None => all.clone(),
    };
    ensure_parent(&paths.facts)?;
    corpus::save_facts(&paths.facts, &facts).map_err(CliError::runtime)?;
    let mut n_negative = None;
    if let (Some(out), Some(window)) = (&paths.negative_facts, &ctx.cfg.ingest.negative_window) {
        let negatives = corpus::filter_facts(&all, window);
        ensure_parent(out)?;
        corpus::save_facts(out, &negatives).map_err(CliError::runtime)?;
        n_negative = Some(negatives.len());
    }
    let meta = json!({
        "n_facts": facts.len(),
        "n_parsed": all.len(),
        "n_negative_facts": n_negative,
        "articles_attached": attached,
        "bullets": report.bullets,
        "not_dyk": report.not_dyk,
        "no_bold": report.no_bold,
        "malformed": report.malformed,
        "multi_bold": report.multi_bold,
    });
    ctx.write_meta(&paths.facts, &meta)?;
    Ok(meta)
}

fn generators(ctx: &Context) -> Result<Generators, CliError> {
    let q = &ctx.cfg.questions;
    let pick = |prompt: &str| -> Result<Arc<dyn Completer>, CliError> {
        ctx.completer(q.per_prompt.get(prompt).unwrap_or(&q.generator))
    };
    Ok(Generators {
        reliability: pick("reliability")?,
        paraphrase: pick("paraphrase")?,
        generality: pick("generality")?,
        description: pick("description")?,
        portability: pick("portability")?,
        locality: pick("locality")?,
        training: pick("training")?,
    })
}

pub fn questions(ctx: &Context, negatives: bool) -> Result<Value, CliError> {
    let paths = &ctx.cfg.paths;
    let (input, output) = if negatives {
        let unset = |k: &str| CliError::Invalid(format!("paths.{k} is not set"));
        (
            paths.negative_facts.clone().ok_or_else(|| unset("negative_facts"))?,
            paths.negatives.clone().ok_or_else(|| unset("negatives"))?,
        )
    } else {
        (paths.facts.clone(), paths.questions.clone())
    };
    let facts = load_facts(&input, "facts")?;
    let q = &ctx.cfg.questions;
    let mut pipeline = QuestionPipeline::new(generators(ctx)?);
    pipeline.policy = RetryPolicy {
        max_attempts: q.max_attempts,
        backoff: Duration::from_millis(q.backoff_ms),
    };
    pipeline.in_flight = q.in_flight;
    pipeline.strict_pages = q.strict_pages;
    pipeline.dimensions = q.dimensions.clone();
    if let Some(dir) = &paths.articles {
        pipeline.pages = Some(Arc::new(DirArticleSource::new(dir)) as Arc<dyn ArticleSource>);
    }
    let existing = if output.exists() {
        load_items(&output, "questions")?
    } else {
        Vec::new()
    };
    let resumed = existing.len();
    let run = pipeline.run(&facts, existing);
    write_jsonl(&output, &run.items)?;
    let mut per_dimension: BTreeMap<Dimension, usize> = BTreeMap::new();
    for item in &run.items {
        *per_dimension.entry(item.dimension).or_default() += 1;
    }
    let mut dropped_by_reason: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &run.dropped {
        *dropped_by_reason.entry(d.reason.as_str()).or_default() += 1;
    }
    let meta = json!({
        "n_facts": facts.len(),
        "n_items": run.items.len(),
        "generated": run.generated,
        "resumed": resumed,
        "per_dimension": per_dimension,
        "dropped": run.dropped.len(),
        "dropped_by_reason": dropped_by_reason,
        "dropped_items": run.dropped,
    });
    ctx.write_meta(&output, &meta)?;
    let mut summary = meta;
    summary.as_object_mut().unwrap().remove("dropped_items");
    Ok(summary)
}

pub fn corpus_path(ctx: &Context) -> PathBuf {
    ctx.cfg.paths.corpora.join("corpus.jsonl")
}

pub fn corpus(ctx: &Context) -> Result<Value, CliError> {
    let c = &ctx.cfg.corpus;
    let facts = load_facts(&ctx.cfg.paths.facts, "facts")?;
    let items = if c.objective == Objective::SyntheticQA {
        load_items(&ctx.cfg.paths.questions, "questions")?
    } else {
        Vec::new()
    };
    let out = corpus_path(ctx);
    ensure_parent(&out)?;
    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut sink = Sink::new(BufWriter::new(file));
    let mut emit = |r: &corpusbuilder::CorpusRecord| sink.push(r);
    let span = c.span_config();
    let built = match c.objective {
        Objective::SpanPrediction => corpusbuilder::stream_span_corpus(&facts, c.s, &span, c.seed, &mut emit),
        Objective::Ntp => corpusbuilder::stream_ntp_corpus(&facts, c.s, c.seed, &mut emit),
        Objective::SyntheticQA => {
            let ids: Vec<String> = facts.iter().map(|f| f.id.clone()).collect();
            corpusbuilder::stream_qa_corpus(&ids, &items, c.s, c.seed, &mut emit)
        }
    };
    let summary = match built {
        Ok(s) => s,
        Err(e @ (corpusbuilder::BuildError::ZeroUpsampling | corpusbuilder::BuildError::SpanRange { .. })) => {
            return Err(CliError::Invalid(e.to_string()))
        }
        Err(e) => return Err(CliError::runtime(e)),
    };
    sink.finish().with_context(|| format!("writing {}", out.display()))?;
    let span_fields = c.objective == Objective::SpanPrediction;
    let meta = CorpusMeta {
        objective: c.objective,
        s: c.s,
        seed: c.seed,
        min_len: span_fields.then_some(c.min_len),
        max_len: span_fields.then_some(c.max_len),
        flavor: span_fields.then_some(c.flavor),
        n_facts: summary.n_facts,
        n_records: summary.n_records,
        config_fingerprint: None,
    };
    ctx.write_meta(&out, &meta)?;
    let mut value = serde_json::to_value(&meta).map_err(CliError::runtime)?;
    value["excluded"] = json!(summary.excluded.len());
    value.as_object_mut().unwrap().remove("config_fingerprint");
    Ok(value)
}

fn cluster_error(e: ClusterError) -> CliError {
    match e {
        ClusterError::TooFewPoints { .. } | ClusterError::ZeroK | ClusterError::DuplicateId(_) => {
            CliError::Invalid(e.to_string())
        }
        other => CliError::runtime(other),
    }
}

pub fn cluster(ctx: &Context) -> Result<Value, CliError> {
    let cc = &ctx.cfg.clustering;
    let facts = load_facts(&ctx.cfg.paths.facts, "facts")?;
    if facts.is_empty() {
        return Err(CliError::Invalid("no facts to cluster".into()));
    }
    let ids: Vec<String> = facts.iter().map(|f| f.id.clone()).collect();
    let embeddings = if cc.kind == ClusterKind::Semantic || ctx.cfg.backends.contains_key(&cc.embedder) {
        let embedder = ctx.embedder(&cc.embedder)?;
        let texts: Vec<String> = facts.iter().map(|f| f.text.clone()).collect();
        Some(to_f64(&embedder.embed(&texts).map_err(CliError::runtime)?))
    } else {
        None
    };
    let (assignment, fit) = match cc.kind {
        ClusterKind::Temporal => (temporal_partition(&facts, cc.k).map_err(cluster_error)?, None),
        ClusterKind::Semantic => {
            let x = embeddings.as_ref().expect("semantic clustering embeds");
            let em = EmConfig {
                max_iter: cc.max_iter,
                tol: cc.tol,
            };
            let fit = fit_gmm(x, cc.k, cc.seed, em).map_err(cluster_error)?;
            let (assignment, _) = gmm_assign(&ids, x, &fit.params).map_err(cluster_error)?;
            (assignment, Some(fit))
        }
    };
    clusterer::check_coverage(&assignment, &ids).map_err(cluster_error)?;
    let mut file = ClustersFile::new(&assignment, cc.seed, fit.as_ref());
    if let Some(x) = &embeddings {
        file.centroids = Some(centroids(&ids, x, &assignment).map_err(cluster_error)?);
        if let Some(fit) = &fit {
            file.density_gate = Some(density_gate(&fit.params, x));
        }
    }
    file.config_fingerprint = Some(ctx.fingerprint.clone());
    ensure_parent(&ctx.cfg.paths.clusters)?;
    file.save(&ctx.cfg.paths.clusters).map_err(CliError::runtime)?;
    let meta = json!({
        "kind": assignment.kind,
        "k": assignment.k,
        "seed": cc.seed,
        "n_facts": ids.len(),
        "sizes": assignment.sizes(),
        "iterations": fit.as_ref().map(|f| f.iterations),
        "converged": fit.as_ref().map(|f| f.converged),
        "reseeded": fit.as_ref().map(|f| f.reseeded),
    });
    ctx.write_meta(&ctx.cfg.paths.clusters, &meta)?;
    Ok(meta)
}

pub fn load_clusters(path: &Path) -> Result<ClustersFile, CliError> {
    require(path, "clusters")?;
    let file = ClustersFile::load(path).map_err(|e| CliError::Invalid(e.to_string()))?;
    file.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    Ok(file)
}

pub fn scope_data(ctx: &Context) -> Result<Value, CliError> {
    let paths = &ctx.cfg.paths;
    let clusters = load_clusters(&paths.clusters)?;
    let questions = load_items(&paths.questions, "questions")?;
    let positives: Vec<QAItem> = questions
        .into_iter()
        .filter(|q| !dyk_core::scoperouter::out_of_scope(q))
        .collect();
    let negatives = match &paths.negatives {
        Some(p) => load_items(p, "negative questions")?,
        None => Vec::new(),
    };
    let rows = build_scope_dataset(&clusters.assignment(), &positives, &negatives, ctx.cfg.scope.seed)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    write_jsonl(&paths.scope, &rows)?;
    let val = rows.iter().filter(|r| r.split == Split::Val).count();
    let meta = json!({
        "k": clusters.k,
        "seed": ctx.cfg.scope.seed,
        "n_rows": rows.len(),
        "n_positive": positives.len(),
        "n_negative": negatives.len(),
        "n_train": rows.len() - val,
        "n_val": val,
    });
    ctx.write_meta(&paths.scope, &meta)?;
    Ok(meta)
}

pub fn rag_index(ctx: &Context) -> Result<Value, CliError> {
    let facts = load_facts(&ctx.cfg.paths.facts, "facts")?;
    let docs = docs_from_facts(&facts);
    if docs.is_empty() {
        return Err(CliError::Invalid("no facts carry article text".into()));
    }
    let embedder = ctx.embedder(&ctx.cfg.rag.embedder)?;
    let index = RagIndex::build(docs, &*embedder, ctx.cfg.rag.embed_chars).map_err(CliError::runtime)?;
    ensure_parent(&ctx.cfg.paths.index)?;
    index.save(&ctx.cfg.paths.index).map_err(CliError::runtime)?;
    let meta = json!({ "n": index.len(), "d": index.dim });
    ctx.write_meta(&ctx.cfg.paths.index, &meta)?;
    Ok(meta)
}

fn eval_system(ctx: &Context, kind: SystemKind, items: &[QAItem]) -> Result<Box<dyn AnswerFn>, CliError> {
    let e = &ctx.cfg.eval;
    Ok(match kind {
        SystemKind::Static => {
            let mut s = StaticSystem::new("static", ctx.completer(&e.backend)?);
            s.max_new_tokens = e.max_new_tokens;
            Box::new(s)
        }
        SystemKind::Mock => {
            let mut s = StaticSystem::new("mock", Arc::new(MockMemorizer::from_items(items, "UNKNOWN")));
            s.max_new_tokens = e.max_new_tokens;
            Box::new(s)
        }
        SystemKind::Rag => {
            let paths = &ctx.cfg.paths;
            require(&paths.index, "rag index")?;
            let facts = load_facts(&paths.facts, "facts")?;
            let index = RagIndex::load(&paths.index, &docs_from_facts(&facts)).map_err(|e| CliError::Invalid(e.to_string()))?;
            let mut s = RagSystem::new(Arc::new(index), ctx.embedder(&ctx.cfg.rag.embedder)?, ctx.completer(&e.backend)?);
            s.top_k = ctx.cfg.rag.top_k;
            s.char_budget = ctx.cfg.rag.char_budget;
            s.max_new_tokens = e.max_new_tokens;
            Box::new(s)
        }
        SystemKind::Router if ctx.cfg.router.oracle => {
            let r = &ctx.cfg.router;
            let clusters = load_clusters(&ctx.cfg.paths.clusters)?;
            let backends = crate::serve::cluster_backends(ctx, clusters.k)?;
            Box::new(OracleRouterSystem {
                assignment: clusters.assignment(),
                clusters: backends,
                base: ctx.completer(&r.base)?,
                max_new_tokens: r.max_new_tokens,
            })
        }
        SystemKind::Router => {
            let opts = crate::serve::ServeOptions::default();
            Box::new(crate::serve::build_router(ctx, &opts)?)
        }
    })
}

pub fn records_path(ctx: &Context, system: &str) -> PathBuf {
    ctx.cfg.paths.reports.join(format!("{system}.records.jsonl"))
}

pub fn eval(ctx: &Context, questions: Option<&Path>, system: Option<&str>) -> Result<Value, CliError> {
    let e = &ctx.cfg.eval;
    let kind = match system {
        Some(s) => SystemKind::parse(s)
            .ok_or_else(|| CliError::Invalid(format!("unknown system {s:?} (static, rag, router, mock)")))?,
        None => e.system,
    };
    let path = questions.map_or_else(|| ctx.cfg.paths.questions.clone(), Path::to_path_buf);
    let items: Vec<QAItem> = load_items(&path, "questions")?
        .into_iter()
        .filter(|q| q.dimension != Dimension::Training && e.dimensions.contains(&q.dimension))
        .collect();
    if items.is_empty() {
        return Err(CliError::Invalid(format!("{} has no evaluable questions", path.display())));
    }
    let answer_fn = eval_system(ctx, kind, &items)?;
    let name = answer_fn.name().to_string();
    let out = records_path(ctx, &name);
    let partial = out.with_extension("jsonl.partial");
    let previous: Vec<EvalRecord> = [&partial, &out]
        .into_iter()
        .find(|p| p.exists())
        .map(|p| jsonl::read(p).map_err(|e| CliError::Invalid(e.to_string())))
        .transpose()?
        .unwrap_or_default();
    ensure_parent(&out)?;
    let file = File::create(&partial).with_context(|| format!("creating {}", partial.display()))?;
    let mut sink = Sink::new(BufWriter::new(file));
    let opts = EvalOptions {
        parallelism: e.parallelism,
        error_ceiling: e.error_ceiling,
    };
    let result = run_eval(&items, &*answer_fn, opts, &previous, &mut |r| sink.push(r));
    sink.finish().with_context(|| format!("writing {}", partial.display()))?;
    let run = result.map_err(CliError::runtime)?;
    std::fs::rename(&partial, &out).with_context(|| format!("renaming to {}", out.display()))?;
    let mut report = run.report;
    report.config_fingerprint = Some(ctx.fingerprint.clone());
    let report_path = ctx.cfg.paths.reports.join(format!("{name}.report.json"));
    let body = serde_json::to_string_pretty(&report).map_err(CliError::runtime)? + "\n";
    std::fs::write(&report_path, body).with_context(|| format!("writing {}", report_path.display()))?;
    let meta = json!({
        "system": name,
        "questions": path.display().to_string(),
        "n_records": report.n_records,
        "n_errors": report.n_errors,
        "reused": run.reused,
    });
    ctx.write_meta(&out, &meta)?;
    let mut summary = meta;
    summary["dimensions"] = serde_json::to_value(&report.dimensions).map_err(CliError::runtime)?;
    summary["elapsed_ms"] = json!(report.elapsed.as_millis() as u64);
    Ok(summary)
}

pub fn report(ctx: &Context) -> Result<Value, CliError> {
    let dir = &ctx.cfg.paths.reports;
    require(dir, "reports directory")?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".report.json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Missing {
            artifact: "per-system reports (*.report.json)".into(),
            path: dir.clone(),
        });
    }
    let reports = files
        .iter()
        .map(|p| -> Result<EvalReport, CliError> {
            let raw = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&raw).map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    evalharness::emit_report(&reports, dir).map_err(CliError::runtime)?;
    let meta = json!({
        "systems": reports.iter().map(|r| r.system.clone()).collect::<Vec<_>>(),
    });
    ctx.write_meta(&dir.join("report.json"), &meta)?;
    Ok(meta)
}
