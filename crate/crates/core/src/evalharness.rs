//! Evaluation of answer systems with substring match and token F1.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backends::{Completer, Embedder, DEFAULT_MAX_NEW_TOKENS};
use crate::clusterer::ClusterAssignment;
use crate::par;
use crate::qagen::{Dimension, QAItem};
use crate::ragstore::{assemble_rag_prompt, RagIndex, DEFAULT_CHAR_BUDGET, DEFAULT_TOP_K};
use crate::scoperouter::{route_with_oracle, Decision, Router};

pub const DEFAULT_ERROR_CEILING: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("gold answer is empty")]
    EmptyGold,
    #[error("{errors} of {total} questions failed, above the {ceiling} error ceiling")]
    ErrorRate { errors: usize, total: usize, ceiling: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("report: {0}")]
    Report(String),
}

/// `gold` occurs verbatim (case-sensitive) in `prediction`.
pub fn match_metric(prediction: &str, gold: &str) -> Result<bool, EvalError> {
    if gold.trim().is_empty() {
        return Err(EvalError::EmptyGold);
    }
    Ok(prediction.contains(gold))
}

/// Whitespace-token F1 with multiset overlap.
pub fn token_f1(prediction: &str, gold: &str) -> Result<f64, EvalError> {
    let gold: Vec<&str> = gold.split_whitespace().collect();
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let pred: Vec<&str> = prediction.split_whitespace().collect();
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return Ok(0.0);
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / gold.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub index: usize,
    pub fact_id: String,
    pub dimension: Dimension,
    pub question: String,
    pub gold: String,
    pub prediction: String,
    #[serde(rename = "match")]
    pub matched: bool,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub text: String,
    pub route: Option<Decision>,
}

/// Something that answers evaluation questions.
pub trait AnswerFn: Send + Sync {
    fn name(&self) -> &str;
    fn answer(&self, item: &QAItem) -> Result<Answer, String>;
}

/// A single backend answering every question.
pub struct StaticSystem {
    pub name: String,
    pub backend: Arc<dyn Completer>,
    pub max_new_tokens: usize,
}

impl StaticSystem {
    pub fn new(name: &str, backend: Arc<dyn Completer>) -> Self {
        Self {
            name: name.to_string(),
            backend,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
        }
    }
}

impl AnswerFn for StaticSystem {
    fn name(&self) -> &str {
        &self.name
    }

    fn answer(&self, item: &QAItem) -> Result<Answer, String> {
        let text = self
            .backend
            .complete(&item.question, self.max_new_tokens)
            .map_err(|e| e.to_string())?;
        Ok(Answer { text, route: None })
    }
}

/// Retrieve top-k articles, prepend them as context, then complete.
pub struct RagSystem {
    pub index: Arc<RagIndex>,
    pub embedder: Arc<dyn Embedder>,
    pub backend: Arc<dyn Completer>,
    pub top_k: usize,
    pub char_budget: usize,
    pub max_new_tokens: usize,
}

impl RagSystem {
    pub fn new(index: Arc<RagIndex>, embedder: Arc<dyn Embedder>, backend: Arc<dyn Completer>) -> Self {
        Self {
            index,
            embedder,
            backend,
            top_k: DEFAULT_TOP_K,
            char_budget: DEFAULT_CHAR_BUDGET,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
        }
    }

    pub fn prompt(&self, question: &str) -> Result<String, String> {
        let hits = self
            .index
            .retrieve_topk(question, self.top_k, &*self.embedder)
            .map_err(|e| e.to_string())?;
        let docs: Vec<_> = hits.hits.iter().filter_map(|h| self.index.doc(&h.doc_id)).collect();
        assemble_rag_prompt(question, &docs, self.char_budget, self.backend.template()).map_err(|e| e.to_string())
    }
}

impl AnswerFn for RagSystem {
    fn name(&self) -> &str {
        "rag"
    }

    fn answer(&self, item: &QAItem) -> Result<Answer, String> {
        let prompt = self.prompt(&item.question)?;
        let text = self
            .backend
            .complete_prompt(&prompt, self.max_new_tokens)
            .map_err(|e| e.to_string())?;
        Ok(Answer { text, route: None })
    }
}

impl AnswerFn for Router {
    fn name(&self) -> &str {
        "router"
    }

    fn answer(&self, item: &QAItem) -> Result<Answer, String> {
        let out = Router::answer(self, &item.question).map_err(|e| e.to_string())?;
        Ok(Answer {
            text: out.answer,
            route: Some(out.route.decision),
        })
    }
}

/// Ground-truth routing to per-cluster backends.
pub struct OracleRouterSystem {
    pub assignment: ClusterAssignment,
    pub clusters: Vec<Arc<dyn Completer>>,
    pub base: Arc<dyn Completer>,
    pub max_new_tokens: usize,
}

impl AnswerFn for OracleRouterSystem {
    fn name(&self) -> &str {
        "router-oracle"
    }

    fn answer(&self, item: &QAItem) -> Result<Answer, String> {
        let route = route_with_oracle(item, &self.assignment).map_err(|e| e.to_string())?;
        let backend = match route.decision {
            Decision::Cluster { id } => self.clusters.get(id).ok_or_else(|| format!("no backend for cluster {id}"))?,
            Decision::Defer => &self.base,
        };
        let text = backend
            .complete(&item.question, self.max_new_tokens)
            .map_err(|e| e.to_string())?;
        Ok(Answer {
            text,
            route: Some(route.decision),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionScore {
    pub match_pct: f64,
    pub f1_pct: f64,
    pub n: usize,
    pub errors: usize,
    /// Share of routed questions deferred to the base model, in percent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defer_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub dimensions: BTreeMap<Dimension, DimensionScore>,
    pub n_records: usize,
    pub n_errors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
    /// Wall-clock time; kept out of the written report so reruns are
    /// byte-identical.
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Aggregate records per dimension. Errored records are counted but not
/// scored; dimensions with no scored record are omitted.
pub fn aggregate(system: &str, records: &[EvalRecord]) -> EvalReport {
    #[derive(Default)]
    struct Acc {
        matched: usize,
        f1: f64,
        n: usize,
        errors: usize,
        routed: usize,
        deferred: usize,
    }
    let mut sorted: Vec<&EvalRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.index);
    let mut acc: BTreeMap<Dimension, Acc> = BTreeMap::new();
    for r in sorted {
        let a = acc.entry(r.dimension).or_default();
        if r.is_error() {
            a.errors += 1;
            continue;
        }
        a.n += 1;
        a.matched += usize::from(r.matched);
        a.f1 += r.f1;
        if let Some(d) = r.route {
            a.routed += 1;
            a.deferred += usize::from(d == Decision::Defer);
        }
    }
    let n_errors = acc.values().map(|a| a.errors).sum();
    EvalReport {
        system: system.to_string(),
        dimensions: acc
            .into_iter()
            .filter(|(_, a)| a.n > 0)
            .map(|(d, a)| {
                (
                    d,
                    DimensionScore {
                        match_pct: 100.0 * a.matched as f64 / a.n as f64,
                        f1_pct: 100.0 * a.f1 / a.n as f64,
                        n: a.n,
                        errors: a.errors,
                        defer_pct: (a.routed > 0).then(|| 100.0 * a.deferred as f64 / a.routed as f64),
                    },
                )
            })
            .collect(),
        n_records: records.len(),
        n_errors,
        config_fingerprint: None,
        elapsed: Duration::ZERO,
    }
}

fn score(index: usize, item: &QAItem, answer: Result<Answer, String>) -> EvalRecord {
    let mut rec = EvalRecord {
        index,
        fact_id: item.fact_id.clone(),
        dimension: item.dimension,
        question: item.question.clone(),
        gold: item.answer.clone(),
        prediction: String::new(),
        matched: false,
        f1: 0.0,
        route: None,
        error: None,
    };
    match answer {
        Ok(a) => {
            rec.route = a.route;
            match (match_metric(&a.text, &item.answer), token_f1(&a.text, &item.answer)) {
                (Ok(m), Ok(f)) => {
                    rec.matched = m;
                    rec.f1 = f;
                }
                (Err(e), _) | (_, Err(e)) => rec.error = Some(e.to_string()),
            }
            rec.prediction = a.text;
        }
        Err(e) => rec.error = Some(e),
    }
    rec
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub parallelism: usize,
    pub error_ceiling: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            parallelism: 8,
            error_ceiling: DEFAULT_ERROR_CEILING,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub records: Vec<EvalRecord>,
    pub report: EvalReport,
    /// Records taken over from a previous run.
    pub reused: usize,
}

/// Evaluate every question. Successful records from `previous` whose index
/// and question match are reused, so interrupted runs resume. Each record
/// reaches `sink` in question order before aggregation.
pub fn run_eval(
    questions: &[QAItem],
    system: &dyn AnswerFn,
    opts: EvalOptions,
    previous: &[EvalRecord],
    sink: &mut dyn FnMut(&EvalRecord) -> std::io::Result<()>,
) -> Result<EvalRun, EvalError> {
    let start = Instant::now();
    let done: HashMap<usize, &EvalRecord> = previous
        .iter()
        .filter(|r| !r.is_error())
        .filter(|r| {
            questions
                .get(r.index)
                .is_some_and(|q| q.question == r.question && q.fact_id == r.fact_id && q.answer == r.gold)
        })
        .map(|r| (r.index, r))
        .collect();
    let parallelism = opts.parallelism.max(1);
    let indexed: Vec<(usize, &QAItem)> = questions.iter().enumerate().collect();
    let mut records = Vec::with_capacity(questions.len());
    let mut reused = 0;
    for batch in indexed.chunks(parallelism * 4) {
        let out = par::bounded(parallelism, || {
            par::map(batch, |(i, item)| match done.get(i) {
                Some(r) => ((*r).clone(), true),
                None => (score(*i, item, system.answer(item)), false),
            })
        });
        for (rec, was_reused) in out {
            sink(&rec)?;
            reused += usize::from(was_reused);
            records.push(rec);
        }
    }
    let mut report = aggregate(system.name(), &records);
    report.elapsed = start.elapsed();
    if !records.is_empty() && report.n_errors as f64 / records.len() as f64 > opts.error_ceiling {
        return Err(EvalError::ErrorRate {
            errors: report.n_errors,
            total: records.len(),
            ceiling: opts.error_ceiling,
        });
    }
    Ok(EvalRun { records, report, reused })
}

/// Dimensions present in any report, in table order.
fn columns(reports: &[EvalReport]) -> Vec<Dimension> {
    let mut dims: Vec<Dimension> = Dimension::EVAL
        .iter()
        .chain([Dimension::Training].iter())
        .copied()
        .filter(|d| reports.iter().any(|r| r.dimensions.contains_key(d)))
        .collect();
    dims.dedup();
    dims
}

/// Markdown table: one row per system, Match/F1 column pairs per
/// dimension, two decimals.
pub fn render_markdown(reports: &[EvalReport]) -> String {
    let dims = columns(reports);
    let mut out = String::from("| System |");
    for d in &dims {
        let _ = write!(out, " {d} Match | {d} F1 |");
    }
    out.push_str("\n|---|");
    for _ in &dims {
        out.push_str("---:|---:|");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "| {} |", r.system);
        for d in &dims {
            match r.dimensions.get(d) {
                Some(s) => {
                    let _ = write!(out, " {:.2} | {:.2} |", s.match_pct, s.f1_pct);
                }
                None => out.push_str(" - | - |"),
            }
        }
        out.push('\n');
    }
    out
}

/// Write `report.json` and `report.md` into `dir`.
pub fn emit_report(reports: &[EvalReport], dir: impl AsRef<Path>) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(reports).map_err(|e| EvalError::Report(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    std::fs::write(dir.join("report.md"), render_markdown(reports))?;
    Ok(())
}

pub fn load_reports(path: impl AsRef<Path>) -> Result<Vec<EvalReport>, EvalError> {
    let raw = std::fs::read_to_string(path)?;
    serde_json::from_str(&raw).map_err(|e| EvalError::Report(e.to_string()))
}
