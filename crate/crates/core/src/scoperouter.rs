//! Query routing between per-cluster models and the base model.
//!
//! A scorer produces one score in `[0,1]` per cluster. The query goes to
//! the best-scoring cluster when that score reaches the threshold and is
//! deferred to the base model otherwise.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Classifier, Completer, Embedder, DEFAULT_MAX_NEW_TOKENS};
use crate::clusterer::{argmax, softmax, ClusterAssignment, GmmParams};
use crate::qagen::{Dimension, QAItem};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const VAL_FRACTION: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum RouteError {
    #[error("unknown fact id {0}")]
    UnknownFact(String),
    #[error("fact {0} appears among both positives and negatives")]
    Overlap(String),
    #[error("threshold {0} outside [0,1]")]
    Threshold(f64),
    #[error("scorer returned {got} scores, expected {expected}")]
    ScoreShape { expected: usize, got: usize },
    #[error("scorer returned a score outside [0,1]: {0}")]
    ScoreRange(f64),
    #[error("scorer misconfigured: {0}")]
    Config(String),
    #[error("scorer failed: {0}")]
    Scorer(#[source] BackendError),
    #[error("answer backend failed: {0}")]
    Answer(#[source] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One line of `scope.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeExample {
    pub text: String,
    pub labels: Vec<u8>,
    pub split: Split,
}

/// One-hot rows for questions of clustered facts, all-zero rows for
/// negatives; seeded shuffle, then a 90/10 split stratified by label
/// pattern.
pub fn build_scope_dataset(
    assignment: &ClusterAssignment,
    questions: &[QAItem],
    negatives: &[QAItem],
    seed: u64,
) -> Result<Vec<ScopeExample>, RouteError> {
    let positive_ids: HashSet<&str> = questions.iter().map(|q| q.fact_id.as_str()).collect();
    if let Some(n) = negatives.iter().find(|n| positive_ids.contains(n.fact_id.as_str())) {
        return Err(RouteError::Overlap(n.fact_id.clone()));
    }
    let mut rows = Vec::with_capacity(questions.len() + negatives.len());
    for q in questions {
        let c = assignment
            .get(&q.fact_id)
            .ok_or_else(|| RouteError::UnknownFact(q.fact_id.clone()))?;
        let mut labels = vec![0u8; assignment.k];
        labels[c] = 1;
        rows.push((q.question.clone(), labels));
    }
    for n in negatives {
        rows.push((n.question.clone(), vec![0u8; assignment.k]));
    }
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut totals: BTreeMap<&[u8], usize> = BTreeMap::new();
    for (_, l) in &rows {
        *totals.entry(l.as_slice()).or_default() += 1;
    }
    let mut val_left: BTreeMap<Vec<u8>, usize> = totals
        .iter()
        .map(|(l, &n)| (l.to_vec(), (n as f64 * VAL_FRACTION).round() as usize))
        .collect();
    Ok(rows
        .into_iter()
        .map(|(text, labels)| {
            let left = val_left.get_mut(&labels).expect("pattern counted above");
            let split = if *left > 0 {
                *left -= 1;
                Split::Val
            } else {
                Split::Train
            };
            ScopeExample { text, labels, split }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decision {
    Cluster { id: usize },
    Defer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub query: String,
    pub scores: Vec<f64>,
    pub decision: Decision,
    pub threshold: f64,
}

/// `Cluster(argmax)` iff the top score reaches `threshold`.
pub fn decide(scores: &[f64], threshold: f64) -> Decision {
    if scores.is_empty() {
        return Decision::Defer;
    }
    let best = argmax(scores);
    if scores[best] >= threshold {
        Decision::Cluster { id: best }
    } else {
        Decision::Defer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScorerKind {
    RemoteClassifier,
    GmmPosterior,
    NearestCentroid,
}

impl ScorerKind {
    /// Short name used on the command line and in health checks.
    pub fn flag(self) -> &'static str {
        match self {
            ScorerKind::RemoteClassifier => "remote",
            ScorerKind::GmmPosterior => "gmm",
            ScorerKind::NearestCentroid => "centroid",
        }
    }

    pub fn from_flag(s: &str) -> Option<Self> {
        match s {
            "remote" => Some(ScorerKind::RemoteClassifier),
            "gmm" => Some(ScorerKind::GmmPosterior),
            "centroid" => Some(ScorerKind::NearestCentroid),
            _ => None,
        }
    }
}

pub trait Scorer: Send + Sync {
    fn kind(&self) -> ScorerKind;
    fn k(&self) -> usize;
    fn score(&self, queries: &[String]) -> Result<Vec<Vec<f64>>, RouteError>;
}

/// k independent sigmoid outputs from a classifier endpoint.
pub struct RemoteScorer {
    classifier: Arc<dyn Classifier>,
    k: usize,
}

impl RemoteScorer {
    pub fn new(classifier: Arc<dyn Classifier>, k: usize) -> Self {
        Self { classifier, k }
    }
}

impl Scorer for RemoteScorer {
    fn kind(&self) -> ScorerKind {
        ScorerKind::RemoteClassifier
    }

    fn k(&self) -> usize {
        self.k
    }

    fn score(&self, queries: &[String]) -> Result<Vec<Vec<f64>>, RouteError> {
        self.classifier.classify(queries).map_err(RouteError::Scorer)
    }
}

/// Mixture posterior of the embedded query, zeroed when the query's
/// log-density falls below the in-scope gate.
pub struct GmmScorer {
    embedder: Arc<dyn Embedder>,
    params: GmmParams,
    gate: f64,
}

impl GmmScorer {
    pub fn new(embedder: Arc<dyn Embedder>, params: GmmParams, gate: f64) -> Result<Self, RouteError> {
        params.validate().map_err(|e| RouteError::Config(e.to_string()))?;
        Ok(Self { embedder, params, gate })
    }
}

impl Scorer for GmmScorer {
    fn kind(&self) -> ScorerKind {
        ScorerKind::GmmPosterior
    }

    fn k(&self) -> usize {
        self.params.k
    }

    fn score(&self, queries: &[String]) -> Result<Vec<Vec<f64>>, RouteError> {
        let vecs = self.embedder.embed(queries).map_err(RouteError::Scorer)?;
        vecs.iter()
            .map(|v| {
                let x: Vec<f64> = v.iter().map(|&f| f as f64).collect();
                if x.len() != self.params.dim() {
                    return Err(RouteError::Config(format!(
                        "query embedding has d={}, mixture has d={}",
                        x.len(),
                        self.params.dim()
                    )));
                }
                let lp = self.params.component_log_densities(&x);
                if crate::clusterer::log_sum_exp(&lp) < self.gate {
                    Ok(vec![0.0; self.params.k])
                } else {
                    Ok(softmax(&lp))
                }
            })
            .collect()
    }
}

/// 1st percentile (nearest rank) of the training facts' log-densities.
pub fn density_gate(params: &GmmParams, x: &[Vec<f64>]) -> f64 {
    let mut ll: Vec<f64> = crate::par::map(x, |r| params.log_density(r));
    if ll.is_empty() {
        return f64::NEG_INFINITY;
    }
    ll.sort_by(f64::total_cmp);
    let rank = ((0.01 * ll.len() as f64).ceil() as usize).max(1);
    ll[rank - 1]
}

/// Softmax over negative Euclidean distances to cluster centroids.
pub struct CentroidScorer {
    embedder: Arc<dyn Embedder>,
    centroids: Vec<Vec<f64>>,
}

impl CentroidScorer {
    pub fn new(embedder: Arc<dyn Embedder>, centroids: Vec<Vec<f64>>) -> Result<Self, RouteError> {
        let d = centroids.first().map_or(0, Vec::len);
        if d == 0 || centroids.iter().any(|c| c.len() != d || c.iter().any(|v| !v.is_finite())) {
            return Err(RouteError::Config("centroids must be non-empty, finite and equal-length".into()));
        }
        Ok(Self { embedder, centroids })
    }
}

impl Scorer for CentroidScorer {
    fn kind(&self) -> ScorerKind {
        ScorerKind::NearestCentroid
    }

    fn k(&self) -> usize {
        self.centroids.len()
    }

    fn score(&self, queries: &[String]) -> Result<Vec<Vec<f64>>, RouteError> {
        let vecs = self.embedder.embed(queries).map_err(RouteError::Scorer)?;
        vecs.iter()
            .map(|v| {
                if v.len() != self.centroids[0].len() {
                    return Err(RouteError::Config(format!(
                        "query embedding has d={}, centroids have d={}",
                        v.len(),
                        self.centroids[0].len()
                    )));
                }
                let neg: Vec<f64> = self
                    .centroids
                    .iter()
                    .map(|c| -c.iter().zip(v).map(|(a, &b)| (a - b as f64).powi(2)).sum::<f64>().sqrt())
                    .collect();
                Ok(softmax(&neg))
            })
            .collect()
    }
}

fn check_scores(scores: &[f64], k: usize) -> Result<(), RouteError> {
    if scores.len() != k {
        return Err(RouteError::ScoreShape {
            expected: k,
            got: scores.len(),
        });
    }
    match scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        Some(s) => Err(RouteError::ScoreRange(*s)),
        None => Ok(()),
    }
}

fn check_threshold(threshold: f64) -> Result<(), RouteError> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(RouteError::Threshold(threshold))
    }
}

pub fn route(query: &str, scorer: &dyn Scorer, threshold: f64) -> Result<RouteDecision, RouteError> {
    Ok(route_batch(&[query.to_string()], scorer, threshold)?.remove(0))
}

pub fn route_batch(queries: &[String], scorer: &dyn Scorer, threshold: f64) -> Result<Vec<RouteDecision>, RouteError> {
    check_threshold(threshold)?;
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let scores = scorer.score(queries)?;
    if scores.len() != queries.len() {
        return Err(RouteError::ScoreShape {
            expected: queries.len(),
            got: scores.len(),
        });
    }
    queries
        .iter()
        .zip(scores)
        .map(|(q, s)| {
            check_scores(&s, scorer.k())?;
            Ok(RouteDecision {
                query: q.clone(),
                decision: decide(&s, threshold),
                scores: s,
                threshold,
            })
        })
        .collect()
}

/// Items answered from the base model's own knowledge.
pub fn out_of_scope(item: &QAItem) -> bool {
    item.dimension == Dimension::Locality
}

/// Ground-truth routing: the fact's cluster, or defer for out-of-scope
/// items.
pub fn route_with_oracle(item: &QAItem, assignment: &ClusterAssignment) -> Result<RouteDecision, RouteError> {
    let (scores, decision) = if out_of_scope(item) {
        (vec![0.0; assignment.k], Decision::Defer)
    } else {
        let c = assignment
            .get(&item.fact_id)
            .ok_or_else(|| RouteError::UnknownFact(item.fact_id.clone()))?;
        let mut s = vec![0.0; assignment.k];
        s[c] = 1.0;
        (s, Decision::Cluster { id: c })
    };
    Ok(RouteDecision {
        query: item.question.clone(),
        scores,
        decision,
        threshold: 1.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedAnswer {
    pub answer: String,
    pub route: RouteDecision,
}

/// Answers queries through a scorer, per-cluster completers and the base
/// completer. Immutable after construction; safe to share across threads.
pub struct Router {
    pub scorer: Arc<dyn Scorer>,
    pub threshold: f64,
    pub clusters: Vec<Arc<dyn Completer>>,
    pub base: Arc<dyn Completer>,
    /// Treat scorer failures as a defer instead of an error.
    pub defer_on_error: bool,
    pub max_new_tokens: usize,
}

impl Router {
    pub fn new(
        scorer: Arc<dyn Scorer>,
        threshold: f64,
        clusters: Vec<Arc<dyn Completer>>,
        base: Arc<dyn Completer>,
    ) -> Result<Self, RouteError> {
        check_threshold(threshold)?;
        if clusters.len() != scorer.k() {
            return Err(RouteError::Config(format!(
                "{} cluster backends for k={}",
                clusters.len(),
                scorer.k()
            )));
        }
        Ok(Self {
            scorer,
            threshold,
            clusters,
            base,
            defer_on_error: false,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
        })
    }

    pub fn k(&self) -> usize {
        self.scorer.k()
    }

    pub fn route(&self, question: &str) -> Result<RouteDecision, RouteError> {
        match route(question, &*self.scorer, self.threshold) {
            Err(e @ RouteError::Scorer(_)) if self.defer_on_error => {
                log::warn!("scorer failed, deferring: {e}");
                Ok(RouteDecision {
                    query: question.to_string(),
                    scores: vec![0.0; self.k()],
                    decision: Decision::Defer,
                    threshold: self.threshold,
                })
            }
            other => other,
        }
    }

    pub fn backend(&self, decision: Decision) -> &dyn Completer {
        match decision {
            Decision::Cluster { id } => &*self.clusters[id],
            Decision::Defer => &*self.base,
        }
    }

    pub fn answer(&self, question: &str) -> Result<RoutedAnswer, RouteError> {
        let route = self.route(question)?;
        let answer = self
            .backend(route.decision)
            .complete(question, self.max_new_tokens)
            .map_err(RouteError::Answer)?;
        Ok(RoutedAnswer { answer, route })
    }
}
