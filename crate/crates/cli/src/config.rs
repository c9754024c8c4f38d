//! Declarative pipeline configuration.
//!
//! One JSON file drives every stage. String values may reference
//! environment variables as `${NAME}`; references are resolved before the
//! config is parsed. Relative paths are resolved against the config file's
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dyk_core::backends::{BackendSpec, DEFAULT_MAX_NEW_TOKENS};
use dyk_core::corpusbuilder::{Flavor, Objective, SpanConfig, BILM_SENTINEL, CLM_MASK};
use dyk_core::evalharness::DEFAULT_ERROR_CEILING;
use dyk_core::ragstore::{DEFAULT_CHAR_BUDGET, DEFAULT_TOP_K};
use dyk_core::scoperouter::{ScorerKind, DEFAULT_THRESHOLD};
use dyk_core::{ClusterKind, DateWindow, Dimension};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Archive page, or a directory of `.wiki`/`.txt` archive pages.
    pub archive: Option<PathBuf>,
    /// Directory of article bodies named `<Title>.wiki` or `.txt`.
    pub articles: Option<PathBuf>,
    pub facts: PathBuf,
    /// Out-of-window facts written by ingest for scope negatives.
    pub negative_facts: Option<PathBuf>,
    pub questions: PathBuf,
    /// Questions about out-of-scope facts.
    pub negatives: Option<PathBuf>,
    pub corpora: PathBuf,
    pub clusters: PathBuf,
    pub scope: PathBuf,
    pub index: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            archive: None,
            articles: None,
            facts: "facts.jsonl".into(),
            negative_facts: None,
            questions: "questions.jsonl".into(),
            negatives: None,
            corpora: "corpora".into(),
            clusters: "clusters.json".into(),
            scope: "scope.jsonl".into(),
            index: "rag.index".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub window: Option<DateWindow>,
    pub negative_window: Option<DateWindow>,
    /// Minimum spacing between article fetches.
    pub fetch_interval_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuestionsConfig {
    /// Backend used for every prompt not listed in `per_prompt`.
    pub generator: String,
    /// Prompt name (reliability, paraphrase, generality, description,
    /// portability, locality, training) to backend name.
    pub per_prompt: BTreeMap<String, String>,
    pub dimensions: Vec<Dimension>,
    pub in_flight: usize,
    pub strict_pages: bool,
    pub max_attempts: usize,
    pub backoff_ms: u64,
}

pub const PROMPTS: [&str; 7] = [
    "reliability",
    "paraphrase",
    "generality",
    "description",
    "portability",
    "locality",
    "training",
];

impl Default for QuestionsConfig {
    fn default() -> Self {
        Self {
            generator: "generator".into(),
            per_prompt: BTreeMap::new(),
            dimensions: vec![
                Dimension::Reliability,
                Dimension::Generality,
                Dimension::Paraphrase,
                Dimension::Portability,
                Dimension::Locality,
                Dimension::Training,
            ],
            in_flight: 8,
            strict_pages: true,
            max_attempts: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub objective: Objective,
    pub s: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub flavor: Flavor,
    pub seed: u64,
    pub sentinel: String,
    pub mask: String,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            objective: Objective::SpanPrediction,
            s: 1000,
            min_len: 1,
            max_len: 5,
            flavor: Flavor::BiLM,
            seed: 0,
            sentinel: BILM_SENTINEL.into(),
            mask: CLM_MASK.into(),
        }
    }
}

impl CorpusConfig {
    pub fn span_config(&self) -> SpanConfig {
        SpanConfig {
            flavor: self.flavor,
            min_len: self.min_len,
            max_len: self.max_len,
            sentinel: self.sentinel.clone(),
            mask: self.mask.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub kind: ClusterKind,
    pub k: usize,
    pub seed: u64,
    /// Embedding backend for semantic clustering.
    pub embedder: String,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            kind: ClusterKind::Semantic,
            k: 3,
            seed: 0,
            embedder: "embedder".into(),
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScopeConfig {
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterConfig {
    /// `remote`, `gmm` or `centroid`.
    pub scorer: String,
    pub threshold: f64,
    pub classifier: String,
    pub embedder: String,
    /// One completion backend per cluster, in cluster order.
    pub clusters: Vec<String>,
    pub base: String,
    pub defer_on_error: bool,
    pub max_new_tokens: usize,
    pub listen: String,
    /// Route by the ground-truth assignment instead of a scorer (eval only).
    pub oracle: bool,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            scorer: "centroid".into(),
            threshold: DEFAULT_THRESHOLD,
            classifier: "classifier".into(),
            embedder: "embedder".into(),
            clusters: Vec::new(),
            base: "base".into(),
            defer_on_error: false,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            listen: "127.0.0.1:8080".into(),
            oracle: false,
        }
    }
}

impl RouterConfig {
    pub fn scorer_kind(&self) -> Result<ScorerKind, CliError> {
        ScorerKind::from_flag(&self.scorer)
            .ok_or_else(|| CliError::Invalid(format!("unknown scorer {:?} (remote, gmm, centroid)", self.scorer)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RagConfig {
    pub embedder: String,
    pub top_k: usize,
    pub char_budget: usize,
    /// Article characters passed to the embedder.
    pub embed_chars: usize,
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            embedder: "embedder".into(),
            top_k: DEFAULT_TOP_K,
            char_budget: DEFAULT_CHAR_BUDGET,
            embed_chars: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Static,
    Rag,
    Router,
    /// Memorizer loaded with the evaluated questions themselves.
    Mock,
}

impl SystemKind {
    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(Value::String(s.to_string())).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub system: SystemKind,
    /// Completion backend for the static and rag systems.
    pub backend: String,
    pub parallelism: usize,
    pub max_new_tokens: usize,
    pub error_ceiling: f64,
    /// Dimensions evaluated; Training items are never evaluated.
    pub dimensions: Vec<Dimension>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            system: SystemKind::Static,
            backend: "base".into(),
            parallelism: 8,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            error_ceiling: DEFAULT_ERROR_CEILING,
            dimensions: Dimension::EVAL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub backends: BTreeMap<String, BackendSpec>,
    pub ingest: IngestConfig,
    pub questions: QuestionsConfig,
    pub corpus: CorpusConfig,
    pub clustering: ClusteringConfig,
    pub scope: ScopeConfig,
    pub router: RouterConfig,
    pub rag: RagConfig,
    pub eval: EvalConfig,
}

/// Replace `${NAME}` in every string value.
pub fn interpolate(value: &mut Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), CliError> {
    match value {
        Value::String(s) => {
            if !s.contains("${") {
                return Ok(());
            }
            let mut out = String::with_capacity(s.len());
            let mut rest = s.as_str();
            while let Some(start) = rest.find("${") {
                out.push_str(&rest[..start]);
                let after = &rest[start + 2..];
                let end = after
                    .find('}')
                    .ok_or_else(|| CliError::Invalid(format!("unterminated ${{...}} in {s:?}")))?;
                let name = &after[..end];
                let v = lookup(name)
                    .ok_or_else(|| CliError::Invalid(format!("environment variable {name} is not set")))?;
                out.push_str(&v);
                rest = &after[end + 1..];
            }
            out.push_str(rest);
            *s = out;
        }
        Value::Array(items) => {
            for v in items {
                interpolate(v, lookup)?;
            }
        }
        Value::Object(map) => {
            for v in map.values_mut() {
                interpolate(v, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

impl PipelineConfig {
    pub fn from_json(raw: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        let mut value: Value =
            serde_json::from_str(raw).map_err(|e| CliError::Invalid(format!("config is not valid JSON: {e}")))?;
        interpolate(&mut value, lookup)?;
        let cfg: PipelineConfig =
            serde_json::from_value(value).map_err(|e| CliError::Invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read, interpolate from the process environment and validate.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path).map_err(|_| CliError::Missing {
            artifact: "config".into(),
            path: path.to_path_buf(),
        })?;
        Self::from_json(&raw, &|name| std::env::var(name).ok())
    }

    pub fn override_seed(&mut self, seed: u64) {
        self.corpus.seed = seed;
        self.clustering.seed = seed;
        self.scope.seed = seed;
    }

    /// Resolve relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for path in [
            &mut p.facts,
            &mut p.questions,
            &mut p.corpora,
            &mut p.clusters,
            &mut p.scope,
            &mut p.index,
            &mut p.reports,
        ] {
            fix(path);
        }
        for path in [&mut p.archive, &mut p.articles, &mut p.negative_facts, &mut p.negatives]
            .into_iter()
            .flatten()
        {
            fix(path);
        }
        for spec in self.backends.values_mut() {
            if let Some(entries) = &mut spec.entries {
                fix(entries);
            }
        }
    }

    /// SHA-256 over the canonical JSON form (sorted keys, defaults filled).
    /// Take it before [`resolve_paths`](Self::resolve_paths) so it does not
    /// depend on where the config lives. Bearer tokens are read at request
    /// time from `auth_env` and never enter the config.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_value(self).expect("config serializes");
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |m: String| Err(CliError::Invalid(m));
        for (name, spec) in &self.backends {
            spec.validate()
                .map_err(|e| CliError::Invalid(format!("backend {name}: {e}")))?;
        }
        for w in [&self.ingest.window, &self.ingest.negative_window].into_iter().flatten() {
            DateWindow::new(w.start, w.end).map_err(|e| CliError::Invalid(e.to_string()))?;
        }
        if self.corpus.s == 0 {
            return invalid("corpus.s must be at least 1".into());
        }
        if self.corpus.min_len == 0 || self.corpus.max_len < self.corpus.min_len {
            return invalid(format!(
                "corpus span lengths must satisfy 1 <= min_len <= max_len, got {}..{}",
                self.corpus.min_len, self.corpus.max_len
            ));
        }
        if self.clustering.k == 0 {
            return invalid("clustering.k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.router.threshold) {
            return invalid(format!("router.threshold {} outside [0, 1]", self.router.threshold));
        }
        self.router.scorer_kind()?;
        if !(0.0..=1.0).contains(&self.eval.error_ceiling) {
            return invalid(format!("eval.error_ceiling {} outside [0, 1]", self.eval.error_ceiling));
        }
        if self.eval.parallelism == 0 || self.questions.in_flight == 0 || self.questions.max_attempts == 0 {
            return invalid("parallelism, in_flight and max_attempts must be at least 1".into());
        }
        if self.rag.top_k == 0 {
            return invalid("rag.top_k must be at least 1".into());
        }
        for key in self.questions.per_prompt.keys() {
            if !PROMPTS.contains(&key.as_str()) {
                return invalid(format!("questions.per_prompt: unknown prompt {key:?}"));
            }
        }
        Ok(())
    }

    /// Look up a backend by name, failing as a validation error.
    pub fn backend(&self, name: &str) -> Result<&BackendSpec, CliError> {
        self.backends
            .get(name)
            .ok_or_else(|| CliError::Invalid(format!("backend {name:?} is not defined")))
    }
}
