//! Completion, embedding and classification clients.
//!
//! Wire contract (JSON bodies, UTF-8):
//!
//! ```text
//! POST {endpoint}/complete {"prompt": str, "max_new_tokens": int} -> {"text": str}
//! POST {endpoint}/embed    {"texts": [str]}                       -> {"embeddings": [[float]]}
//! POST {endpoint}/classify {"texts": [str]}                       -> {"scores": [[float]]}
//! ```
//!
//! Besides the remote clients there are in-process backends used for desk
//! runs and tests: an exact-recall memorizer, a hashing embedder, an echo
//! completer and a template-driven question generator stub.

mod http;
pub mod mock;
pub mod mock_http;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use http::{RemoteClassifier, RemoteCompleter, RemoteEmbedder};
pub use mock::{EchoCompleter, MockEmbedder, MockMemorizer};

pub const DEFAULT_TEMPLATE: &str = "{question}\nAnswer:";
pub const DEFAULT_MAX_NEW_TOKENS: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport error from {endpoint} after {attempts} attempt(s): {message}")]
    Transport {
        endpoint: String,
        attempts: usize,
        message: String,
    },
    #[error("{endpoint} returned HTTP {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("malformed response from {endpoint}: {message}")]
    Malformed { endpoint: String, message: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid backend config: {0}")]
    Config(String),
}

impl BackendError {
    /// Transport failures are worth another try; everything else is not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Completion,
    Embedding,
    Classifier,
    MockMemorizer,
    MockEmbedding,
    Echo,
    StubGenerator,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> usize {
    3
}
fn default_backoff_ms() -> u64 {
    200
}
fn default_template() -> String {
    DEFAULT_TEMPLATE.to_string()
}
fn default_batch_size() -> usize {
    64
}
fn default_in_flight() -> usize {
    8
}
fn default_fallback() -> String {
    "UNKNOWN".to_string()
}
fn default_dim() -> usize {
    64
}

/// Configuration for one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding a bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_template")]
    pub prompt_template: String,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Expected score width for classifiers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Question file loaded into a mock memorizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<PathBuf>,
    #[serde(default = "default_fallback")]
    pub fallback: String,
    /// Output width of the mock embedder.
    #[serde(default = "default_dim")]
    pub dim: usize,
}

impl BackendSpec {
    pub fn new(kind: BackendKind) -> Self {
        Self {
            kind,
            endpoint: None,
            auth_env: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
            prompt_template: default_template(),
            batch_size: default_batch_size(),
            max_in_flight: default_in_flight(),
            k: None,
            entries: None,
            fallback: default_fallback(),
            dim: default_dim(),
        }
    }

    pub fn remote(kind: BackendKind, endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: Some(endpoint.into()),
            ..Self::new(kind)
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let placeholders = self.prompt_template.matches("{question}").count();
        if placeholders != 1 {
            return Err(BackendError::Config(format!(
                "prompt_template must contain {{question}} exactly once, found {placeholders}"
            )));
        }
        if self.timeout_ms == 0 {
            return Err(BackendError::Config("timeout_ms must be > 0".into()));
        }
        if self.batch_size == 0 || self.max_in_flight == 0 {
            return Err(BackendError::Config(
                "batch_size and max_in_flight must be > 0".into(),
            ));
        }
        let remote = matches!(
            self.kind,
            BackendKind::Completion | BackendKind::Embedding | BackendKind::Classifier
        );
        if remote && self.endpoint.is_none() {
            return Err(BackendError::Config(format!(
                "{:?} backend needs an endpoint",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn bearer_token(&self) -> Option<String> {
        self.auth_env
            .as_ref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty())
    }
}

/// Substitute `question` into `template`. Nothing else is touched.
pub fn render_prompt(template: &str, question: &str) -> String {
    template.replacen("{question}", question, 1)
}

/// Inverse of [`render_prompt`] when the prompt was produced from `template`.
pub fn extract_question<'a>(template: &str, prompt: &'a str) -> Option<&'a str> {
    let (pre, post) = template.split_once("{question}")?;
    prompt.strip_prefix(pre)?.strip_suffix(post)
}

pub trait Completer: Send + Sync {
    fn template(&self) -> &str {
        DEFAULT_TEMPLATE
    }

    /// Send a fully rendered prompt.
    fn complete_prompt(&self, prompt: &str, max_new_tokens: usize) -> Result<String, BackendError>;

    /// Render `question` through the template and complete it.
    fn complete(&self, question: &str, max_new_tokens: usize) -> Result<String, BackendError> {
        self.complete_prompt(&render_prompt(self.template(), question), max_new_tokens)
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError>;
}

pub trait Classifier: Send + Sync {
    fn classify(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

pub fn completer(spec: &BackendSpec) -> Result<Arc<dyn Completer>, BackendError> {
    spec.validate()?;
    Ok(match spec.kind {
        BackendKind::Completion => Arc::new(RemoteCompleter::new(spec)?),
        BackendKind::MockMemorizer => Arc::new(MockMemorizer::from_spec(spec)?),
        BackendKind::Echo => Arc::new(EchoCompleter::new(&spec.prompt_template)),
        BackendKind::StubGenerator => Arc::new(crate::qagen::stub::StubGenerator),
        other => {
            return Err(BackendError::Config(format!(
                "{other:?} backend cannot complete"
            )))
        }
    })
}

pub fn embedder(spec: &BackendSpec) -> Result<Arc<dyn Embedder>, BackendError> {
    spec.validate()?;
    Ok(match spec.kind {
        BackendKind::Embedding => Arc::new(RemoteEmbedder::new(spec)?),
        BackendKind::MockEmbedding => Arc::new(MockEmbedder::new(spec.dim)),
        other => return Err(BackendError::Config(format!("{other:?} backend cannot embed"))),
    })
}

pub fn classifier(spec: &BackendSpec) -> Result<Arc<dyn Classifier>, BackendError> {
    spec.validate()?;
    match spec.kind {
        BackendKind::Classifier => Ok(Arc::new(RemoteClassifier::new(spec)?)),
        other => Err(BackendError::Config(format!(
            "{other:?} backend cannot classify"
        ))),
    }
}
