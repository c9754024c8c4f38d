use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::{extract_question, render_prompt, BackendError, BackendSpec, Completer, Embedder, DEFAULT_TEMPLATE};
use crate::qagen::QAItem;

/// Trim and collapse internal whitespace runs; case is preserved.
pub fn normalize_question(q: &str) -> String {
    q.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Exact-recall store: answers the questions it was loaded with, verbatim.
#[derive(Debug, Clone, Default)]
pub struct MockMemorizer {
    entries: HashMap<String, String>,
    fallback: String,
    template: String,
}

impl MockMemorizer {
    pub fn new(fallback: impl Into<String>) -> Self {
        Self {
            entries: HashMap::new(),
            fallback: fallback.into(),
            template: DEFAULT_TEMPLATE.to_string(),
        }
    }

    pub fn from_items<'a>(items: impl IntoIterator<Item = &'a QAItem>, fallback: impl Into<String>) -> Self {
        let mut m = Self::new(fallback);
        for item in items {
            m.insert(&item.question, &item.answer);
        }
        m
    }

    pub fn from_spec(spec: &BackendSpec) -> Result<Self, BackendError> {
        let mut m = Self::new(spec.fallback.clone());
        m.template = spec.prompt_template.clone();
        if let Some(path) = &spec.entries {
            let items: Vec<QAItem> = crate::jsonl::read(path)
                .map_err(|e| BackendError::Config(format!("mock entries: {e}")))?;
            for item in &items {
                m.insert(&item.question, &item.answer);
            }
        }
        Ok(m)
    }

    /// First insertion wins for a given normalized question.
    pub fn insert(&mut self, question: &str, answer: &str) {
        self.entries
            .entry(normalize_question(question))
            .or_insert_with(|| answer.to_string());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, question: &str) -> &str {
        self.entries
            .get(&normalize_question(question))
            .map(String::as_str)
            .unwrap_or(&self.fallback)
    }
}

impl Completer for MockMemorizer {
    fn template(&self) -> &str {
        &self.template
    }

    fn complete_prompt(&self, prompt: &str, _max_new_tokens: usize) -> Result<String, BackendError> {
        let question = extract_question(&self.template, prompt).unwrap_or(prompt);
        Ok(self.lookup(question).to_string())
    }

    fn complete(&self, question: &str, _max_new_tokens: usize) -> Result<String, BackendError> {
        Ok(self.lookup(question).to_string())
    }
}

/// Returns the rendered prompt as the completion.
#[derive(Debug, Clone)]
pub struct EchoCompleter {
    template: String,
}

impl EchoCompleter {
    pub fn new(template: &str) -> Self {
        Self {
            template: template.to_string(),
        }
    }
}

impl Default for EchoCompleter {
    fn default() -> Self {
        Self::new(DEFAULT_TEMPLATE)
    }
}

impl Completer for EchoCompleter {
    fn template(&self) -> &str {
        &self.template
    }

    fn complete_prompt(&self, prompt: &str, _max_new_tokens: usize) -> Result<String, BackendError> {
        Ok(prompt.to_string())
    }

    fn complete(&self, question: &str, max_new_tokens: usize) -> Result<String, BackendError> {
        self.complete_prompt(&render_prompt(&self.template, question), max_new_tokens)
    }
}

/// Deterministic embedder: pinned vectors for known texts, signed feature
/// hashing of lower-cased tokens for everything else.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    pinned: HashMap<String, Vec<f32>>,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            pinned: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Pin `text` to `vector` (matched on normalized text).
    pub fn pin(&mut self, text: &str, vector: Vec<f32>) {
        assert_eq!(vector.len(), self.dim, "pinned vector has the wrong width");
        self.pinned.insert(normalize_question(text), vector);
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let key = normalize_question(text);
        if let Some(v) = self.pinned.get(&key) {
            return v.clone();
        }
        let mut v = vec![0f32; self.dim];
        for token in key.split(' ').filter(|t| !t.is_empty()) {
            let digest = Sha256::digest(token.to_lowercase().as_bytes());
            let mut idx = [0u8; 8];
            idx.copy_from_slice(&digest[..8]);
            let slot = (u64::from_le_bytes(idx) % self.dim as u64) as usize;
            v[slot] += if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Embedder for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::Precondition("embed called with no texts".into()));
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memorizer_hit_and_miss() {
        let mut m = MockMemorizer::new("UNKNOWN");
        m.insert("Which song?", "Gold Digger");
        assert_eq!(m.complete("Which song?", 32).unwrap(), "Gold Digger");
        assert_eq!(m.complete("  Which   song? ", 32).unwrap(), "Gold Digger");
        assert_eq!(m.complete("which song?", 32).unwrap(), "UNKNOWN");
        assert_eq!(m.complete("Other?", 32).unwrap(), "UNKNOWN");
        let prompt = render_prompt(DEFAULT_TEMPLATE, "Which song?");
        assert_eq!(m.complete_prompt(&prompt, 32).unwrap(), "Gold Digger");
    }

    #[test]
    fn echo_returns_prompt() {
        let e = EchoCompleter::default();
        assert_eq!(e.complete("q?", 8).unwrap(), "q?\nAnswer:");
    }

    #[test]
    fn embedder_is_deterministic_and_unit_norm() {
        let e = MockEmbedder::new(16);
        let texts = vec!["a b c".to_string(), "a b c".to_string(), "".to_string()];
        let v = e.embed(&texts).unwrap();
        assert_eq!(v[0], v[1]);
        for row in &v {
            let n: f32 = row.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert!(e.embed(&[]).is_err());
    }

    #[test]
    fn pinned_vectors_override_hashing() {
        let mut e = MockEmbedder::new(3);
        e.pin("doc", vec![0.0, 1.0, 0.0]);
        assert_eq!(e.embed_one(" doc "), vec![0.0, 1.0, 0.0]);
    }
}
