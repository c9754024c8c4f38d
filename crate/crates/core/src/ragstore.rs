//! Dense retrieval over collected articles for the RAG baseline.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{render_prompt, BackendError, Embedder, DEFAULT_TEMPLATE};
use crate::corpus::FactRecord;
use crate::par;

pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_CHAR_BUDGET: usize = 1500;
const PER_DOC_ATTEMPTS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum RagError {
    #[error("duplicate doc_id {0:?}")]
    DuplicateDoc(String),
    #[error("document {0:?} has empty text")]
    EmptyDoc(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no documents to build a prompt from")]
    NoDocs,
    #[error("embedding of {doc_id:?} failed: {source}")]
    Embed {
        doc_id: String,
        #[source]
        source: BackendError,
    },
    #[error("embedding failed: {0}")]
    Query(#[source] BackendError),
    #[error("zero-norm or non-finite vector for {0:?}")]
    Degenerate(String),
    #[error("dimension mismatch: index d={expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagDoc {
    pub doc_id: String,
    pub title: String,
    pub text: String,
}

/// One document per distinct article title with text, first fact wins.
pub fn docs_from_facts(facts: &[FactRecord]) -> Vec<RagDoc> {
    let mut seen = HashSet::new();
    facts
        .iter()
        .filter(|f| !f.article_text.trim().is_empty())
        .filter(|f| seen.insert(f.article_title.clone()))
        .map(|f| RagDoc {
            doc_id: f.article_title.clone(),
            title: f.article_title.clone(),
            text: f.article_text.clone(),
        })
        .collect()
}

fn truncate_chars(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Unit-normalize in f64, store as f32.
pub fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return None;
    }
    Some(v.iter().map(|&x| (x as f64 / norm) as f32).collect())
}

/// Cosine score between unit vectors, accumulated in f64 in index order.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RagIndex {
    pub docs: Vec<RagDoc>,
    pub vectors: Vec<Vec<f32>>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub hits: Vec<Hit>,
    /// Fewer documents than requested were available.
    pub short: bool,
}

impl RagIndex {
    /// Embed every document (text cut to `embed_chars`). A failing batch is
    /// retried one document at a time; any document that still fails
    /// aborts the build.
    pub fn build(docs: Vec<RagDoc>, embedder: &dyn Embedder, embed_chars: usize) -> Result<Self, RagError> {
        let mut ids = HashSet::new();
        for d in &docs {
            if !ids.insert(d.doc_id.as_str()) {
                return Err(RagError::DuplicateDoc(d.doc_id.clone()));
            }
            if d.text.trim().is_empty() {
                return Err(RagError::EmptyDoc(d.doc_id.clone()));
            }
        }
        if docs.is_empty() {
            return Ok(Self {
                docs,
                vectors: Vec::new(),
                dim: 0,
            });
        }
        let texts: Vec<String> = docs.iter().map(|d| truncate_chars(&d.text, embed_chars).to_string()).collect();
        let raw = match embedder.embed(&texts) {
            Ok(v) if v.len() == texts.len() => v,
            first => {
                if let Err(e) = first {
                    log::warn!("batch embedding failed ({e}); retrying per document");
                }
                docs.iter()
                    .zip(&texts)
                    .map(|(d, t)| embed_one(embedder, &d.doc_id, t))
                    .collect::<Result<_, _>>()?
            }
        };
        let vectors = docs
            .iter()
            .zip(&raw)
            .map(|(d, v)| normalize(v).ok_or_else(|| RagError::Degenerate(d.doc_id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let dim = vectors[0].len();
        if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
            return Err(RagError::DimMismatch { expected: dim, got: v.len() });
        }
        Ok(Self { docs, vectors, dim })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc(&self, doc_id: &str) -> Option<&RagDoc> {
        self.docs.iter().find(|d| d.doc_id == doc_id)
    }

    /// Exhaustive top-k by dot product, ties by doc_id ascending.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Retrieval, RagError> {
        if k == 0 {
            return Err(RagError::ZeroK);
        }
        if self.is_empty() {
            return Err(RagError::EmptyIndex);
        }
        if query.len() != self.dim {
            return Err(RagError::DimMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let q = normalize(query).ok_or_else(|| RagError::Degenerate("query".into()))?;
        let scores = par::map(&self.vectors, |v| dot(v, &q));
        let mut order: Vec<usize> = (0..self.len()).collect();
        let by = |a: &usize, b: &usize| {
            scores[*b]
                .total_cmp(&scores[*a])
                .then_with(|| self.docs[*a].doc_id.cmp(&self.docs[*b].doc_id))
        };
        let take = k.min(order.len());
        if take < order.len() {
            order.select_nth_unstable_by(take - 1, by);
            order.truncate(take);
        }
        order.sort_by(by);
        if k > self.len() {
            log::warn!("requested top-{k} from an index of {}", self.len());
        }
        Ok(Retrieval {
            hits: order
                .into_iter()
                .map(|i| Hit {
                    doc_id: self.docs[i].doc_id.clone(),
                    score: scores[i],
                })
                .collect(),
            short: k > self.len(),
        })
    }

    pub fn retrieve_topk(&self, query: &str, k: usize, embedder: &dyn Embedder) -> Result<Retrieval, RagError> {
        if self.is_empty() {
            return Err(RagError::EmptyIndex);
        }
        let v = embedder
            .embed(&[query.to_string()])
            .map_err(RagError::Query)?
            .pop()
            .ok_or_else(|| RagError::Query(BackendError::Contract("no vector returned".into())))?;
        self.search(&v, k)
    }

    /// Header line, one line per document, then the little-endian f32
    /// blob. Offsets are byte offsets into the blob.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RagError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "{{\"n\":{},\"d\":{}}}", self.len(), self.dim)?;
        for (i, d) in self.docs.iter().enumerate() {
            let id = serde_json::to_string(&d.doc_id).map_err(|e| RagError::Format(e.to_string()))?;
            writeln!(w, "{{\"doc_id\":{id},\"vector_offset\":{}}}", i * self.dim * 4)?;
        }
        for v in &self.vectors {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Read an index; document titles and texts come from `docs` by id and
    /// stay empty for ids it does not cover.
    pub fn load(path: impl AsRef<Path>, docs: &[RagDoc]) -> Result<Self, RagError> {
        #[derive(Deserialize)]
        struct Header {
            n: usize,
            d: usize,
        }
        #[derive(Deserialize)]
        struct Entry {
            doc_id: String,
            vector_offset: usize,
        }
        let bad = |m: String| RagError::Format(m);
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(&line).map_err(|e| bad(format!("header: {e}")))?;
        let known: BTreeMap<&str, &RagDoc> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        let mut entries = Vec::with_capacity(header.n);
        for i in 0..header.n {
            line.clear();
            r.read_line(&mut line)?;
            let e: Entry = serde_json::from_str(&line).map_err(|e| bad(format!("entry {i}: {e}")))?;
            entries.push(e);
        }
        let mut blob = Vec::new();
        r.read_to_end(&mut blob)?;
        if blob.len() != header.n * header.d * 4 {
            return Err(bad(format!("blob has {} bytes, expected {}", blob.len(), header.n * header.d * 4)));
        }
        let mut seen = HashSet::new();
        let mut out = Self {
            docs: Vec::with_capacity(header.n),
            vectors: Vec::with_capacity(header.n),
            dim: header.d,
        };
        for e in entries {
            if !seen.insert(e.doc_id.clone()) {
                return Err(RagError::DuplicateDoc(e.doc_id));
            }
            let end = e.vector_offset + header.d * 4;
            if e.vector_offset % 4 != 0 || end > blob.len() {
                return Err(bad(format!("bad offset {} for {:?}", e.vector_offset, e.doc_id)));
            }
            out.vectors.push(
                blob[e.vector_offset..end]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            );
            out.docs.push(match known.get(e.doc_id.as_str()) {
                Some(d) => (*d).clone(),
                None => RagDoc {
                    doc_id: e.doc_id.clone(),
                    title: e.doc_id,
                    text: String::new(),
                },
            });
        }
        Ok(out)
    }
}

fn embed_one(embedder: &dyn Embedder, doc_id: &str, text: &str) -> Result<Vec<f32>, RagError> {
    let mut last = None;
    for _ in 0..PER_DOC_ATTEMPTS {
        match embedder.embed(&[text.to_string()]) {
            Ok(mut v) if v.len() == 1 => return Ok(v.remove(0)),
            Ok(v) => last = Some(BackendError::Contract(format!("{} vectors for one text", v.len()))),
            Err(e) => last = Some(e),
        }
    }
    Err(RagError::Embed {
        doc_id: doc_id.to_string(),
        source: last.expect("at least one attempt"),
    })
}

/// `"[i] {title}: {text}"`, whitespace-collapsed and cut to at most
/// `budget` characters.
pub fn context_block(i: usize, doc: &RagDoc, budget: usize) -> String {
    let text = doc.text.split_whitespace().collect::<Vec<_>>().join(" ");
    let block = format!("[{i}] {}: {text}", doc.title);
    truncate_chars(&block, budget).trim_end().to_string()
}

/// Context blocks followed by the question rendered with `template`.
pub fn assemble_rag_prompt(question: &str, docs: &[&RagDoc], budget: usize, template: &str) -> Result<String, RagError> {
    if docs.is_empty() {
        return Err(RagError::NoDocs);
    }
    let mut out = String::from("Context:\n");
    for (i, d) in docs.iter().enumerate() {
        out.push_str(&context_block(i + 1, d, budget));
        out.push('\n');
    }
    out.push('\n');
    out.push_str(&render_prompt(template, question));
    Ok(out)
}

pub fn assemble_default(question: &str, docs: &[&RagDoc]) -> Result<String, RagError> {
    assemble_rag_prompt(question, docs, DEFAULT_CHAR_BUDGET, DEFAULT_TEMPLATE)
}
