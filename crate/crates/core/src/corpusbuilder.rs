//! Injection training corpora.
//!
//! Three objectives are supported: next-token prediction over the raw fact
//! text, synthetic QA pairs, and span prediction over every contiguous span
//! of the fact. Each fact contributes exactly `s` records (the upsampling
//! factor). Builders stream records to a sink in a deterministic order.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::FactRecord;
use crate::par;
use crate::qagen::{Dimension, QAItem};

pub const BILM_SENTINEL: &str = "<extra_id_0>";
pub const CLM_MASK: &str = "[MASK]";
pub const CLM_PREFIX: &str = "Predict the masked words in the following sentence: ";
pub const CLM_SUFFIX: &str = "\nMasked words:\n";
pub const QA_SUFFIX: &str = "\nAnswer:";

/// Facts processed per parallel batch; bounds buffered records to
/// `BATCH * s`.
const BATCH: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("upsampling factor must be at least 1")]
    ZeroUpsampling,
    #[error("invalid span range: min_len={min_len}, max_len={max_len}")]
    SpanRange { min_len: usize, max_len: usize },
    #[error("cannot mask an empty token list")]
    EmptyTokens,
    #[error("writing corpus: {0}")]
    Sink(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "NTP")]
    Ntp,
    SyntheticQA,
    SpanPrediction,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Ntp => "NTP",
            Objective::SyntheticQA => "SyntheticQA",
            Objective::SpanPrediction => "SpanPrediction",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flavor {
    BiLM,
    #[serde(rename = "CLM")]
    Clm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub fact_id: String,
    pub span_start: usize,
    pub span_len: usize,
    pub masked_input: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub fact_id: String,
    pub objective: Objective,
    pub input: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excluded {
    pub fact_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingCorpus {
    pub objective: Objective,
    pub upsampling: usize,
    pub seed: u64,
    pub records: Vec<CorpusRecord>,
    pub excluded: Vec<Excluded>,
}

/// Written next to `corpus.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub objective: Objective,
    pub s: usize,
    pub seed: u64,
    pub min_len: Option<usize>,
    pub max_len: Option<usize>,
    pub flavor: Option<Flavor>,
    pub n_facts: usize,
    pub n_records: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildSummary {
    pub n_facts: usize,
    pub n_records: u64,
    pub excluded: Vec<Excluded>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanConfig {
    pub flavor: Flavor,
    pub min_len: usize,
    pub max_len: usize,
    pub sentinel: String,
    pub mask: String,
}

impl SpanConfig {
    pub fn new(flavor: Flavor) -> Self {
        Self {
            flavor,
            min_len: 1,
            max_len: 5,
            sentinel: BILM_SENTINEL.into(),
            mask: CLM_MASK.into(),
        }
    }

    pub fn placeholder(&self) -> &str {
        match self.flavor {
            Flavor::BiLM => &self.sentinel,
            Flavor::Clm => &self.mask,
        }
    }

    fn check(&self) -> Result<(), BuildError> {
        if self.min_len == 0 || self.max_len < self.min_len {
            return Err(BuildError::SpanRange {
                min_len: self.min_len,
                max_len: self.max_len,
            });
        }
        Ok(())
    }
}

/// `Σ_{ℓ=min..max} max(0, L-ℓ+1)`.
pub fn candidate_count(len: usize, min_len: usize, max_len: usize) -> usize {
    (min_len.max(1)..=max_len.min(len)).map(|l| len - l + 1).sum()
}

/// Every single-span masking of `tokens` with span length in
/// `[min_len, max_len]`, ordered by (start, len).
pub fn enumerate_span_candidates(
    fact_id: &str,
    tokens: &[&str],
    min_len: usize,
    max_len: usize,
    placeholder: &str,
) -> Result<Vec<MaskedExample>, BuildError> {
    if min_len == 0 || max_len < min_len {
        return Err(BuildError::SpanRange { min_len, max_len });
    }
    if tokens.is_empty() {
        return Err(BuildError::EmptyTokens);
    }
    let n = tokens.len();
    let mut out = Vec::with_capacity(candidate_count(n, min_len, max_len));
    for start in 0..n {
        for len in min_len..=max_len.min(n - start) {
            out.push(mask_span(fact_id, tokens, start, len, placeholder));
        }
    }
    Ok(out)
}

fn mask_span(fact_id: &str, tokens: &[&str], start: usize, len: usize, placeholder: &str) -> MaskedExample {
    let mut masked: Vec<&str> = Vec::with_capacity(tokens.len() - len + 1);
    masked.extend_from_slice(&tokens[..start]);
    masked.push(placeholder);
    masked.extend_from_slice(&tokens[start + len..]);
    MaskedExample {
        fact_id: fact_id.to_string(),
        span_start: start,
        span_len: len,
        masked_input: masked.join(" "),
        target: tokens[start..start + len].join(" "),
    }
}

/// Put `target` back in place of the first `placeholder` token.
pub fn splice(masked_input: &str, target: &str, placeholder: &str) -> String {
    let mut out: Vec<&str> = Vec::new();
    let mut done = false;
    for tok in masked_input.split_whitespace() {
        if !done && tok == placeholder {
            out.extend(target.split_whitespace());
            done = true;
        } else {
            out.push(tok);
        }
    }
    out.join(" ")
}

/// Deterministic per-fact generator so results do not depend on fact
/// order or thread scheduling.
pub fn fact_rng(seed: u64, fact_id: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(fact_id.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(seed ^ u64::from_le_bytes(b))
}

/// `s` indices into `0..c`: whole seeded shuffles of the candidate list
/// concatenated, the last one truncated.
pub fn cycle_indices(c: usize, s: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(s);
    if c == 0 {
        return out;
    }
    let mut order: Vec<usize> = (0..c).collect();
    while out.len() < s {
        order.shuffle(rng);
        let take = (s - out.len()).min(c);
        out.extend_from_slice(&order[..take]);
    }
    out
}

fn span_records(fact: &FactRecord, s: usize, cfg: &SpanConfig, seed: u64) -> Result<Vec<CorpusRecord>, String> {
    let tokens: Vec<&str> = fact.text.split_whitespace().collect();
    let placeholder = cfg.placeholder();
    if tokens.is_empty() {
        return Err("empty text".into());
    }
    if tokens.contains(&placeholder) {
        return Err(format!("text contains the placeholder {placeholder:?}"));
    }
    let cands = enumerate_span_candidates(&fact.id, &tokens, cfg.min_len, cfg.max_len, placeholder)
        .map_err(|e| e.to_string())?;
    if cands.is_empty() {
        return Err(format!("no span candidates (L={} < min_len={})", tokens.len(), cfg.min_len));
    }
    let mut rng = fact_rng(seed, &fact.id);
    Ok(cycle_indices(cands.len(), s, &mut rng)
        .into_iter()
        .map(|i| {
            let c = &cands[i];
            let input = match cfg.flavor {
                Flavor::BiLM => c.masked_input.clone(),
                Flavor::Clm => format!("{CLM_PREFIX}{}{CLM_SUFFIX}", c.masked_input),
            };
            CorpusRecord {
                fact_id: fact.id.clone(),
                objective: Objective::SpanPrediction,
                input,
                target: c.target.clone(),
            }
        })
        .collect())
}

/// Run `per_fact` over facts in parallel batches and hand results to
/// `emit` in fact order.
fn stream_per_fact<T: Sync>(
    items: &[T],
    id: impl Fn(&T) -> &str + Sync,
    per_fact: impl Fn(&T) -> Result<Vec<CorpusRecord>, String> + Sync,
    emit: &mut dyn FnMut(&CorpusRecord) -> std::io::Result<()>,
) -> Result<BuildSummary, BuildError> {
    let mut summary = BuildSummary {
        n_facts: 0,
        n_records: 0,
        excluded: Vec::new(),
    };
    for batch in items.chunks(BATCH) {
        for (item, result) in batch.iter().zip(par::map(batch, &per_fact)) {
            match result {
                Ok(records) => {
                    summary.n_facts += 1;
                    for r in &records {
                        emit(r)?;
                    }
                    summary.n_records += records.len() as u64;
                }
                Err(reason) => {
                    log::warn!("excluding fact {}: {reason}", id(item));
                    summary.excluded.push(Excluded {
                        fact_id: id(item).to_string(),
                        reason,
                    });
                }
            }
        }
    }
    Ok(summary)
}

/// Span-prediction corpus, fact by fact in input order.
pub fn stream_span_corpus(
    facts: &[FactRecord],
    s: usize,
    cfg: &SpanConfig,
    seed: u64,
    emit: &mut dyn FnMut(&CorpusRecord) -> std::io::Result<()>,
) -> Result<BuildSummary, BuildError> {
    if s == 0 {
        return Err(BuildError::ZeroUpsampling);
    }
    cfg.check()?;
    stream_per_fact(facts, |f| f.id.as_str(), |f| span_records(f, s, cfg, seed), emit)
}

/// QA corpus over each fact's Training items. Facts follow `fact_ids`
/// order; non-Training items are ignored.
pub fn stream_qa_corpus(
    fact_ids: &[String],
    items: &[QAItem],
    s: usize,
    seed: u64,
    emit: &mut dyn FnMut(&CorpusRecord) -> std::io::Result<()>,
) -> Result<BuildSummary, BuildError> {
    if s == 0 {
        return Err(BuildError::ZeroUpsampling);
    }
    let mut by_fact: HashMap<&str, Vec<&QAItem>> = HashMap::new();
    for item in items.iter().filter(|q| q.dimension == Dimension::Training) {
        by_fact.entry(item.fact_id.as_str()).or_default().push(item);
    }
    let per_fact = |id: &String| -> Result<Vec<CorpusRecord>, String> {
        let qas = by_fact.get(id.as_str()).ok_or("no training QAs")?;
        let mut rng = fact_rng(seed, id);
        Ok(cycle_indices(qas.len(), s, &mut rng)
            .into_iter()
            .map(|i| CorpusRecord {
                fact_id: id.clone(),
                objective: Objective::SyntheticQA,
                input: format!("{}{QA_SUFFIX}", qas[i].question),
                target: qas[i].answer.clone(),
            })
            .collect())
    };
    stream_per_fact(fact_ids, |id| id.as_str(), per_fact, emit)
}

/// NTP corpus: every fact text `s` times, globally shuffled. Position `p`
/// of the output holds copy `π(p)` for a seeded permutation `π`, so the
/// stream needs no buffering regardless of `n * s`.
pub fn stream_ntp_corpus(
    facts: &[FactRecord],
    s: usize,
    seed: u64,
    emit: &mut dyn FnMut(&CorpusRecord) -> std::io::Result<()>,
) -> Result<BuildSummary, BuildError> {
    if s == 0 {
        return Err(BuildError::ZeroUpsampling);
    }
    let mut excluded = Vec::new();
    let kept: Vec<&FactRecord> = facts
        .iter()
        .filter(|f| {
            let ok = !f.text.trim().is_empty();
            if !ok {
                excluded.push(Excluded {
                    fact_id: f.id.clone(),
                    reason: "empty text".into(),
                });
            }
            ok
        })
        .collect();
    let total = kept.len() as u64 * s as u64;
    let perm = Feistel::new(total, seed);
    for p in 0..total {
        let f = kept[(perm.apply(p) / s as u64) as usize];
        emit(&CorpusRecord {
            fact_id: f.id.clone(),
            objective: Objective::Ntp,
            input: String::new(),
            target: f.text.clone(),
        })?;
    }
    Ok(BuildSummary {
        n_facts: kept.len(),
        n_records: total,
        excluded,
    })
}

fn collect(
    objective: Objective,
    s: usize,
    seed: u64,
    run: impl FnOnce(&mut dyn FnMut(&CorpusRecord) -> std::io::Result<()>) -> Result<BuildSummary, BuildError>,
) -> Result<TrainingCorpus, BuildError> {
    let mut records = Vec::new();
    let summary = run(&mut |r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok(TrainingCorpus {
        objective,
        upsampling: s,
        seed,
        records,
        excluded: summary.excluded,
    })
}

pub fn build_span_corpus(facts: &[FactRecord], s: usize, cfg: &SpanConfig, seed: u64) -> Result<TrainingCorpus, BuildError> {
    collect(Objective::SpanPrediction, s, seed, |emit| stream_span_corpus(facts, s, cfg, seed, emit))
}

pub fn build_ntp_corpus(facts: &[FactRecord], s: usize, seed: u64) -> Result<TrainingCorpus, BuildError> {
    collect(Objective::Ntp, s, seed, |emit| stream_ntp_corpus(facts, s, seed, emit))
}

pub fn build_qa_corpus(fact_ids: &[String], items: &[QAItem], s: usize, seed: u64) -> Result<TrainingCorpus, BuildError> {
    collect(Objective::SyntheticQA, s, seed, |emit| stream_qa_corpus(fact_ids, items, s, seed, emit))
}

/// Seeded bijection on `0..n`: a balanced Feistel network over the
/// smallest even bit width covering `n`, with cycle-walking for values
/// that land outside the domain.
#[derive(Debug, Clone)]
pub struct Feistel {
    n: u64,
    half_bits: u32,
    keys: [u64; 6],
}

impl Feistel {
    pub fn new(n: u64, seed: u64) -> Self {
        let bits = 64 - n.saturating_sub(1).leading_zeros();
        let half_bits = bits.div_ceil(2).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            n,
            half_bits,
            keys: std::array::from_fn(|_| rng.random()),
        }
    }

    fn round(&self, x: u64) -> u64 {
        let mask = (1u64 << self.half_bits) - 1;
        let (mut l, mut r) = (x >> self.half_bits, x & mask);
        for k in self.keys {
            let f = splitmix(r ^ k) & mask;
            (l, r) = (r, l ^ f);
        }
        (l << self.half_bits) | r
    }

    pub fn apply(&self, x: u64) -> u64 {
        debug_assert!(x < self.n);
        let mut y = self.round(x);
        while y >= self.n {
            y = self.round(y);
        }
        y
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
