//! Evaluation and training question generation.
//!
//! Every dimension is produced by prompting a generator backend, parsing
//! the single JSON object it returns and validating the result. Invalid or
//! unparseable responses are retried up to [`RetryPolicy::max_attempts`];
//! after that the (fact, dimension) pair is dropped with a reason code.

pub mod prompts;
pub mod stub;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backends::{BackendError, Completer};
use crate::corpus::{ArticleSource, FactRecord};
use crate::par;

/// Token budget handed to generator backends; responses are whole JSON
/// objects, not short answers.
pub const GENERATOR_MAX_TOKENS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Reliability,
    Generality,
    Paraphrase,
    Portability,
    Locality,
    Training,
}

impl Dimension {
    /// The five evaluation dimensions in report order.
    pub const EVAL: [Dimension; 5] = [
        Dimension::Reliability,
        Dimension::Generality,
        Dimension::Paraphrase,
        Dimension::Portability,
        Dimension::Locality,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Reliability => "Reliability",
            Dimension::Generality => "Generality",
            Dimension::Paraphrase => "Paraphrase",
            Dimension::Portability => "Portability",
            Dimension::Locality => "Locality",
            Dimension::Training => "Training",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub fact_id: String,
    pub dimension: Dimension,
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl QAItem {
    pub fn new(fact_id: &str, dimension: Dimension, question: &str, answer: &str) -> Self {
        Self {
            fact_id: fact_id.to_string(),
            dimension,
            question: question.trim().to_string(),
            answer: answer.trim().to_string(),
            meta: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDescription {
    pub entity: String,
    pub description: String,
    pub source_page: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    EmptyField,
    AnswerLeak,
    WrongAnswer,
    AnswerNotInFact,
    EntityLeak,
    NoCandidates,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::EmptyField => "empty question or answer",
            RejectReason::AnswerLeak => "question contains the answer entity",
            RejectReason::WrongAnswer => "answer differs from the required answer",
            RejectReason::AnswerNotInFact => "answer is not part of the fact",
            RejectReason::EntityLeak => "text mentions the described entity",
            RejectReason::NoCandidates => "no usable candidate in the response",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QaGenError {
    #[error("generator unavailable: {0}")]
    Backend(#[from] BackendError),
    #[error("response is not the expected JSON object ({message}); raw: {raw}")]
    Unparseable { message: String, raw: String },
    #[error("rejected after retries: {0}")]
    Rejected(RejectReason),
    #[error("precondition failed: {0}")]
    Precondition(String),
    /// Not a failure: the fact is excluded from Portability/Locality.
    #[error("fact skipped: {0}")]
    SkipFact(String),
}

impl QaGenError {
    pub fn reason_code(&self) -> String {
        match self {
            QaGenError::Backend(_) => "backend".into(),
            QaGenError::Unparseable { .. } => "unparseable".into(),
            QaGenError::Rejected(r) => serde_json::to_value(r)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_else(|| "rejected".into()),
            QaGenError::Precondition(_) => "precondition".into(),
            QaGenError::SkipFact(_) => "skip_fact".into(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: usize) -> Self {
        Self {
            max_attempts,
            backoff: Duration::ZERO,
        }
    }
}

enum Attempt<T> {
    Done(T),
    Retry(QaGenError),
}

/// Prompt, parse and validate until `accept` succeeds or attempts run out.
fn with_retries<T>(
    generator: &dyn Completer,
    prompt: &str,
    policy: RetryPolicy,
    accept: impl Fn(&Value) -> Result<T, RejectReason>,
) -> Result<T, QaGenError> {
    let mut last = QaGenError::Rejected(RejectReason::NoCandidates);
    for attempt in 0..policy.max_attempts.max(1) {
        if attempt > 0 && !policy.backoff.is_zero() {
            std::thread::sleep(policy.backoff * 2u32.saturating_pow(attempt as u32 - 1));
        }
        let outcome = match generator.complete_prompt(prompt, GENERATOR_MAX_TOKENS) {
            Err(e) if e.is_retryable() => Attempt::Retry(QaGenError::Backend(e)),
            Err(e) => return Err(QaGenError::Backend(e)),
            Ok(raw) => match extract_json(&raw) {
                Err(message) => Attempt::Retry(QaGenError::Unparseable { message, raw }),
                Ok(value) => match accept(&value) {
                    Ok(v) => Attempt::Done(v),
                    Err(reason) => Attempt::Retry(QaGenError::Rejected(reason)),
                },
            },
        };
        match outcome {
            Attempt::Done(v) => return Ok(v),
            Attempt::Retry(err) => {
                log::debug!("generator attempt {} failed: {err}", attempt + 1);
                last = err;
            }
        }
    }
    Err(last)
}

/// Pull the single JSON object out of a generator response. Code fences,
/// surrounding prose and trailing commas are tolerated.
pub fn extract_json(raw: &str) -> Result<Value, String> {
    let mut s = raw.trim();
    if let Some(rest) = s.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
        s = rest.trim_end().strip_suffix("```").unwrap_or(rest).trim();
    }
    let start = s.find('{').ok_or("no JSON object found")?;
    let end = s.rfind('}').ok_or("no JSON object found")?;
    if end < start {
        return Err("no JSON object found".into());
    }
    let body = &s[start..=end];
    let value = serde_json::from_str::<Value>(body)
        .or_else(|_| serde_json::from_str::<Value>(&strip_trailing_commas(body)))
        .map_err(|e| e.to_string())?;
    if value.is_object() {
        Ok(value)
    } else {
        Err("top-level value is not an object".into())
    }
}

fn strip_trailing_commas(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_string = false;
    let mut escaped = false;
    let chars: Vec<char> = s.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_string = false,
                _ => {}
            }
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

fn str_field<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str).map(str::trim)
}

fn qa_pairs(v: &Value, key: &str) -> Vec<(String, String)> {
    v.get(key)
        .and_then(Value::as_array)
        .map(|arr| {
            arr.iter()
                .filter_map(|e| {
                    let q = str_field(e, "question")?;
                    let a = match e.get("answer") {
                        Some(Value::String(s)) => s.trim().to_string(),
                        Some(Value::Number(n)) => n.to_string(),
                        _ => return None,
                    };
                    Some((q.to_string(), a))
                })
                .collect()
        })
        .unwrap_or_default()
}

fn contains_ci(haystack: &str, needle: &str) -> bool {
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

/// Check one item against its dimension's invariant. `reliability` is the
/// source item for Paraphrase/Portability.
pub fn validate_qa(item: &QAItem, fact: &FactRecord, reliability: Option<&QAItem>) -> Result<(), RejectReason> {
    if item.question.trim().is_empty() || item.answer.trim().is_empty() {
        return Err(RejectReason::EmptyField);
    }
    match item.dimension {
        Dimension::Reliability => {
            if item.answer != fact.bold_entity {
                return Err(RejectReason::WrongAnswer);
            }
            if item.question.contains(&fact.bold_entity) {
                return Err(RejectReason::AnswerLeak);
            }
        }
        Dimension::Paraphrase | Dimension::Portability => {
            if let Some(src) = reliability {
                if item.answer != src.answer {
                    return Err(RejectReason::WrongAnswer);
                }
            }
            if item.dimension == Dimension::Portability {
                if let Some(entity) = item.meta.get("entity") {
                    if contains_ci(&item.question, entity) {
                        return Err(RejectReason::EntityLeak);
                    }
                }
            }
        }
        Dimension::Generality => {
            if !fact.text.contains(&item.answer) {
                return Err(RejectReason::AnswerNotInFact);
            }
        }
        Dimension::Locality => {
            if let Some(entity) = item.meta.get("entity") {
                if &item.answer != entity {
                    return Err(RejectReason::WrongAnswer);
                }
                if contains_ci(&item.question, entity) {
                    return Err(RejectReason::AnswerLeak);
                }
            }
        }
        Dimension::Training => {}
    }
    Ok(())
}

/// The `{test_example}` block for the Reliability prompt.
pub fn reliability_example(fact: &FactRecord) -> String {
    serde_json::to_string_pretty(&serde_json::json!({
        "text": fact.text,
        "bold_entity": fact.bold_entity,
    }))
    .unwrap_or_default()
}

/// Generate Reliability, Paraphrase, Generality or Training items for a
/// fact. Paraphrase and Generality need the fact's Reliability item in
/// `seed`.
pub fn generate_questions(
    fact: &FactRecord,
    dimension: Dimension,
    generator: &dyn Completer,
    seed: Option<&QAItem>,
    policy: RetryPolicy,
) -> Result<Vec<QAItem>, QaGenError> {
    match dimension {
        Dimension::Reliability => {
            let prompt = prompts::fill(prompts::RELIABILITY, &[("test_example", &reliability_example(fact))]);
            let item = with_retries(generator, &prompt, policy, |v| {
                let q = v.get("question").ok_or(RejectReason::NoCandidates)?;
                let (question, answer) = match q {
                    Value::Object(_) => (
                        str_field(q, "text").or_else(|| str_field(q, "question")).unwrap_or(""),
                        str_field(q, "answer").unwrap_or(""),
                    ),
                    Value::String(s) => (s.as_str(), str_field(v, "answer").unwrap_or("")),
                    _ => return Err(RejectReason::NoCandidates),
                };
                let item = QAItem::new(&fact.id, Dimension::Reliability, question, answer);
                validate_qa(&item, fact, None)?;
                Ok(item)
            })?;
            Ok(vec![item])
        }
        Dimension::Paraphrase => {
            let src = seed_for(seed, dimension)?;
            let prompt = prompts::fill(
                prompts::PARAPHRASE,
                &[("question", &src.question), ("answer", &src.answer)],
            );
            let item = with_retries(generator, &prompt, policy, |v| {
                let pairs = qa_pairs(v, "paraphrases");
                let (question, _) = pairs.first().ok_or(RejectReason::NoCandidates)?;
                let item = QAItem::new(&fact.id, Dimension::Paraphrase, question, &src.answer);
                validate_qa(&item, fact, Some(src))?;
                Ok(item)
            })?;
            Ok(vec![item])
        }
        Dimension::Generality => {
            let src = seed_for(seed, dimension)?;
            let prompt = prompts::fill(
                prompts::GENERALITY,
                &[("fact", &fact.text), ("question", &src.question), ("answer", &src.answer)],
            );
            let item = with_retries(generator, &prompt, policy, |v| {
                let pairs = qa_pairs(v, "alternatives");
                if pairs.is_empty() {
                    return Err(RejectReason::NoCandidates);
                }
                pairs
                    .iter()
                    .map(|(q, a)| QAItem::new(&fact.id, Dimension::Generality, q, a))
                    .find(|item| item.answer != src.answer && validate_qa(item, fact, None).is_ok())
                    .ok_or(RejectReason::AnswerNotInFact)
            })?;
            Ok(vec![item])
        }
        Dimension::Training => {
            let prompt = prompts::fill(prompts::TRAINING, &[("fact", &fact.text)]);
            with_retries(generator, &prompt, policy, |v| {
                let items: Vec<QAItem> = qa_pairs(v, "questions")
                    .iter()
                    .map(|(q, a)| QAItem::new(&fact.id, Dimension::Training, q, a))
                    .filter(|item| validate_qa(item, fact, None).is_ok())
                    .collect();
                if items.is_empty() {
                    Err(RejectReason::NoCandidates)
                } else {
                    Ok(items)
                }
            })
        }
        Dimension::Portability | Dimension::Locality => Err(QaGenError::Precondition(format!(
            "{dimension} items come from generate_portability_and_locality"
        ))),
    }
}

fn seed_for(seed: Option<&QAItem>, dimension: Dimension) -> Result<&QAItem, QaGenError> {
    seed.filter(|s| s.dimension == Dimension::Reliability)
        .ok_or_else(|| QaGenError::Precondition(format!("{dimension} needs the Reliability item")))
}

/// Describe `entity` without naming it. A missing page is a skip in strict
/// mode; a description that keeps leaking the name is a skip after retries.
pub fn generate_entity_description(
    entity: &str,
    page: &str,
    generator: &dyn Completer,
    strict: bool,
    policy: RetryPolicy,
) -> Result<EntityDescription, QaGenError> {
    if entity.trim().is_empty() {
        return Err(QaGenError::Precondition("empty entity".into()));
    }
    if strict && page.trim().is_empty() {
        return Err(QaGenError::SkipFact(format!("no page for {entity:?}")));
    }
    let prompt = prompts::fill(prompts::ENTITY_DESCRIPTION, &[("page", page), ("entity", entity)]);
    let result = with_retries(generator, &prompt, policy, |v| {
        let description = str_field(v, "description").ok_or(RejectReason::NoCandidates)?;
        if description.is_empty() {
            return Err(RejectReason::EmptyField);
        }
        if contains_ci(description, entity) {
            return Err(RejectReason::EntityLeak);
        }
        Ok(EntityDescription {
            entity: entity.to_string(),
            description: description.to_string(),
            source_page: page.to_string(),
        })
    });
    match result {
        Err(QaGenError::Rejected(RejectReason::EntityLeak)) => Err(QaGenError::SkipFact(format!(
            "description kept naming {entity:?}"
        ))),
        other => other,
    }
}

/// Two-stage multi-hop generation: a scenario question that embeds the
/// description (answer: the Reliability answer) and a question over the
/// description alone (answer: the entity).
pub fn generate_portability_and_locality(
    fact: &FactRecord,
    desc: Option<&EntityDescription>,
    reliability: &QAItem,
    generator: &dyn Completer,
    policy: RetryPolicy,
) -> Result<(QAItem, QAItem), QaGenError> {
    let desc = desc.ok_or_else(|| QaGenError::Precondition("entity description required".into()))?;
    if reliability.dimension != Dimension::Reliability {
        return Err(QaGenError::Precondition("source item is not Reliability".into()));
    }
    let meta: BTreeMap<String, String> = [
        ("entity".to_string(), desc.entity.clone()),
        ("description".to_string(), desc.description.clone()),
    ]
    .into();

    let prompt = prompts::fill(
        prompts::PORTABILITY,
        &[
            ("description", &desc.description),
            ("entity", &desc.entity),
            ("question", &reliability.question),
        ],
    );
    let portability = with_retries(generator, &prompt, policy, |v| {
        let question = str_field(v, "question").ok_or(RejectReason::NoCandidates)?;
        let mut item = QAItem::new(&fact.id, Dimension::Portability, question, &reliability.answer);
        item.meta = meta.clone();
        validate_qa(&item, fact, Some(reliability))?;
        if item.question.contains(&fact.bold_entity) {
            return Err(RejectReason::AnswerLeak);
        }
        Ok(item)
    })?;

    let prompt = prompts::fill(
        prompts::LOCALITY,
        &[("entity", &desc.entity), ("description", &desc.description)],
    );
    let locality = with_retries(generator, &prompt, policy, |v| {
        let question = str_field(v, "question").ok_or(RejectReason::NoCandidates)?;
        let answer = str_field(v, "answer").unwrap_or("");
        if !(contains_ci(answer, &desc.entity) || (!answer.is_empty() && contains_ci(&desc.entity, answer))) {
            return Err(RejectReason::WrongAnswer);
        }
        let mut item = QAItem::new(&fact.id, Dimension::Locality, question, &desc.entity);
        item.meta = meta.clone();
        validate_qa(&item, fact, None)?;
        Ok(item)
    })?;
    Ok((portability, locality))
}

/// Generators per dimension; all default to one backend.
#[derive(Clone)]
pub struct Generators {
    pub reliability: Arc<dyn Completer>,
    pub paraphrase: Arc<dyn Completer>,
    pub generality: Arc<dyn Completer>,
    pub description: Arc<dyn Completer>,
    pub portability: Arc<dyn Completer>,
    pub locality: Arc<dyn Completer>,
    pub training: Arc<dyn Completer>,
}

impl Generators {
    pub fn uniform(backend: Arc<dyn Completer>) -> Self {
        Self {
            reliability: backend.clone(),
            paraphrase: backend.clone(),
            generality: backend.clone(),
            description: backend.clone(),
            portability: backend.clone(),
            locality: backend.clone(),
            training: backend,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub fact_id: String,
    pub dimension: Dimension,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct QuestionRun {
    /// Existing plus newly generated items, ordered by fact then dimension.
    pub items: Vec<QAItem>,
    pub generated: usize,
    pub dropped: Vec<Dropped>,
}

pub struct QuestionPipeline {
    pub generators: Generators,
    pub policy: RetryPolicy,
    pub in_flight: usize,
    /// Skip Portability/Locality when the linked entity's page is missing.
    pub strict_pages: bool,
    pub pages: Option<Arc<dyn ArticleSource>>,
    pub dimensions: Vec<Dimension>,
}

impl QuestionPipeline {
    pub fn new(generators: Generators) -> Self {
        Self {
            generators,
            policy: RetryPolicy::default(),
            in_flight: 8,
            strict_pages: true,
            pages: None,
            dimensions: vec![
                Dimension::Reliability,
                Dimension::Generality,
                Dimension::Paraphrase,
                Dimension::Portability,
                Dimension::Locality,
                Dimension::Training,
            ],
        }
    }

    /// Generate every missing (fact, dimension) pair. `existing` items are
    /// kept as-is, so rerunning over a populated file only fills gaps.
    pub fn run(&self, facts: &[FactRecord], existing: Vec<QAItem>) -> QuestionRun {
        let have: HashSet<(String, Dimension)> = existing
            .iter()
            .map(|q| (q.fact_id.clone(), q.dimension))
            .collect();
        let results = par::bounded(self.in_flight, || {
            par::map(facts, |fact| self.run_fact(fact, &existing, &have))
        });
        let mut items = existing;
        let mut run = QuestionRun::default();
        for (new_items, dropped) in results {
            run.generated += new_items.len();
            items.extend(new_items);
            run.dropped.extend(dropped);
        }
        let order: BTreeMap<&str, usize> = facts.iter().enumerate().map(|(i, f)| (f.id.as_str(), i)).collect();
        items.sort_by_key(|q| (order.get(q.fact_id.as_str()).copied().unwrap_or(usize::MAX), q.dimension));
        run.items = items;
        run
    }

    fn run_fact(
        &self,
        fact: &FactRecord,
        existing: &[QAItem],
        have: &HashSet<(String, Dimension)>,
    ) -> (Vec<QAItem>, Vec<Dropped>) {
        let wants = |d: Dimension| self.dimensions.contains(&d) && !have.contains(&(fact.id.clone(), d));
        let mut out = Vec::new();
        let mut dropped = Vec::new();
        let mut drop = |d: Dimension, e: &QaGenError| {
            log::info!("fact {} {d}: {e}", fact.id);
            dropped.push(Dropped {
                fact_id: fact.id.clone(),
                dimension: d,
                reason: e.reason_code(),
            });
        };

        let mut reliability = existing
            .iter()
            .find(|q| q.fact_id == fact.id && q.dimension == Dimension::Reliability)
            .cloned();
        if wants(Dimension::Reliability) {
            match generate_questions(fact, Dimension::Reliability, &*self.generators.reliability, None, self.policy) {
                Ok(mut items) => {
                    let item = items.remove(0);
                    reliability = Some(item.clone());
                    out.push(item);
                }
                Err(e) => drop(Dimension::Reliability, &e),
            }
        }

        for (dim, gen) in [
            (Dimension::Generality, &self.generators.generality),
            (Dimension::Paraphrase, &self.generators.paraphrase),
        ] {
            if !wants(dim) {
                continue;
            }
            match reliability.as_ref() {
                Some(src) => match generate_questions(fact, dim, &**gen, Some(src), self.policy) {
                    Ok(items) => out.extend(items),
                    Err(e) => drop(dim, &e),
                },
                None => drop(dim, &QaGenError::Precondition("no Reliability item".into())),
            }
        }

        if wants(Dimension::Portability) || wants(Dimension::Locality) {
            match self.portability_and_locality(fact, reliability.as_ref()) {
                Ok((p, l)) => {
                    if wants(Dimension::Portability) {
                        out.push(p);
                    }
                    if wants(Dimension::Locality) {
                        out.push(l);
                    }
                }
                Err(e) => {
                    for d in [Dimension::Portability, Dimension::Locality] {
                        if wants(d) {
                            drop(d, &e);
                        }
                    }
                }
            }
        }

        if wants(Dimension::Training) {
            match generate_questions(fact, Dimension::Training, &*self.generators.training, None, self.policy) {
                Ok(items) => out.extend(items),
                Err(e) => drop(Dimension::Training, &e),
            }
        }
        (out, dropped)
    }

    fn portability_and_locality(
        &self,
        fact: &FactRecord,
        reliability: Option<&QAItem>,
    ) -> Result<(QAItem, QAItem), QaGenError> {
        let reliability = reliability.ok_or_else(|| QaGenError::Precondition("no Reliability item".into()))?;
        let link = fact
            .other_entities()
            .next()
            .ok_or_else(|| QaGenError::SkipFact("no non-bold linked entity".into()))?;
        let page = self
            .pages
            .as_ref()
            .and_then(|p| p.fetch(&link.title))
            .map(|raw| crate::wikitext::clean_article(&raw))
            .unwrap_or_default();
        let desc = generate_entity_description(
            &link.anchor,
            &page,
            &*self.generators.description,
            self.strict_pages,
            self.policy,
        )?;
        let (p, _) = generate_portability_and_locality(fact, Some(&desc), reliability, &*self.generators.portability, self.policy)?;
        let (_, l) = generate_portability_and_locality(fact, Some(&desc), reliability, &*self.generators.locality, self.policy)?;
        Ok((p, l))
    }
}

/// Re-validate a questions file against its facts. Returns offending items.
pub fn revalidate(items: &[QAItem], facts: &[FactRecord]) -> Vec<(usize, String)> {
    let by_id: BTreeMap<&str, &FactRecord> = facts.iter().map(|f| (f.id.as_str(), f)).collect();
    let mut seen: HashSet<(&str, Dimension)> = HashSet::new();
    let mut bad = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let Some(fact) = by_id.get(item.fact_id.as_str()) else {
            bad.push((i, format!("unknown fact {}", item.fact_id)));
            continue;
        };
        let reliability = items
            .iter()
            .find(|q| q.fact_id == item.fact_id && q.dimension == Dimension::Reliability);
        if let Err(r) = validate_qa(item, fact, reliability) {
            bad.push((i, r.to_string()));
        }
        if item.dimension != Dimension::Training && !seen.insert((item.fact_id.as_str(), item.dimension)) {
            bad.push((i, format!("duplicate {} item", item.dimension)));
        }
    }
    bad
}

#[cfg(test)]
mod tests;
