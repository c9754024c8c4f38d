//! DYK archive ingestion: bullets in, [`FactRecord`]s out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::jsonl::{self, JsonlError};
use crate::par;
use crate::wikitext::{self, MarkupError};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("unparseable date {0:?}")]
    BadDate(String),
    #[error("invalid date window: {start} > {end}")]
    BadWindow { start: NaiveDate, end: NaiveDate },
    #[error("fact {id}: {reason}")]
    InvalidFact { id: String, reason: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A non-bold wiki link inside a fact, kept for portability/locality
/// question generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactLink {
    pub title: String,
    pub anchor: String,
}

/// One DYK fact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactRecord {
    pub id: String,
    #[serde(with = "ymd")]
    pub date: NaiveDate,
    pub text: String,
    pub bold_entity: String,
    pub article_title: String,
    #[serde(default)]
    pub article_text: String,
    pub source_url: String,
    #[serde(default)]
    pub multi_bold: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<FactLink>,
}

mod ymd {
    use chrono::NaiveDate;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &NaiveDate, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&d.format("%Y-%m-%d").to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDate, D::Error> {
        let raw = String::deserialize(d)?;
        NaiveDate::parse_from_str(&raw, "%Y-%m-%d").map_err(serde::de::Error::custom)
    }
}

impl FactRecord {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |reason: &str| CorpusError::InvalidFact {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.bold_entity.is_empty() {
            return Err(bad("empty bold_entity"));
        }
        if !self.text.contains(&self.bold_entity) {
            return Err(bad("bold_entity is not a substring of text"));
        }
        if self.id != fact_id(self.date, &self.text) {
            return Err(bad("id does not match date|text"));
        }
        Ok(())
    }

    /// Non-bold linked entities in order of appearance.
    pub fn other_entities(&self) -> impl Iterator<Item = &FactLink> {
        self.links
            .iter()
            .filter(move |l| l.title != self.article_title && l.anchor != self.bold_entity)
    }
}

/// Lowercase hex of the first 128 bits of SHA-256 over `"YYYY-MM-DD|text"`.
pub fn fact_id(date: NaiveDate, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(date.format("%Y-%m-%d").to_string().as_bytes());
    hasher.update(b"|");
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn article_url(title: &str) -> String {
    format!("https://en.wikipedia.org/wiki/{}", title.replace(' ', "_"))
}

/// Parse a calendar date in any of the formats DYK archives use.
pub fn parse_date(raw: &str) -> Result<NaiveDate, CorpusError> {
    let s = raw.trim();
    const FORMATS: &[&str] = &["%Y-%m-%d", "%d %B %Y", "%B %d, %Y", "%d %b %Y", "%B %d %Y"];
    FORMATS
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
        .ok_or_else(|| CorpusError::BadDate(raw.to_string()))
}

/// Inclusive date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    #[serde(with = "ymd")]
    pub start: NaiveDate,
    #[serde(with = "ymd")]
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, CorpusError> {
        if start > end {
            return Err(CorpusError::BadWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    /// Facts between 2004 and 2009, used as out-of-scope negatives.
    pub fn negative_pool() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2004, 1, 1).expect("valid date"),
            end: NaiveDate::from_ymd_opt(2009, 12, 31).expect("valid date"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub bullets: usize,
    pub emitted: usize,
    pub not_dyk: usize,
    pub no_bold: usize,
    pub malformed: usize,
    pub multi_bold: usize,
    pub diagnostics: Vec<String>,
}

impl ParseReport {
    pub fn merge(&mut self, other: ParseReport) {
        self.bullets += other.bullets;
        self.emitted += other.emitted;
        self.not_dyk += other.not_dyk;
        self.no_bold += other.no_bold;
        self.malformed += other.malformed;
        self.multi_bold += other.multi_bold;
        self.diagnostics.extend(other.diagnostics);
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedPage {
    pub facts: Vec<FactRecord>,
    pub report: ParseReport,
}

/// Parse one "Recent additions" section for `page_date`.
pub fn parse_dyk_page(raw: &str, page_date: &str) -> Result<ParsedPage, CorpusError> {
    let date = parse_date(page_date)?;
    Ok(parse_dyk_section(raw, date))
}

pub fn parse_dyk_section(raw: &str, date: NaiveDate) -> ParsedPage {
    let mut page = ParsedPage::default();
    for bullet in bullets(raw) {
        page.report.bullets += 1;
        match parse_bullet(&bullet, date) {
            Ok(Some(fact)) => {
                if fact.multi_bold {
                    page.report.multi_bold += 1;
                }
                page.report.emitted += 1;
                page.facts.push(fact);
            }
            Ok(None) => page.report.not_dyk += 1,
            Err(BulletSkip::NoBold) => page.report.no_bold += 1,
            Err(BulletSkip::Malformed(err)) => {
                page.report.malformed += 1;
                page.report
                    .diagnostics
                    .push(format!("{date}: {err}: {}", truncate(&bullet, 80)));
            }
        }
    }
    page
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

enum BulletSkip {
    NoBold,
    Malformed(String),
}

/// Split a page into bullet bodies: wikitext `*` lines or HTML `<li>` items.
fn bullets(raw: &str) -> Vec<String> {
    let lower = raw.to_ascii_lowercase();
    if lower.contains("<li") {
        let mut out = Vec::new();
        let mut from = 0;
        while let Some(pos) = lower[from..].find("<li") {
            let open = from + pos;
            let Some(gt) = lower[open..].find('>') else { break };
            let body_start = open + gt + 1;
            let body_end = lower[body_start..]
                .find("</li>")
                .map_or(raw.len(), |e| body_start + e);
            out.push(raw[body_start..body_end].to_string());
            from = body_end;
        }
        return out;
    }
    raw.lines()
        .map(str::trim_start)
        .filter(|l| l.starts_with('*'))
        .map(|l| l.trim_start_matches('*').trim().to_string())
        .collect()
}

/// Length of a leading "... that " in any of its historic spellings, or
/// `None` if the sentence is not a DYK hook.
fn hook_prefix_len(text: &str) -> Option<usize> {
    let mut rest = text;
    for ellipsis in ["...", "…", ". . ."] {
        if let Some(r) = rest.strip_prefix(ellipsis) {
            rest = r;
            break;
        }
    }
    let rest_trim = rest.trim_start();
    let head: String = rest_trim.chars().take(4).collect();
    if !head.eq_ignore_ascii_case("that") {
        return None;
    }
    let after = &rest_trim[4..];
    if !after.is_empty() && !after.starts_with(char::is_whitespace) {
        return None;
    }
    let consumed = text.len() - after.trim_start().len();
    Some(consumed)
}

fn parse_bullet(markup: &str, date: NaiveDate) -> Result<Option<FactRecord>, BulletSkip> {
    let expanded =
        wikitext::expand_templates(markup).map_err(|e| BulletSkip::Malformed(e.to_string()))?;
    let inline = match wikitext::scan_inline(&expanded, true) {
        Ok(i) => i,
        Err(e @ MarkupError::UnbalancedBold) | Err(e @ MarkupError::Unterminated(_)) => {
            return Err(BulletSkip::Malformed(e.to_string()))
        }
    };
    let Some(prefix) = hook_prefix_len(&inline.text) else {
        return Ok(None);
    };
    let mut end = inline.text.len();
    let trimmed = inline.text.trim_end();
    if let Some(t) = trimmed.strip_suffix('?') {
        end = t.trim_end().len();
    }
    if prefix >= end {
        return Ok(None);
    }
    let text = inline.text[prefix..end].to_string();
    let in_text: Vec<_> = inline
        .bold
        .iter()
        .filter(|r| r.start >= prefix && r.end <= end)
        .collect();
    let Some(first) = in_text.first() else {
        return Err(BulletSkip::NoBold);
    };
    let bold_entity = inline.text[(*first).clone()].trim().to_string();
    if bold_entity.is_empty() {
        return Err(BulletSkip::NoBold);
    }
    let overlaps = |a: &std::ops::Range<usize>, b: &std::ops::Range<usize>| a.start < b.end && b.start < a.end;
    let article_title = inline
        .links
        .iter()
        .find(|l| overlaps(&l.span, first))
        .map(|l| l.target.clone())
        .unwrap_or_else(|| wikitext::normalize_title(&bold_entity));
    let links = inline
        .links
        .iter()
        .filter(|l| !overlaps(&l.span, first) && l.span.start >= prefix && l.span.end <= end)
        .map(|l| FactLink {
            title: l.target.clone(),
            anchor: inline.text[l.span.clone()].to_string(),
        })
        .filter(|l| !l.anchor.is_empty())
        .collect();
    Ok(Some(FactRecord {
        id: fact_id(date, &text),
        date,
        multi_bold: in_text.len() > 1,
        source_url: article_url(&article_title),
        article_title,
        article_text: String::new(),
        bold_entity,
        text,
        links,
    }))
}

/// Split a multi-day archive page on its date headings and parse every
/// section. Text before the first recognised heading is ignored.
pub fn parse_archive(raw: &str) -> ParsedPage {
    let mut sections: Vec<(NaiveDate, String)> = Vec::new();
    for line in raw.lines() {
        let t = line.trim();
        if let Some(date) = heading_date(t) {
            sections.push((date, String::new()));
            continue;
        }
        if let Some((_, body)) = sections.last_mut() {
            body.push_str(line);
            body.push('\n');
        }
    }
    let pages = par::map(&sections, |(date, body)| parse_dyk_section(body, *date));
    let mut out = ParsedPage::default();
    for p in pages {
        out.facts.extend(p.facts);
        out.report.merge(p.report);
    }
    out
}

/// A heading (`== ... ==`, `<h3>...</h3>`) containing a date.
fn heading_date(line: &str) -> Option<NaiveDate> {
    let inner = if line.starts_with('=') && line.ends_with('=') && line.len() > 2 {
        line.trim_matches('=').trim().to_string()
    } else {
        let lower = line.to_ascii_lowercase();
        if !(lower.starts_with("<h2") || lower.starts_with("<h3") || lower.starts_with("<h4")) {
            return None;
        }
        wikitext::scan_inline(line, false).ok()?.text
    };
    let cleaned = wikitext::scan_inline(&inner, false).ok()?.text;
    let tokens: Vec<&str> = cleaned
        .split(|c: char| c.is_whitespace() || c == '(' || c == ')')
        .filter(|t| !t.is_empty())
        .collect();
    for w in (1..=3).rev() {
        for window in tokens.windows(w) {
            if let Ok(d) = parse_date(&window.join(" ")) {
                return Some(d);
            }
        }
    }
    None
}

/// Keep facts with `start <= date <= end`, preserving order.
pub fn filter_facts(facts: &[FactRecord], window: &DateWindow) -> Vec<FactRecord> {
    let kept: Vec<_> = facts
        .iter()
        .filter(|f| window.contains(f.date))
        .cloned()
        .collect();
    log::info!("date window kept {} of {} facts", kept.len(), facts.len());
    kept
}

/// Sort by (date, id) and drop exact duplicates.
pub fn canonical_order(facts: &mut Vec<FactRecord>) {
    facts.sort_by(|a, b| (a.date, &a.id).cmp(&(b.date, &b.id)));
    facts.dedup_by(|a, b| a.id == b.id);
}

/// Write `facts.jsonl` sorted by (date, id).
pub fn save_facts(path: impl AsRef<Path>, facts: &[FactRecord]) -> Result<usize, CorpusError> {
    let mut sorted = facts.to_vec();
    canonical_order(&mut sorted);
    Ok(jsonl::write(path, &sorted)?)
}

pub fn load_facts(path: impl AsRef<Path>) -> Result<Vec<FactRecord>, CorpusError> {
    let facts: Vec<FactRecord> = jsonl::read(path)?;
    for f in &facts {
        f.validate()?;
    }
    Ok(facts)
}

/// Source of article bodies (wikitext or plain text) keyed by title.
pub trait ArticleSource: Send + Sync {
    fn fetch(&self, title: &str) -> Option<String>;
}

/// Articles stored as `<dir>/<Title_with_underscores>.wiki` or `.txt`.
pub struct DirArticleSource {
    dir: PathBuf,
}

impl DirArticleSource {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl ArticleSource for DirArticleSource {
    fn fetch(&self, title: &str) -> Option<String> {
        let stem = title.replace(' ', "_").replace('/', "%2F");
        ["wiki", "txt"].iter().find_map(|ext| {
            std::fs::read_to_string(self.dir.join(format!("{stem}.{ext}"))).ok()
        })
    }
}

/// Wraps a source with a minimum interval between fetches.
pub struct RateLimited<S> {
    inner: S,
    interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl<S> RateLimited<S> {
    pub fn new(inner: S, interval: Duration) -> Self {
        Self {
            inner,
            interval,
            last: Mutex::new(None),
        }
    }
}

impl<S: ArticleSource> ArticleSource for RateLimited<S> {
    fn fetch(&self, title: &str) -> Option<String> {
        {
            let mut last = self.last.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(t) = *last {
                let wait = self.interval.saturating_sub(t.elapsed());
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
            }
            *last = Some(Instant::now());
        }
        self.inner.fetch(title)
    }
}

/// Fill `article_text` for every fact whose article the source knows.
/// Each distinct title is fetched once. Returns the number of facts filled.
pub fn attach_articles(facts: &mut [FactRecord], source: &dyn ArticleSource) -> usize {
    let mut cache: BTreeMap<String, Option<String>> = BTreeMap::new();
    let mut filled = 0;
    for fact in facts.iter_mut() {
        let text = cache
            .entry(fact.article_title.clone())
            .or_insert_with(|| source.fetch(&fact.article_title).map(|raw| wikitext::clean_article(&raw)));
        if let Some(text) = text {
            fact.article_text = text.clone();
            filled += 1;
        }
    }
    filled
}
