//! Offline question generator.
//!
//! Recognises each generation prompt by its opening words and answers with
//! a deterministic JSON object derived from the prompt's own fields. Output
//! passes validation for any well-formed fact, so pipelines and tests run
//! end to end without a hosted model.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::prompts;
use crate::backends::{BackendError, Completer};

#[derive(Debug, Clone, Copy, Default)]
pub struct StubGenerator;

impl Completer for StubGenerator {
    fn template(&self) -> &str {
        "{question}"
    }

    fn complete_prompt(&self, prompt: &str, _max_new_tokens: usize) -> Result<String, BackendError> {
        let value = respond(prompt).ok_or_else(|| {
            BackendError::Contract(format!(
                "stub generator does not recognise prompt starting {:?}",
                prompt.chars().take(40).collect::<String>()
            ))
        })?;
        Ok(serde_json::to_string_pretty(&value).expect("json values serialise"))
    }
}

fn opening(template: &str) -> &str {
    let end = template.find(['.', '\n']).unwrap_or(template.len());
    &template[..end]
}

fn respond(prompt: &str) -> Option<Value> {
    if prompt.starts_with(opening(prompts::RELIABILITY)) {
        let tail = after_last(prompt, "for this fact:\n")?;
        let ex: Value = serde_json::from_str(tail.trim()).ok()?;
        let text = ex.get("text")?.as_str()?;
        let bold = ex.get("bold_entity")?.as_str()?;
        Some(json!({"question": {"text": reliability_question(text, bold), "answer": bold}}))
    } else if prompt.starts_with(opening(prompts::PARAPHRASE)) {
        let (q, a) = question_answer(prompt)?;
        let body = lower_first(q.trim_end_matches('?'));
        let paraphrases: Vec<Value> = ["Can you tell me", "I would like to know", "Do you know"]
            .iter()
            .map(|lead| json!({"question": format!("{lead}: {body}?"), "answer": a}))
            .collect();
        Some(json!({"paraphrases": paraphrases}))
    } else if prompt.starts_with(opening(prompts::GENERALITY)) {
        let fact = line_value(prompt, "\nFact: ")?;
        let (_, a) = question_answer(prompt)?;
        let alternatives: Vec<Value> = aspects(fact, a)
            .into_iter()
            .take(3)
            .map(|word| {
                let masked = replace_ci(fact, &word, "___");
                json!({
                    "question": format!("Which word fills the blank in this statement: {}", strip_hook(&masked)),
                    "answer": word,
                })
            })
            .collect();
        Some(json!({"alternatives": alternatives}))
    } else if prompt.starts_with(opening(prompts::ENTITY_DESCRIPTION)) {
        let entity = line_value(prompt, "\nEntity name: ")?;
        let page = between(prompt, "\nWikipedia page: ", "\nEntity name: ").unwrap_or("");
        Some(json!({"description": describe(entity, page)}))
    } else if prompt.starts_with(opening(prompts::PORTABILITY)) {
        let description = between(prompt, "\nAlternative description: ", "\nEntity name: ")?.trim();
        let entity = between(prompt, "\nEntity name: ", "\nOriginal question: ")?.trim();
        let question = between(prompt, "\nOriginal question: ", "\n\nThe output should")?.trim();
        let question = replace_ci(question, entity, "that one");
        Some(json!({
            "question": format!("I keep hearing about {}. Related to that, {}", description.trim_end_matches('.'), lower_first(&question)),
        }))
    } else if prompt.starts_with(opening(prompts::LOCALITY)) {
        let entity = between(prompt, "\nEntity: ", "\nDescription: ")?.trim();
        let description = after_last(prompt, "\nDescription: ")?.trim();
        Some(json!({
            "question": format!("What is {}?", description.trim_end_matches('.')),
            "answer": entity,
        }))
    } else if prompt.starts_with(opening(prompts::TRAINING)) {
        let fact = after_last(prompt, "\nContext: ")?.trim();
        let questions: Vec<Value> = aspects(fact, "")
            .into_iter()
            .take(3)
            .map(|word| {
                let masked = replace_ci(fact, &word, "___");
                json!({"question": format!("Fill in the blank: {}", strip_hook(&masked)), "answer": word})
            })
            .collect();
        Some(json!({"questions": questions}))
    } else {
        None
    }
}

fn after_last<'a>(s: &'a str, marker: &str) -> Option<&'a str> {
    s.rfind(marker).map(|i| &s[i + marker.len()..])
}

fn between<'a>(s: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = s.rfind(start)? + start.len();
    let to = s[from..].find(end).map_or(s.len(), |i| from + i);
    Some(&s[from..to])
}

fn line_value<'a>(s: &'a str, marker: &str) -> Option<&'a str> {
    let rest = after_last(s, marker)?;
    Some(rest.split('\n').next().unwrap_or("").trim())
}

fn question_answer(prompt: &str) -> Option<(&str, &str)> {
    let q = between(prompt, "\nQuestion: ", "\nAnswer: ")?.trim();
    let a = after_last(prompt, "\nAnswer: ")?.trim();
    Some((q, a))
}

fn strip_hook(text: &str) -> String {
    let t = text.trim();
    let t = t.strip_prefix("that ").unwrap_or(t);
    let t = t.trim_end_matches('?');
    format!("{t}.")
}

fn lower_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if chars.clone().next().is_some_and(|n| n.is_lowercase()) => {
            c.to_lowercase().chain(chars).collect()
        }
        Some(c) => std::iter::once(c).chain(chars).collect(),
        None => String::new(),
    }
}

fn reliability_question(text: &str, bold: &str) -> String {
    let body = strip_hook(&replace_ci(text, bold, "this subject"));
    format!("Which subject is meant here: {}", body.trim_end_matches('.')).trim().to_string() + "?"
}

/// Words of `fact` usable as short answers other than `exclude`: numbers
/// first, then capitalised words, then long words, each in order of
/// appearance.
fn aspects(fact: &str, exclude: &str) -> Vec<String> {
    let words: Vec<&str> = fact
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty() && *w != "that")
        .filter(|w| exclude.is_empty() || !exclude.contains(*w))
        .collect();
    let mut ranked: Vec<(usize, usize, &str)> = words
        .iter()
        .enumerate()
        .filter_map(|(i, w)| {
            let rank = if w.chars().all(|c| c.is_ascii_digit()) {
                0
            } else if w.chars().next().is_some_and(char::is_uppercase) {
                1
            } else if w.chars().count() >= 6 {
                2
            } else {
                return None;
            };
            Some((rank, i, *w))
        })
        .collect();
    ranked.sort();
    let mut out: Vec<String> = Vec::new();
    for (_, _, w) in ranked {
        if !out.iter().any(|o| o == w) {
            out.push(w.to_string());
        }
    }
    out
}

fn describe(entity: &str, page: &str) -> String {
    let first_sentence = page
        .split(". ")
        .map(str::trim)
        .find(|s| s.split_whitespace().count() >= 4)
        .map(|s| replace_ci(s, entity, "it"));
    match first_sentence {
        Some(s) if !contains_ci(&s, entity) && !s.is_empty() => {
            format!("the subject of an article that opens: {}", s.trim_end_matches('.'))
        }
        _ => {
            let digest = Sha256::digest(entity.as_bytes());
            format!(
                "the entity catalogued under reference {:02x}{:02x}{:02x}{:02x}",
                digest[0], digest[1], digest[2], digest[3]
            )
        }
    }
}

fn contains_ci(haystack: &str, needle: &str) -> bool {
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

/// Replace every case-insensitive occurrence of `needle`.
fn replace_ci(haystack: &str, needle: &str, with: &str) -> String {
    if needle.is_empty() {
        return haystack.to_string();
    }
    let needle: Vec<char> = needle.chars().flat_map(char::to_lowercase).collect();
    let chars: Vec<(usize, char)> = haystack.char_indices().collect();
    let mut out = String::with_capacity(haystack.len());
    let mut i = 0;
    while i < chars.len() {
        let mut j = i;
        let mut k = 0;
        while k < needle.len() && j < chars.len() {
            let lowered: Vec<char> = chars[j].1.to_lowercase().collect();
            if needle[k..].starts_with(&lowered) {
                k += lowered.len();
                j += 1;
            } else {
                break;
            }
        }
        if k == needle.len() {
            out.push_str(with);
            i = j;
        } else {
            out.push(chars[i].1);
            i += 1;
        }
    }
    out
}
