use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::NaiveDate;

use super::stub::StubGenerator;
use super::*;
use crate::corpus::{fact_id, FactLink};

fn fact(text: &str, bold: &str, links: &[(&str, &str)]) -> FactRecord {
    let date = NaiveDate::from_ymd_opt(2024, 3, 1).unwrap();
    FactRecord {
        id: fact_id(date, text),
        date,
        text: text.into(),
        bold_entity: bold.into(),
        article_title: bold.into(),
        article_text: String::new(),
        source_url: String::new(),
        multi_bold: false,
        links: links
            .iter()
            .map(|(t, a)| FactLink {
                title: t.to_string(),
                anchor: a.to_string(),
            })
            .collect(),
    }
}

fn waltz() -> FactRecord {
    fact(
        "that Margrit Waltz has ferried planes to points on five continents in 1994?",
        "Margrit Waltz",
        &[("Margrit Waltz", "Margrit Waltz"), ("Continent", "continents")],
    )
}

/// Replays canned responses in order, then repeats the last one.
struct Scripted {
    responses: Vec<Result<String, BackendError>>,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl Scripted {
    fn new(responses: Vec<Result<&str, BackendError>>) -> Self {
        Self {
            responses: responses.into_iter().map(|r| r.map(str::to_string)).collect(),
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }
}

impl Completer for Scripted {
    fn complete_prompt(&self, prompt: &str, _: usize) -> Result<String, BackendError> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        let i = self.calls.fetch_add(1, Ordering::SeqCst).min(self.responses.len() - 1);
        match &self.responses[i] {
            Ok(s) => Ok(s.clone()),
            Err(BackendError::Transport { endpoint, attempts, message }) => Err(BackendError::Transport {
                endpoint: endpoint.clone(),
                attempts: *attempts,
                message: message.clone(),
            }),
            Err(e) => Err(BackendError::Contract(e.to_string())),
        }
    }
}

fn transport() -> BackendError {
    BackendError::Transport {
        endpoint: "x".into(),
        attempts: 1,
        message: "reset".into(),
    }
}

#[test]
fn extract_json_tolerates_fences_prose_and_trailing_commas() {
    let v = extract_json("```json\n{\"a\": 1,}\n```").unwrap();
    assert_eq!(v["a"], 1);
    let v = extract_json("Sure! Here it is: {\"a\": [1, 2,], \"b\": \"x,}\"} hope that helps").unwrap();
    assert_eq!(v["b"], "x,}");
    assert!(extract_json("no json").is_err());
    assert!(extract_json("} {").is_err());
    assert!(extract_json("{\"a\": }").is_err());
}

#[test]
fn reliability_rejects_leaks_and_wrong_answers() {
    let f = waltz();
    let ok = QAItem::new(&f.id, Dimension::Reliability, "Who ferried planes?", "Margrit Waltz");
    assert_eq!(validate_qa(&ok, &f, None), Ok(()));
    let leak = QAItem::new(&f.id, Dimension::Reliability, "Did Margrit Waltz fly?", "Margrit Waltz");
    assert_eq!(validate_qa(&leak, &f, None), Err(RejectReason::AnswerLeak));
    let wrong = QAItem::new(&f.id, Dimension::Reliability, "Who flew?", "Waltz");
    assert_eq!(validate_qa(&wrong, &f, None), Err(RejectReason::WrongAnswer));
    let empty = QAItem::new(&f.id, Dimension::Reliability, "  ", "Margrit Waltz");
    assert_eq!(validate_qa(&empty, &f, None), Err(RejectReason::EmptyField));
}

#[test]
fn generality_answer_must_come_from_fact() {
    let f = waltz();
    let good = QAItem::new(&f.id, Dimension::Generality, "How many continents?", "five");
    assert_eq!(validate_qa(&good, &f, None), Ok(()));
    let bad = QAItem::new(&f.id, Dimension::Generality, "How many continents?", "5");
    assert_eq!(validate_qa(&bad, &f, None), Err(RejectReason::AnswerNotInFact));
}

#[test]
fn reliability_retries_until_valid() {
    let f = waltz();
    let gen = Scripted::new(vec![
        Ok("not json"),
        Ok(r#"{"question": {"text": "Is Margrit Waltz a pilot?", "answer": "Margrit Waltz"}}"#),
        Ok(r#"{"question": {"text": "Who has ferried planes?", "answer": "Margrit Waltz"}}"#),
    ]);
    let items = generate_questions(&f, Dimension::Reliability, &gen, None, RetryPolicy::immediate(3)).unwrap();
    assert_eq!(items[0].question, "Who has ferried planes?");
    assert_eq!(gen.calls.load(Ordering::SeqCst), 3);
    assert!(gen.prompts.lock().unwrap()[0].contains("\"bold_entity\": \"Margrit Waltz\""));
}

#[test]
fn exhausted_retries_report_last_reason() {
    let f = waltz();
    let gen = Scripted::new(vec![Ok(r#"{"question": {"text": "Q?", "answer": "Someone"}}"#)]);
    let err = generate_questions(&f, Dimension::Reliability, &gen, None, RetryPolicy::immediate(3)).unwrap_err();
    assert_eq!(err.reason_code(), "wrong_answer");
    assert_eq!(gen.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn transport_errors_are_retried_other_errors_are_not() {
    let f = waltz();
    let gen = Scripted::new(vec![
        Err(transport()),
        Ok(r#"{"question": {"text": "Who flew?", "answer": "Margrit Waltz"}}"#),
    ]);
    assert!(generate_questions(&f, Dimension::Reliability, &gen, None, RetryPolicy::immediate(3)).is_ok());
    let gen = Scripted::new(vec![Err(BackendError::Contract("bad".into()))]);
    let err = generate_questions(&f, Dimension::Reliability, &gen, None, RetryPolicy::immediate(3)).unwrap_err();
    assert!(matches!(err, QaGenError::Backend(_)));
    assert_eq!(gen.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn paraphrase_keeps_reliability_answer() {
    let f = waltz();
    let src = QAItem::new(&f.id, Dimension::Reliability, "Who has ferried planes?", "Margrit Waltz");
    let gen = Scripted::new(vec![Ok(
        r#"{"paraphrases": [{"question": "Which person ferried aircraft?", "answer": "M. Waltz"}, {"question": "b", "answer": "c"}]}"#,
    )]);
    let items = generate_questions(&f, Dimension::Paraphrase, &gen, Some(&src), RetryPolicy::immediate(1)).unwrap();
    assert_eq!(items.len(), 1);
    assert_eq!(items[0].answer, "Margrit Waltz");
    assert_eq!(items[0].question, "Which person ferried aircraft?");
    let err = generate_questions(&f, Dimension::Paraphrase, &gen, None, RetryPolicy::immediate(1)).unwrap_err();
    assert!(matches!(err, QaGenError::Precondition(_)));
}

#[test]
fn generality_picks_first_valid_alternative() {
    let f = waltz();
    let src = QAItem::new(&f.id, Dimension::Reliability, "Who has ferried planes?", "Margrit Waltz");
    let gen = Scripted::new(vec![Ok(r#"{"alternatives": [
        {"question": "Who?", "answer": "Margrit Waltz"},
        {"question": "When?", "answer": "1995"},
        {"question": "Which year?", "answer": 1994},
    ]}"#)]);
    let items = generate_questions(&f, Dimension::Generality, &gen, Some(&src), RetryPolicy::immediate(1)).unwrap();
    assert_eq!(items[0].answer, "1994");
}

#[test]
fn entity_description_skips_without_page_or_on_leak() {
    let gen = Scripted::new(vec![Ok(r#"{"description": "a vast landmass"}"#)]);
    let err = generate_entity_description("Continent", "", &gen, true, RetryPolicy::immediate(1)).unwrap_err();
    assert!(matches!(err, QaGenError::SkipFact(_)));
    assert_eq!(gen.calls.load(Ordering::SeqCst), 0);

    let d = generate_entity_description("Continent", "", &gen, false, RetryPolicy::immediate(1)).unwrap();
    assert_eq!(d.description, "a vast landmass");

    let leak = Scripted::new(vec![Ok(r#"{"description": "a CONTINENT of the world"}"#)]);
    let err = generate_entity_description("Continent", "page", &leak, true, RetryPolicy::immediate(3)).unwrap_err();
    assert!(matches!(err, QaGenError::SkipFact(_)));
    assert_eq!(leak.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn portability_and_locality_from_description() {
    let f = waltz();
    let rel = QAItem::new(&f.id, Dimension::Reliability, "Who has ferried planes to five continents?", "Margrit Waltz");
    let desc = EntityDescription {
        entity: "Continent".into(),
        description: "one of the very large landmasses".into(),
        source_page: "p".into(),
    };
    let (p, l) = generate_portability_and_locality(&f, Some(&desc), &rel, &StubGenerator, RetryPolicy::immediate(1)).unwrap();
    assert_eq!(p.answer, "Margrit Waltz");
    assert!(p.question.contains("very large landmasses"));
    assert!(!p.question.to_lowercase().contains("continent"), "{}", p.question);
    assert_eq!(l.answer, "Continent");
    assert_eq!(l.meta["entity"], "Continent");
    assert!(generate_portability_and_locality(&f, None, &rel, &StubGenerator, RetryPolicy::immediate(1)).is_err());
}

#[test]
fn stub_generator_satisfies_every_validator() {
    let f = waltz();
    let p = RetryPolicy::immediate(1);
    let rel = generate_questions(&f, Dimension::Reliability, &StubGenerator, None, p).unwrap().remove(0);
    assert_eq!(rel.answer, "Margrit Waltz");
    assert!(!rel.question.contains("Margrit"));
    let para = generate_questions(&f, Dimension::Paraphrase, &StubGenerator, Some(&rel), p).unwrap();
    assert_ne!(para[0].question, rel.question);
    let gen = generate_questions(&f, Dimension::Generality, &StubGenerator, Some(&rel), p).unwrap();
    assert_eq!(gen[0].answer, "1994");
    let train = generate_questions(&f, Dimension::Training, &StubGenerator, None, p).unwrap();
    assert!(!train.is_empty() && train.len() <= 3);
}

struct Pages;

impl ArticleSource for Pages {
    fn fetch(&self, title: &str) -> Option<String> {
        (title == "Continent").then(|| "A '''continent''' is any of several large landmasses. Seven are recognised.".to_string())
    }
}

fn pipeline() -> QuestionPipeline {
    let mut p = QuestionPipeline::new(Generators::uniform(Arc::new(StubGenerator)));
    p.policy = RetryPolicy::immediate(2);
    p.pages = Some(Arc::new(Pages));
    p
}

#[test]
fn pipeline_covers_dimensions_and_skips_missing_pages() {
    let facts = vec![
        waltz(),
        fact("that the Foo Bridge spans 300 metres?", "Foo Bridge", &[("River Bar", "River Bar")]),
        fact("that Quux is small?", "Quux", &[]),
    ];
    let run = pipeline().run(&facts, Vec::new());
    let dims = |id: &str| -> Vec<Dimension> {
        let mut d: Vec<_> = run.items.iter().filter(|q| q.fact_id == id).map(|q| q.dimension).collect();
        d.dedup();
        d
    };
    assert_eq!(
        dims(&facts[0].id),
        vec![
            Dimension::Reliability,
            Dimension::Generality,
            Dimension::Paraphrase,
            Dimension::Portability,
            Dimension::Locality,
            Dimension::Training
        ]
    );
    assert!(!dims(&facts[1].id).contains(&Dimension::Portability));
    let skipped: Vec<_> = run.dropped.iter().filter(|d| d.fact_id == facts[1].id).collect();
    assert_eq!(skipped.len(), 2);
    assert!(skipped.iter().all(|d| d.reason == "skip_fact"));
    assert!(revalidate(&run.items, &facts).is_empty());
}

#[test]
fn pipeline_is_resumable_and_deterministic() {
    let facts = vec![waltz(), fact("that Quux has 7 moons?", "Quux", &[])];
    let full = pipeline().run(&facts, Vec::new());
    let again = pipeline().run(&facts, Vec::new());
    assert_eq!(full.items, again.items);

    let partial: Vec<QAItem> = full.items.iter().filter(|q| q.dimension == Dimension::Reliability).cloned().collect();
    let resumed = pipeline().run(&facts, partial.clone());
    assert_eq!(resumed.items, full.items);
    assert_eq!(resumed.generated, full.generated - partial.len());

    let noop = pipeline().run(&facts, full.items.clone());
    assert_eq!(noop.generated, 0);
    assert_eq!(noop.items, full.items);
}

#[test]
fn revalidate_flags_duplicates_and_unknown_facts() {
    let f = waltz();
    let item = QAItem::new(&f.id, Dimension::Reliability, "Who flew?", "Margrit Waltz");
    let orphan = QAItem::new("nope", Dimension::Reliability, "Who flew?", "X");
    let bad = revalidate(&[item.clone(), item, orphan], &[f]);
    assert_eq!(bad.len(), 2);
    assert!(bad[0].1.contains("duplicate"));
}
