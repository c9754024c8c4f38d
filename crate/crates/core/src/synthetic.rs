//! Deterministic synthetic facts and QA items for fixtures and demos.

use chrono::{Days, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{article_url, fact_id, FactLink, FactRecord};
use crate::qagen::{Dimension, QAItem};

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mir", "ven", "tas", "dor", "qui", "bel", "zan", "rho", "pet", "ul", "gra", "nim", "os", "fey",
];
const PLACES: &[&str] = &["Norvale", "Ostrakia", "Pellmouth", "Quarry Bend", "Saltmere", "Vinterhal"];
const ROLES: &[&str] = &["lighthouse", "glacier", "opera", "beetle", "chess opening", "ferry"];

fn word(rng: &mut ChaCha8Rng, parts: usize) -> String {
    let mut w: String = (0..parts).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
    w[..1].make_ascii_uppercase();
    w
}

/// `n` facts, one per day from 2023-01-01, each with a unique invented
/// entity, a year and a place, plus one non-bold link.
pub fn facts(n: usize, seed: u64) -> Vec<FactRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let entity = format!("{} {}", word(&mut rng, 2), word(&mut rng, 3));
        if !seen.insert(entity.clone()) {
            continue;
        }
        let place = *PLACES.choose(&mut rng).unwrap();
        let role = *ROLES.choose(&mut rng).unwrap();
        let year = rng.random_range(1700..2000);
        let date = start.checked_add_days(Days::new(out.len() as u64)).unwrap();
        let text = format!("{entity} restored the {role} of {place} in {year}");
        out.push(FactRecord {
            id: fact_id(date, &text),
            date,
            article_text: format!(
                "{entity} is a figure associated with {place}. In {year} {entity} restored the local {role}."
            ),
            source_url: article_url(&entity),
            article_title: entity.clone(),
            bold_entity: entity,
            text,
            multi_bold: false,
            links: vec![FactLink {
                title: place.to_string(),
                anchor: place.to_string(),
            }],
        });
    }
    out
}

/// One Reliability item per fact, answered by the bold entity.
pub fn reliability(facts: &[FactRecord]) -> Vec<QAItem> {
    facts
        .iter()
        .map(|f| {
            let q = f.text.replacen(&f.bold_entity, "Who", 1);
            QAItem::new(&f.id, Dimension::Reliability, &format!("{q}?"), &f.bold_entity)
        })
        .collect()
}

/// One Locality item per fact about its linked place, answerable without
/// the injected fact.
pub fn locality(facts: &[FactRecord]) -> Vec<QAItem> {
    facts
        .iter()
        .map(|f| {
            let place = f.links.first().map_or("the place", |l| l.anchor.as_str());
            QAItem::new(
                &f.id,
                Dimension::Locality,
                &format!("Fact {}: which town appears in the record of {place}?", &f.id[..8]),
                place,
            )
        })
        .collect()
}

/// Archive wikitext listing `facts` under date headings, the form
/// `corpus::parse_archive` reads.
pub fn archive_wikitext(facts: &[FactRecord]) -> String {
    let mut out = String::new();
    let mut last = None;
    for f in facts {
        if last != Some(f.date) {
            out.push_str(&format!("=== {} ===\n", f.date.format("%Y-%m-%d")));
            last = Some(f.date);
        }
        let rest = &f.text[f.bold_entity.len()..];
        let rest = match f.links.first() {
            Some(l) => rest.replacen(&l.anchor, &format!("[[{}]]", l.anchor), 1),
            None => rest.to_string(),
        };
        out.push_str(&format!("* ... that '''[[{}]]'''{rest}?\n", f.bold_entity));
    }
    out
}

/// Write every article body as `<dir>/<Title>.wiki`, plus a short page for
/// each place.
pub fn write_articles(facts: &[FactRecord], dir: &std::path::Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for f in facts {
        let stem = f.article_title.replace(' ', "_");
        std::fs::write(dir.join(format!("{stem}.wiki")), &f.article_text)?;
    }
    for place in PLACES {
        let stem = place.replace(' ', "_");
        let body = format!("'''{place}''' is a coastal town known for its harbour and market.");
        std::fs::write(dir.join(format!("{stem}.wiki")), body)?;
    }
    Ok(())
}
