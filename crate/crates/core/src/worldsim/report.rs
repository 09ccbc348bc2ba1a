//! Static incident-report world: one event, the people involved, and the
//! items they held. Graphs only grow — properties are written once and
//! links are never deleted.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::memory::{EpisodeRecord, TagEntry};
use crate::ontology::{DumpObject, OntologyDump};
use crate::rng::stream_rng;

pub const EVENT_TYPES: [&str; 4] = ["fire", "flood", "theft", "storm"];
pub const REPORT_PERSONS: [&str; 5] = ["Ann", "John", "Mary", "Peter", "Susan"];
pub const REPORT_ITEMS: [&str; 5] = ["camera", "laptop", "phone", "umbrella", "wallet"];

/// Gender surface forms as they appear in text, with the category label
/// they stand for.
pub const GENDER_SURFACES: [(&str, &str); 2] = [("F", "female"), ("M", "male")];

/// Generation settings for the report world.
#[derive(Debug, Clone)]
pub struct ReportConfig {
    pub min_persons: usize,
    pub max_persons: usize,
    pub min_items: usize,
    pub max_items: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { min_persons: 1, max_persons: 3, min_items: 1, max_items: 3 }
    }
}

/// Sample `k` distinct indices out of `0..n` (partial Fisher-Yates).
fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

struct SentencePiece {
    words: Vec<&'static str>,
    owned: Vec<(usize, String)>, // positions that hold dynamic words
    tags: Vec<(usize, &'static str, String, Option<&'static str>)>,
}

fn opening(rng: &mut ChaCha8Rng, ev_type: &str, date: &str) -> SentencePiece {
    match rng.gen_range(0..3u8) {
        0 => SentencePiece {
            words: vec!["A", "", "was", "reported", "on", "day", "", "."],
            owned: vec![(1, ev_type.to_string()), (6, date.to_string())],
            tags: vec![
                (1, "Event", ev_type.to_string(), Some("Type")),
                (6, "Event", date.to_string(), Some("Date")),
            ],
        },
        1 => SentencePiece {
            words: vec!["Officials", "confirmed", "a", "", "on", "day", "", "."],
            owned: vec![(3, ev_type.to_string()), (6, date.to_string())],
            tags: vec![
                (3, "Event", ev_type.to_string(), Some("Type")),
                (6, "Event", date.to_string(), Some("Date")),
            ],
        },
        _ => SentencePiece {
            words: vec!["A", "", "occurred", "on", "day", "", "."],
            owned: vec![(1, ev_type.to_string()), (5, date.to_string())],
            tags: vec![
                (1, "Event", ev_type.to_string(), Some("Type")),
                (5, "Event", date.to_string(), Some("Date")),
            ],
        },
    }
}

fn person_intro(rng: &mut ChaCha8Rng, name: &str, gender_surface: &str) -> SentencePiece {
    match rng.gen_range(0..3u8) {
        0 => SentencePiece {
            words: vec!["", ",", "", ",", "was", "involved", "."],
            owned: vec![(0, name.to_string()), (2, gender_surface.to_string())],
            tags: vec![
                (0, "Person", name.to_string(), None),
                (2, "Person", gender_surface.to_string(), Some("Gender")),
            ],
        },
        1 => SentencePiece {
            words: vec!["Witnesses", "named", "", ",", "", ",", "at", "the", "scene", "."],
            owned: vec![(2, name.to_string()), (4, gender_surface.to_string())],
            tags: vec![
                (2, "Person", name.to_string(), None),
                (4, "Person", gender_surface.to_string(), Some("Gender")),
            ],
        },
        _ => SentencePiece {
            words: vec!["", "(", "", ")", "was", "present", "."],
            owned: vec![(0, name.to_string()), (2, gender_surface.to_string())],
            tags: vec![
                (0, "Person", name.to_string(), None),
                (2, "Person", gender_surface.to_string(), Some("Gender")),
            ],
        },
    }
}

fn item_sentence(rng: &mut ChaCha8Rng, owner: &str, item: &str) -> SentencePiece {
    match rng.gen_range(0..3u8) {
        0 => SentencePiece {
            words: vec!["", "had", "a", "", "."],
            owned: vec![(0, owner.to_string()), (3, item.to_string())],
            tags: vec![
                (0, "Person", owner.to_string(), None),
                (3, "Item", item.to_string(), None),
            ],
        },
        1 => SentencePiece {
            words: vec!["", "carried", "a", "", "."],
            owned: vec![(0, owner.to_string()), (3, item.to_string())],
            tags: vec![
                (0, "Person", owner.to_string(), None),
                (3, "Item", item.to_string(), None),
            ],
        },
        _ => SentencePiece {
            words: vec!["A", "", "belonging", "to", "", "was", "recovered", "."],
            owned: vec![(1, item.to_string()), (4, owner.to_string())],
            tags: vec![
                (1, "Item", item.to_string(), None),
                (4, "Person", owner.to_string(), None),
            ],
        },
    }
}

fn piece_tokens(piece: &SentencePiece) -> Vec<String> {
    let mut words: Vec<String> = piece.words.iter().map(|w| w.to_string()).collect();
    for (pos, w) in &piece.owned {
        words[*pos] = w.clone();
    }
    words
}

fn generate_episode(cfg: &ReportConfig, rng: &mut ChaCha8Rng) -> EpisodeRecord {
    let ev_type = EVENT_TYPES[rng.gen_range(0..EVENT_TYPES.len())];
    let date = rng.gen_range(1..=28u32).to_string();
    let n_persons = rng.gen_range(cfg.min_persons..=cfg.max_persons);
    let n_items = rng.gen_range(cfg.min_items..=cfg.max_items);
    let person_idx = sample_distinct(rng, REPORT_PERSONS.len(), n_persons);
    let item_idx = sample_distinct(rng, REPORT_ITEMS.len(), n_items);
    let persons: Vec<&str> = person_idx.iter().map(|&i| REPORT_PERSONS[i]).collect();
    let genders: Vec<(&str, &str)> = (0..n_persons)
        .map(|_| GENDER_SURFACES[rng.gen_range(0..2)])
        .collect();
    let items: Vec<&str> = item_idx.iter().map(|&i| REPORT_ITEMS[i]).collect();
    let owners: Vec<usize> = (0..n_items).map(|_| rng.gen_range(0..n_persons)).collect();

    // cumulative reference state
    let mut objects: Vec<DumpObject> = Vec::new();
    let mut links: Vec<(String, usize, String, String, usize)> = Vec::new();
    let push_snapshot = |objects: &Vec<DumpObject>,
                         links: &Vec<(String, usize, String, String, usize)>,
                         snapshots: &mut Vec<OntologyDump>| {
        let mut objs = objects.clone();
        objs.sort_by(|a, b| (a.class.as_str(), a.index).cmp(&(b.class.as_str(), b.index)));
        let mut lks = links.clone();
        lks.sort();
        snapshots.push(OntologyDump { objects: objs, links: lks });
    };

    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut snapshots = Vec::new();

    let emit = |piece: SentencePiece,
                    tokens: &mut Vec<String>,
                    tags: &mut Vec<TagEntry>| {
        let offset = tokens.len();
        for (i, class, surface, prop) in &piece.tags {
            tags.push(TagEntry {
                index: offset + i,
                class: class.to_string(),
                surface: surface.clone(),
                property: prop.map(str::to_string),
            });
        }
        tokens.extend(piece_tokens(&piece));
    };

    // opening sentence
    emit(opening(rng, ev_type, &date), &mut tokens, &mut tags);
    let mut event_props = BTreeMap::new();
    event_props.insert("Type".to_string(), ev_type.to_string());
    event_props.insert("Date".to_string(), date.clone());
    objects.push(DumpObject { class: "Event".into(), index: 1, props: event_props });
    push_snapshot(&objects, &links, &mut snapshots);

    // person introductions
    for (k, name) in persons.iter().enumerate() {
        let (surface, label) = genders[k];
        emit(person_intro(rng, name, surface), &mut tokens, &mut tags);
        let mut props = BTreeMap::new();
        props.insert("Name".to_string(), name.to_string());
        props.insert("Gender".to_string(), label.to_string());
        objects.push(DumpObject { class: "Person".into(), index: k + 1, props });
        links.push(("Event".into(), 1, "involve".into(), "Person".into(), k + 1));
        push_snapshot(&objects, &links, &mut snapshots);
    }

    // item sentences
    for (j, item) in items.iter().enumerate() {
        let owner = owners[j];
        emit(item_sentence(rng, persons[owner], item), &mut tokens, &mut tags);
        let mut props = BTreeMap::new();
        props.insert("Name".to_string(), item.to_string());
        objects.push(DumpObject { class: "Item".into(), index: j + 1, props });
        links.push(("Person".into(), owner + 1, "hold".into(), "Item".into(), j + 1));
        push_snapshot(&objects, &links, &mut snapshots);
    }

    EpisodeRecord {
        tokens,
        tags,
        sentences: 1 + n_persons + n_items,
        snapshots,
        world: "report".into(),
    }
}

/// Generate `n` report episodes on independent seed streams.
pub fn generate_report(cfg: &ReportConfig, n: usize, seed: u64) -> Vec<EpisodeRecord> {
    (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, "report-episode", i as u64);
            generate_episode(cfg, &mut rng)
        })
        .collect()
}
