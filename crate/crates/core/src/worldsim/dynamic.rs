//! Dynamic household world: people move between rooms, pick items up and
//! put them down. State is revised over time, so reference snapshots both
//! gain and lose links.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::memory::{EpisodeRecord, TagEntry};
use crate::ontology::{DumpObject, OntologyDump};
use crate::rng::stream_rng;

pub const PERSON_POOL: [&str; 5] = ["Daniel", "John", "Mary", "Sandra", "Tina"];
pub const ITEM_POOL: [&str; 5] = ["apple", "football", "milk", "pajamas", "suitcase"];
pub const LOCATION_POOL: [&str; 5] = ["bathroom", "garden", "hallway", "kitchen", "office"];

/// Generation settings for the dynamic world.
#[derive(Debug, Clone)]
pub struct DynConfig {
    pub min_sentences: usize,
    pub max_sentences: usize,
}

impl Default for DynConfig {
    fn default() -> Self {
        DynConfig { min_sentences: 2, max_sentences: 10 }
    }
}

/// One narrated state change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum WorldEvent {
    Move { person: String, location: String },
    Grab { person: String, item: String },
    Drop { person: String, item: String },
}

/// Ground-truth world state, tracked independently of the rule engine.
#[derive(Debug, Default)]
struct WorldState {
    person_loc: BTreeMap<String, String>,
    /// item -> resting location (only when not carried)
    item_loc: BTreeMap<String, String>,
    /// item -> carrier
    carried_by: BTreeMap<String, String>,
}

impl WorldState {
    fn apply(&mut self, ev: &WorldEvent) {
        match ev {
            WorldEvent::Move { person, location } => {
                self.person_loc.insert(person.clone(), location.clone());
            }
            WorldEvent::Grab { person, item } => {
                self.item_loc.remove(item);
                self.carried_by.insert(item.clone(), person.clone());
            }
            WorldEvent::Drop { person, item } => {
                self.carried_by.remove(item);
                if let Some(loc) = self.person_loc.get(person) {
                    self.item_loc.insert(item.clone(), loc.clone());
                }
            }
        }
    }
}

/// First-mention bookkeeping; object indices are 1-based per class in
/// first-mention order.
#[derive(Debug, Default)]
struct MentionTable {
    order: BTreeMap<String, Vec<String>>,
}

impl MentionTable {
    fn mention(&mut self, class: &str, surface: &str) -> usize {
        let list = self.order.entry(class.to_string()).or_default();
        match list.iter().position(|s| s == surface) {
            Some(p) => p + 1,
            None => {
                list.push(surface.to_string());
                list.len()
            }
        }
    }

    fn index_of(&self, class: &str, surface: &str) -> usize {
        self.order
            .get(class)
            .and_then(|l| l.iter().position(|s| s == surface))
            .map(|p| p + 1)
            .expect("entity with state was mentioned")
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

fn pick_owned(rng: &mut ChaCha8Rng, pool: &[String]) -> String {
    pool[rng.gen_range(0..pool.len())].clone()
}

fn sample_event(state: &WorldState, rng: &mut ChaCha8Rng) -> WorldEvent {
    for _ in 0..64 {
        let r: f64 = rng.gen();
        if r < 0.5 {
            let person = pick(rng, &PERSON_POOL).to_string();
            let options: Vec<&str> = LOCATION_POOL
                .iter()
                .copied()
                .filter(|l| state.person_loc.get(&person).map(String::as_str) != Some(*l))
                .collect();
            let location = options[rng.gen_range(0..options.len())].to_string();
            return WorldEvent::Move { person, location };
        } else if r < 0.75 {
            let free: Vec<&str> = ITEM_POOL
                .iter()
                .copied()
                .filter(|i| !state.carried_by.contains_key(*i))
                .collect();
            if free.is_empty() {
                continue;
            }
            let person = pick(rng, &PERSON_POOL).to_string();
            let item = free[rng.gen_range(0..free.len())].to_string();
            return WorldEvent::Grab { person, item };
        } else {
            let carriers: Vec<&String> = state
                .carried_by
                .values()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if carriers.is_empty() {
                continue;
            }
            let person = carriers[rng.gen_range(0..carriers.len())].clone();
            let held: Vec<String> = state
                .carried_by
                .iter()
                .filter(|(_, p)| **p == person)
                .map(|(i, _)| i.clone())
                .collect();
            let item = pick_owned(rng, &held);
            return WorldEvent::Drop { person, item };
        }
    }
    // The move branch is always feasible, so this is unreachable in
    // practice; fall back to it anyway rather than loop forever.
    let person = pick(rng, &PERSON_POOL).to_string();
    let location = pick(rng, &LOCATION_POOL).to_string();
    WorldEvent::Move { person, location }
}

/// Render an event as tokens plus (relative index, class, surface) tags.
fn realize(ev: &WorldEvent, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<(usize, &'static str, String)>) {
    let t = rng.gen_range(0..3u8);
    let (words, tags): (Vec<&str>, Vec<(usize, &'static str, &str)>) = match ev {
        WorldEvent::Move { person, location } => {
            let verb = match t {
                0 => "moved",
                1 => "went",
                _ => "journeyed",
            };
            (
                vec![person, verb, "to", "the", location, "."],
                vec![(0, "Person", person.as_str()), (4, "Location", location.as_str())],
            )
        }
        WorldEvent::Grab { person, item } => match t {
            1 => (
                vec![person, "picked", "up", "the", item, "."],
                vec![(0, "Person", person.as_str()), (4, "Item", item.as_str())],
            ),
            other => (
                vec![person, if other == 0 { "grabbed" } else { "took" }, "the", item, "."],
                vec![(0, "Person", person.as_str()), (3, "Item", item.as_str())],
            ),
        },
        WorldEvent::Drop { person, item } => match t {
            1 => (
                vec![person, "put", "down", "the", item, "."],
                vec![(0, "Person", person.as_str()), (4, "Item", item.as_str())],
            ),
            other => (
                vec![person, if other == 0 { "dropped" } else { "discarded" }, "the", item, "."],
                vec![(0, "Person", person.as_str()), (3, "Item", item.as_str())],
            ),
        },
    };
    (
        words.into_iter().map(str::to_string).collect(),
        tags.into_iter().map(|(i, c, s)| (i, c, s.to_string())).collect(),
    )
}

/// Project the world state onto the mentioned entities as a graph dump.
fn snapshot(state: &WorldState, mentions: &MentionTable) -> OntologyDump {
    let mut objects = Vec::new();
    for (class, surfaces) in &mentions.order {
        for (i, surface) in surfaces.iter().enumerate() {
            let mut props = BTreeMap::new();
            props.insert("Name".to_string(), surface.clone());
            objects.push(DumpObject { class: class.clone(), index: i + 1, props });
        }
    }
    let mut links = Vec::new();
    for (person, loc) in &state.person_loc {
        links.push((
            "Person".to_string(),
            mentions.index_of("Person", person),
            "locate".to_string(),
            "Location".to_string(),
            mentions.index_of("Location", loc),
        ));
    }
    for (item, person) in &state.carried_by {
        links.push((
            "Person".to_string(),
            mentions.index_of("Person", person),
            "carry".to_string(),
            "Item".to_string(),
            mentions.index_of("Item", item),
        ));
    }
    for (item, loc) in &state.item_loc {
        links.push((
            "Item".to_string(),
            mentions.index_of("Item", item),
            "locate".to_string(),
            "Location".to_string(),
            mentions.index_of("Location", loc),
        ));
    }
    links.sort();
    OntologyDump { objects, links }
}

pub(crate) fn generate_episode(
    cfg: &DynConfig,
    rng: &mut ChaCha8Rng,
) -> (EpisodeRecord, Vec<WorldEvent>) {
    let n_sentences = rng.gen_range(cfg.min_sentences..=cfg.max_sentences);
    let mut state = WorldState::default();
    let mut mentions = MentionTable::default();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut snapshots = Vec::new();
    let mut events = Vec::new();
    for _ in 0..n_sentences {
        let ev = sample_event(&state, rng);
        let (words, rel_tags) = realize(&ev, rng);
        let offset = tokens.len();
        for (i, class, surface) in rel_tags {
            mentions.mention(class, &surface);
            tags.push(TagEntry {
                index: offset + i,
                class: class.to_string(),
                surface,
                property: None,
            });
        }
        tokens.extend(words);
        state.apply(&ev);
        snapshots.push(snapshot(&state, &mentions));
        events.push(ev);
    }
    (
        EpisodeRecord {
            tokens,
            tags,
            sentences: n_sentences,
            snapshots,
            world: "dynamic".into(),
        },
        events,
    )
}

/// Generate `n` episodes; episode `i` draws from an independent stream of
/// the base seed, so any prefix of the dataset is stable under growth.
pub fn generate_dynamic(cfg: &DynConfig, n: usize, seed: u64) -> Vec<EpisodeRecord> {
    (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, "dynamic-episode", i as u64);
            generate_episode(cfg, &mut rng).0
        })
        .collect()
}
