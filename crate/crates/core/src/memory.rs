//! Carry-on and inline memories plus the on-disk episode record format.
//!
//! The inline memory is a preprocessed view of the document: one cell per
//! token holding the surface form, punctuation flags, an optional entity tag
//! from the annotation pipeline, and (at parse time) a bidirectional
//! recurrent encoding. The carry-on side consists of the distributed matrix
//! memory vector (stepped after every emitted action) and the symbolic
//! action history.

use std::fmt;
use std::path::Path;

use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::action::{Action, ActionKind};
use crate::error::{Error, Result};
use crate::nn::{gru_step, GruIds, NodeId, ParamId, ParameterStore, Tape};
use crate::ontology::OntologyDump;

/// Tokens treated as punctuation (excluded from entity tagging).
pub const PUNCT_TOKENS: [&str; 4] = [".", ",", "!", "?"];
/// Punctuation that ends a sentence and triggers a milestone update round.
pub const SENTENCE_FINAL_TOKENS: [&str; 3] = [".", "!", "?"];
/// Marker token separating paragraphs.
pub const PARAGRAPH_TOKEN: &str = "<p>";

/// Entity annotation attached to a token by the tagging pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityTag {
    /// Schema class of the mentioned entity.
    pub class: String,
    /// Canonical surface of the entity (usually the token itself).
    pub surface: String,
    /// For value mentions: the property this token provides a value for.
    pub property: Option<String>,
}

/// One token cell of the inline memory.
#[derive(Debug, Clone)]
pub struct InlineCell {
    pub surface: String,
    pub is_punct: bool,
    pub is_sentence_final: bool,
    pub is_paragraph_break: bool,
    pub entity: Option<EntityTag>,
    /// Note vector written by a notes-taking action, if any.
    pub note: Option<Vec<f64>>,
}

/// Outcome of moving the reading head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMove {
    /// Head now points at this position.
    Moved(usize),
    /// The document is exhausted.
    End,
}

/// Preprocessed document: token cells plus the reading head.
#[derive(Debug, Clone)]
pub struct InlineMemory {
    cells: Vec<InlineCell>,
    head: usize,
}

impl InlineMemory {
    /// Build cells from raw tokens and entity tags.
    pub fn preprocess(tokens: &[String], tags: &[TagEntry]) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyDocument);
        }
        let mut cells: Vec<InlineCell> = tokens
            .iter()
            .map(|t| InlineCell {
                surface: t.clone(),
                is_punct: PUNCT_TOKENS.contains(&t.as_str()),
                is_sentence_final: SENTENCE_FINAL_TOKENS.contains(&t.as_str()),
                is_paragraph_break: t == PARAGRAPH_TOKEN,
                entity: None,
                note: None,
            })
            .collect();
        for tag in tags {
            let cell = cells.get_mut(tag.index).ok_or_else(|| {
                Error::IndexError(format!(
                    "tag index {} out of bounds for {} tokens",
                    tag.index,
                    tokens.len()
                ))
            })?;
            if cell.is_punct {
                return Err(Error::IndexError(format!(
                    "tag at index {} targets punctuation token {:?}",
                    tag.index, cell.surface
                )));
            }
            cell.entity = Some(EntityTag {
                class: tag.class.clone(),
                surface: tag.surface.clone(),
                property: tag.property.clone(),
            });
        }
        Ok(InlineMemory { cells, head: 0 })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn head(&self) -> usize {
        self.head
    }

    pub fn cell(&self, pos: usize) -> Result<&InlineCell> {
        self.cells
            .get(pos)
            .ok_or_else(|| Error::IndexError(format!("cell {pos} out of bounds")))
    }

    pub fn current(&self) -> Result<&InlineCell> {
        self.cell(self.head)
    }

    pub fn at_end(&self) -> bool {
        self.head >= self.cells.len()
    }

    /// Move the head forward by one token.
    pub fn advance_head(&mut self) -> HeadMove {
        if self.head + 1 >= self.cells.len() {
            self.head = self.cells.len();
            HeadMove::End
        } else {
            self.head += 1;
            HeadMove::Moved(self.head)
        }
    }

    /// Move the head forward by `count` sentences or words. Lands on the
    /// token after the skipped span, or at the end.
    pub fn skip(&mut self, sentences: bool, count: usize) -> HeadMove {
        if sentences {
            let mut remaining = count;
            while self.head < self.cells.len() {
                let final_here = self.cells[self.head].is_sentence_final;
                self.head += 1;
                if final_here {
                    remaining -= 1;
                    if remaining == 0 {
                        break;
                    }
                }
            }
        } else {
            self.head = (self.head + count).min(self.cells.len());
        }
        if self.head >= self.cells.len() {
            self.head = self.cells.len();
            HeadMove::End
        } else {
            HeadMove::Moved(self.head)
        }
    }

    /// Store a note vector on the cell at `pos`.
    pub fn take_note(&mut self, pos: usize, note: Vec<f64>) -> Result<()> {
        let n = self.cells.len();
        let cell = self
            .cells
            .get_mut(pos)
            .ok_or_else(|| Error::IndexError(format!("note position {pos} out of bounds ({n} cells)")))?;
        cell.note = Some(note);
        Ok(())
    }

    pub fn cells(&self) -> &[InlineCell] {
        &self.cells
    }

    /// Number of sentence-final punctuation tokens.
    pub fn sentence_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_sentence_final).count()
    }

    /// 0-based index of the sentence containing `pos`; a sentence's final
    /// punctuation token belongs to that sentence.
    pub fn sentence_of(&self, pos: usize) -> usize {
        let mut s = 0usize;
        for cell in self.cells.iter().take(pos) {
            if cell.is_sentence_final {
                s += 1;
            }
        }
        s
    }
}

/// Per-token bidirectional recurrent encodings over embedded tokens.
/// Returns one node per token: the forward state at that token concatenated
/// with the backward state, giving a vector of twice the hidden width.
pub fn encode_inline(
    tape: &mut Tape,
    store: &ParameterStore,
    token_ids: &[usize],
    embed_token: ParamId,
    fw: GruIds,
    bw: GruIds,
    d_h: usize,
) -> Result<Vec<NodeId>> {
    if token_ids.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let embed_matrix = tape.param(store, embed_token);
    let embeds: Vec<NodeId> = token_ids
        .iter()
        .map(|&id| tape.row(embed_matrix, id))
        .collect::<Result<_>>()?;
    let mut fwd = Vec::with_capacity(embeds.len());
    let mut h = tape.zeros(d_h);
    for &x in &embeds {
        h = gru_step(tape, store, fw, x, h)?;
        fwd.push(h);
    }
    let mut bwd = Vec::with_capacity(embeds.len());
    let mut hb = tape.zeros(d_h);
    for &x in embeds.iter().rev() {
        hb = gru_step(tape, store, bw, x, hb)?;
        bwd.push(hb);
    }
    bwd.reverse();
    (0..embeds.len())
        .map(|i| tape.concat(&[fwd[i], bwd[i]]))
        .collect()
}

/// Distributed carry-on memory: a single state vector stepped by a gated
/// recurrent cell after every emitted action.
#[derive(Debug, Clone, Copy)]
pub struct MatrixMemory {
    state: NodeId,
    width: usize,
}

impl MatrixMemory {
    pub fn init(tape: &mut Tape, width: usize) -> Self {
        MatrixMemory { state: tape.zeros(width), width }
    }

    pub fn state(&self) -> NodeId {
        self.state
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Advance the memory with an input vector describing the action just
    /// taken and the content it touched.
    pub fn step(
        &mut self,
        tape: &mut Tape,
        store: &ParameterStore,
        gru: GruIds,
        input: NodeId,
    ) -> Result<()> {
        self.state = gru_step(tape, store, gru, input, self.state)?;
        Ok(())
    }
}

/// Symbolic record of emitted actions in time order.
#[derive(Debug, Clone, Default)]
pub struct ActionHistory {
    entries: Vec<(usize, Action)>,
}

impl ActionHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append an action at time `t`. Times must be strictly increasing.
    pub fn push(&mut self, t: usize, action: Action) -> Result<()> {
        if let Some((last, _)) = self.entries.last() {
            if t <= *last {
                return Err(Error::OrderError(format!(
                    "action time {t} not after previous time {last}"
                )));
            }
        }
        self.entries.push((t, action));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_kind(&self) -> Option<ActionKind> {
        self.entries.last().map(|(_, a)| a.kind())
    }

    pub fn kind_counts(&self) -> [usize; ActionKind::COUNT] {
        let mut counts = [0usize; ActionKind::COUNT];
        for (_, a) in &self.entries {
            counts[a.kind().index()] += 1;
        }
        counts
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, Action)> {
        self.entries.iter()
    }
}

/// Entity tag as stored in dataset files: `[index, class, surface]` with an
/// optional fourth element naming the property the token provides a value
/// for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagEntry {
    pub index: usize,
    pub class: String,
    pub surface: String,
    pub property: Option<String>,
}

impl Serialize for TagEntry {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let n = if self.property.is_some() { 4 } else { 3 };
        let mut seq = serializer.serialize_seq(Some(n))?;
        seq.serialize_element(&self.index)?;
        seq.serialize_element(&self.class)?;
        seq.serialize_element(&self.surface)?;
        if let Some(p) = &self.property {
            seq.serialize_element(p)?;
        }
        seq.end()
    }
}

struct TagEntryVisitor;

impl<'de> Visitor<'de> for TagEntryVisitor {
    type Value = TagEntry;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a [index, class, surface, property?] sequence")
    }

    fn visit_seq<A: SeqAccess<'de>>(
        self,
        mut seq: A,
    ) -> std::result::Result<TagEntry, A::Error> {
        use serde::de::Error as DeError;
        let index = seq
            .next_element()?
            .ok_or_else(|| A::Error::custom("missing tag index"))?;
        let class = seq
            .next_element()?
            .ok_or_else(|| A::Error::custom("missing tag class"))?;
        let surface = seq
            .next_element()?
            .ok_or_else(|| A::Error::custom("missing tag surface"))?;
        let property = seq.next_element()?;
        Ok(TagEntry { index, class, surface, property })
    }
}

impl<'de> Deserialize<'de> for TagEntry {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        deserializer.deserialize_seq(TagEntryVisitor)
    }
}

/// One dataset line: a tokenized document, its entity tags, and the
/// reference object-graph snapshot after each sentence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub tokens: Vec<String>,
    pub tags: Vec<TagEntry>,
    pub sentences: usize,
    pub snapshots: Vec<OntologyDump>,
    /// Which generator produced this record ("dynamic" or "report").
    pub world: String,
}

impl EpisodeRecord {
    /// Final reference snapshot (the complete target graph).
    pub fn final_snapshot(&self) -> Result<&OntologyDump> {
        self.snapshots
            .last()
            .ok_or_else(|| Error::StateError("episode record has no snapshots".into()))
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }

    /// Read a JSON-lines dataset file.
    pub fn read_jsonl(path: &Path) -> Result<Vec<Self>> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(Self::from_json_line)
            .collect()
    }

    /// Write a JSON-lines dataset file.
    pub fn write_jsonl(path: &Path, records: &[Self]) -> Result<()> {
        let mut out = String::new();
        for r in records {
            out.push_str(&r.to_json_line()?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{GruIds, ParameterStore, Tape};

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn preprocess_marks_punctuation_and_tags() {
        let tokens = toks(&["John", "moved", "."]);
        let tags = vec![TagEntry {
            index: 0,
            class: "Person".into(),
            surface: "John".into(),
            property: None,
        }];
        let mem = InlineMemory::preprocess(&tokens, &tags).unwrap();
        assert_eq!(mem.len(), 3);
        let c0 = mem.cell(0).unwrap();
        assert_eq!(c0.entity.as_ref().unwrap().class, "Person");
        assert!(!c0.is_punct);
        let c2 = mem.cell(2).unwrap();
        assert!(c2.is_punct && c2.is_sentence_final);
        assert_eq!(mem.sentence_count(), 1);
    }

    #[test]
    fn empty_document_is_rejected() {
        assert!(matches!(
            InlineMemory::preprocess(&[], &[]),
            Err(Error::EmptyDocument)
        ));
    }

    #[test]
    fn tag_on_punctuation_is_rejected() {
        let tokens = toks(&["Hi", "."]);
        let tags = vec![TagEntry {
            index: 1,
            class: "Person".into(),
            surface: ".".into(),
            property: None,
        }];
        assert!(InlineMemory::preprocess(&tokens, &tags).is_err());
    }

    #[test]
    fn head_advances_and_ends() {
        let tokens = toks(&["A", "B", ".", "C"]);
        let mut mem = InlineMemory::preprocess(&tokens, &[]).unwrap();
        assert_eq!(mem.head(), 0);
        assert_eq!(mem.advance_head(), HeadMove::Moved(1));
        assert_eq!(mem.advance_head(), HeadMove::Moved(2));
        assert!(mem.current().unwrap().is_sentence_final);
        assert_eq!(mem.advance_head(), HeadMove::Moved(3));
        assert_eq!(mem.advance_head(), HeadMove::End);
        assert!(mem.at_end());
    }

    #[test]
    fn skip_by_sentence_lands_after_final_punct() {
        let tokens = toks(&["A", "B", ".", "C", "D", ".", "E", "."]);
        let mut mem = InlineMemory::preprocess(&tokens, &[]).unwrap();
        assert_eq!(mem.skip(true, 1), HeadMove::Moved(3));
        assert_eq!(mem.skip(true, 2), HeadMove::End);
    }

    #[test]
    fn notes_attach_to_cells() {
        let tokens = toks(&["A", "B"]);
        let mut mem = InlineMemory::preprocess(&tokens, &[]).unwrap();
        mem.take_note(1, vec![1.0, 2.0]).unwrap();
        assert_eq!(mem.cell(1).unwrap().note.as_deref(), Some(&[1.0, 2.0][..]));
        assert!(mem.take_note(9, vec![0.0]).is_err());
    }

    #[test]
    fn history_requires_increasing_times() {
        let mut h = ActionHistory::new();
        h.push(0, Action::None).unwrap();
        h.push(2, Action::None).unwrap();
        assert!(matches!(h.push(2, Action::None), Err(Error::OrderError(_))));
        assert!(matches!(h.push(1, Action::None), Err(Error::OrderError(_))));
        assert_eq!(h.len(), 2);
        assert_eq!(h.kind_counts()[ActionKind::None.index()], 2);
    }

    fn tiny_store(d_emb: usize, d_h: usize, vocab: usize) -> (ParameterStore, GruIds, GruIds) {
        let mut store = ParameterStore::new();
        let mut rng = crate::rng::stream_rng(7, "test-enc", 0);
        store
            .add_matrix_glorot("embed.token", vocab, d_emb, &mut rng)
            .unwrap();
        let fw = GruIds::register(&mut store, "enc.fw", d_emb, d_h, &mut rng).unwrap();
        let bw = GruIds::register(&mut store, "enc.bw", d_emb, d_h, &mut rng).unwrap();
        (store, fw, bw)
    }

    #[test]
    fn encoding_width_is_twice_hidden() {
        let (store, fw, bw) = tiny_store(4, 3, 10);
        let embed = store.id("embed.token").unwrap();
        let mut tape = Tape::new();
        let enc = encode_inline(&mut tape, &store, &[1, 2, 3], embed, fw, bw, 3).unwrap();
        assert_eq!(enc.len(), 3);
        for &e in &enc {
            assert_eq!(tape.value(e).len(), 6);
        }
    }

    #[test]
    fn palindrome_with_shared_directions_is_mirror_symmetric() {
        // With identical forward/backward parameters, the backward state at
        // position t over a palindrome equals the forward state at the
        // mirrored position.
        let (store, fw, _) = tiny_store(4, 3, 10);
        let embed = store.id("embed.token").unwrap();
        let mut tape = Tape::new();
        let enc = encode_inline(&mut tape, &store, &[5, 2, 5], embed, fw, fw, 3).unwrap();
        let first = tape.value(enc[0]).to_vec();
        let last = tape.value(enc[2]).to_vec();
        // fwd part of first == bwd part of last, and vice versa
        for i in 0..3 {
            assert!((first[i] - last[3 + i]).abs() < 1e-12);
            assert!((first[3 + i] - last[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_parameters_give_zero_encodings() {
        let mut store = ParameterStore::new();
        store.add_matrix("embed.token", 5, 4).unwrap();
        let fw = GruIds::register_zeros(&mut store, "enc.fw", 4, 3).unwrap();
        let bw = GruIds::register_zeros(&mut store, "enc.bw", 4, 3).unwrap();
        let embed = store.id("embed.token").unwrap();
        let mut tape = Tape::new();
        let enc = encode_inline(&mut tape, &store, &[0, 1, 2], embed, fw, bw, 3).unwrap();
        for &e in &enc {
            assert!(tape.value(e).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn matrix_memory_starts_at_zero_and_steps() {
        let mut store = ParameterStore::new();
        let mut rng = crate::rng::stream_rng(7, "test-mm", 0);
        let gru = GruIds::register(&mut store, "ctrl", 2, 4, &mut rng).unwrap();
        let mut tape = Tape::new();
        let mut mm = MatrixMemory::init(&mut tape, 4);
        assert!(tape.value(mm.state()).iter().all(|v| *v == 0.0));
        let input = tape.constant(vec![1.0, -1.0]);
        mm.step(&mut tape, &store, gru, input).unwrap();
        assert_eq!(tape.value(mm.state()).len(), 4);
    }

    #[test]
    fn tag_entry_roundtrips_with_and_without_property() {
        let a = TagEntry { index: 3, class: "Item".into(), surface: "milk".into(), property: None };
        let b = TagEntry {
            index: 5,
            class: "Person".into(),
            surface: "F".into(),
            property: Some("Gender".into()),
        };
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, r#"[3,"Item","milk"]"#);
        assert_eq!(jb, r#"[5,"Person","F","Gender"]"#);
        assert_eq!(serde_json::from_str::<TagEntry>(&ja).unwrap(), a);
        assert_eq!(serde_json::from_str::<TagEntry>(&jb).unwrap(), b);
    }

    #[test]
    fn episode_record_roundtrips_as_json_line() {
        let rec = EpisodeRecord {
            tokens: toks(&["John", "moved", "."]),
            tags: vec![TagEntry {
                index: 0,
                class: "Person".into(),
                surface: "John".into(),
                property: None,
            }],
            sentences: 1,
            snapshots: vec![OntologyDump::default()],
            world: "dynamic".into(),
        };
        let line = rec.to_json_line().unwrap();
        assert!(!line.contains('\n'));
        let back = EpisodeRecord::from_json_line(&line).unwrap();
        assert_eq!(back.tokens, rec.tokens);
        assert_eq!(back.tags, rec.tags);
        assert_eq!(back.world, "dynamic");
    }

    #[test]
    fn jsonl_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let rec = EpisodeRecord {
            tokens: toks(&["Hi", "."]),
            tags: vec![],
            sentences: 1,
            snapshots: vec![OntologyDump::default()],
            world: "report".into(),
        };
        EpisodeRecord::write_jsonl(&path, &[rec.clone(), rec]).unwrap();
        let back = EpisodeRecord::read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].tokens, toks(&["Hi", "."]));
    }
}
