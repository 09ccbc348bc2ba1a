//! Candidate enumeration and scoring: turns the current parse state into a
//! probability distribution over the discrete actions available next.
//!
//! Scoring uses one score family per class for creating objects, one per
//! class for attaching to existing objects, and a shared do-nothing score;
//! milestone object selection reuses the attach families (with mention-free
//! matching features). Slot choice, link edits and category labels have their
//! own heads. All distributions come out of one clipped softmax, so every
//! candidate keeps nonzero probability.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::action::{Action, SlotRef};
use crate::error::{Error, Result};
use crate::memory::EntityTag;
use crate::model::{Model, ANALYZER_DIM, MATCH_FEAT_DIM};
use crate::nn::{concat_features, dense, mlp_scalar, NodeId, Tape};
use crate::ontology::{ObjectInstance, ObjectRef, OntologyGraph, PropertyKind, Schema, NAME_PROP};

/// Rows of the link-operator embedding table.
pub const OP_ADD: usize = 0;
pub const OP_DEL: usize = 1;
pub const OP_HOLD: usize = 2;

/// Length of the longest common substring of two strings (contiguous).
pub fn longest_common_substring(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut best = 0;
    let mut prev = vec![0usize; b.len() + 1];
    for &ca in &a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, &cb) in b.iter().enumerate() {
            if ca == cb {
                cur[j + 1] = prev[j] + 1;
                best = best.max(cur[j + 1]);
            }
        }
        prev = cur;
    }
    best
}

/// How recently an object was touched, scaled to [0, 1]; 1 means this step.
pub fn recency_feature(obj: &ObjectInstance, now: u64, cap: usize) -> f64 {
    if cap == 0 {
        return 0.0;
    }
    let age = now.saturating_sub(obj.last_touched).min(cap as u64) as f64;
    1.0 - age / cap as f64
}

/// Mention/object compatibility block: [exact name match, longest common
/// substring over max length, class hint agreement, recency]. Without a
/// mention (milestone selection) everything except recency is zero.
pub fn matching_features(
    obj: &ObjectInstance,
    mention: Option<&EntityTag>,
    now: u64,
    cap: usize,
) -> [f64; MATCH_FEAT_DIM] {
    let mut f = [0.0; MATCH_FEAT_DIM];
    if let Some(m) = mention {
        if let Some(name) = obj.prop_value(NAME_PROP) {
            if name == m.surface {
                f[0] = 1.0;
            }
            let max_len = name.chars().count().max(m.surface.chars().count());
            if max_len > 0 {
                f[1] = longest_common_substring(name, &m.surface) as f64 / max_len as f64;
            }
        }
        if m.class == obj.class {
            f[2] = 1.0;
        }
    }
    f[3] = recency_feature(obj, now, cap);
    f
}

/// Actions available at a tagged head position: create a fresh object,
/// attach to an existing one, or do nothing. With masking on, creation and
/// attachment are limited to the mention's class; doing nothing always stays
/// on the menu.
pub fn token_candidates(
    schema: &Schema,
    graph: &OntologyGraph,
    tag: &EntityTag,
    masking: bool,
) -> Vec<Action> {
    let mut out = Vec::new();
    for class in schema.classes() {
        if masking && class.name != tag.class {
            continue;
        }
        out.push(Action::New {
            class: class.name.clone(),
        });
    }
    for class in schema.classes() {
        if masking && class.name != tag.class {
            continue;
        }
        for o in graph.objects_of(&class.name) {
            out.push(Action::Assign {
                target: o.object_ref(),
            });
        }
    }
    out.push(Action::None);
    out
}

/// Slots of an object that can currently be edited at a milestone: category
/// properties that are not locked, and link families with at least one
/// possible addition or (if mutable) deletion. Text properties are written
/// at their mention, never at a milestone.
pub fn available_slots(
    schema: &Schema,
    graph: &OntologyGraph,
    r: &ObjectRef,
) -> Result<Vec<SlotRef>> {
    let class = schema.class(&r.class)?;
    let obj = graph.object(r)?;
    let mut slots = Vec::new();
    for p in &class.properties {
        if let PropertyKind::Category(_) = p.kind {
            let locked = obj.prop(&p.name).map_or(false, |s| s.locked);
            if !locked {
                slots.push(SlotRef::Prop(p.name.clone()));
            }
        }
    }
    for l in &class.links {
        let deletable = l.mutable && !graph.links_from(r, &l.name).is_empty();
        let addable = graph
            .objects_of(&l.target)
            .iter()
            .any(|tgt| !graph.has_link(r, &l.name, &tgt.object_ref()));
        if addable || deletable {
            slots.push(SlotRef::Link(l.name.clone()));
        }
    }
    Ok(slots)
}

/// Milestone round openers: every object that has at least one editable slot,
/// plus the round-ending no-selection option.
pub fn milestone_object_candidates(
    schema: &Schema,
    graph: &OntologyGraph,
) -> Result<Vec<Action>> {
    let mut out = Vec::new();
    for class in schema.classes() {
        for o in graph.objects_of(&class.name) {
            let r = o.object_ref();
            if !available_slots(schema, graph, &r)?.is_empty() {
                out.push(Action::SelectObject { target: Some(r) });
            }
        }
    }
    out.push(Action::SelectObject { target: None });
    Ok(out)
}

/// Slot choices for a selected object, ending with the no-slot option.
pub fn slot_candidates(
    schema: &Schema,
    graph: &OntologyGraph,
    r: &ObjectRef,
) -> Result<Vec<Action>> {
    let mut out: Vec<Action> = available_slots(schema, graph, r)?
        .into_iter()
        .map(|s| Action::SelectSlot { slot: Some(s) })
        .collect();
    out.push(Action::SelectSlot { slot: None });
    Ok(out)
}

/// Edits available for a chosen slot. Category slots enumerate their labels.
/// Link slots enumerate additions to currently unlinked targets, deletions of
/// present links when the family is mutable, and a final keep-as-is option.
pub fn value_candidates(
    schema: &Schema,
    graph: &OntologyGraph,
    src: &ObjectRef,
    slot: &SlotRef,
) -> Result<Vec<Action>> {
    let class = schema.class(&src.class)?;
    match slot {
        SlotRef::Prop(name) => {
            let def = class.property(name).ok_or_else(|| {
                Error::Schema(format!("class {} has no property {name}", src.class))
            })?;
            match &def.kind {
                PropertyKind::Category(labels) => Ok(labels
                    .iter()
                    .map(|l| Action::UpdateCategory {
                        target: src.clone(),
                        prop: name.clone(),
                        label: l.clone(),
                    })
                    .collect()),
                _ => Err(Error::StateError(format!(
                    "property {name} holds copied text and is written at its mention"
                ))),
            }
        }
        SlotRef::Link(name) => {
            let def = class.link(name).ok_or_else(|| {
                Error::Schema(format!("class {} has no link {name}", src.class))
            })?;
            let mut out = Vec::new();
            for tgt in graph.objects_of(&def.target) {
                let d = tgt.object_ref();
                if !graph.has_link(src, name, &d) {
                    out.push(Action::AddLink {
                        src: src.clone(),
                        link: name.clone(),
                        dst: d,
                    });
                }
            }
            if def.mutable {
                for triple in graph.links_from(src, name) {
                    out.push(Action::DelLink {
                        src: src.clone(),
                        link: name.clone(),
                        dst: triple.dst,
                    });
                }
            }
            out.push(Action::HoldLink {
                src: src.clone(),
                link: name.clone(),
            });
            Ok(out)
        }
    }
}

/// Context for one scored decision.
pub struct ScoreInputs<'a> {
    /// Fused view of the head encoding and the carry-on memory state.
    pub ctx: NodeId,
    /// Symbolic history feature block (fixed width).
    pub analyzer: &'a [f64],
    /// Mention under the head, when scoring at a tagged token.
    pub mention: Option<&'a EntityTag>,
    /// Current step counter, for recency features.
    pub now: u64,
    /// Milestone rounds: the object picked by the select step, with its
    /// embedding node.
    pub selected: Option<(ObjectRef, NodeId)>,
}

/// A scored candidate list: the softmax node, the raw pre-clip scores, and
/// the fresh virtual-object vectors built for creation candidates (the chosen
/// one becomes the created object's embedding).
pub struct ScoredCandidates {
    pub probs: NodeId,
    pub scores: Vec<f64>,
    pub virt: BTreeMap<String, NodeId>,
}

/// The prototype vector a New candidate would instantiate, conditioned on
/// the current context.
pub fn virtual_object_vector(
    model: &Model,
    tape: &mut Tape,
    class: &str,
    ctx: NodeId,
) -> Result<NodeId> {
    let ids = model
        .handles
        .virt
        .get(class)
        .ok_or_else(|| Error::Schema(format!("no virtual-object map for class {class}")))?;
    let v = dense(tape, &model.store, *ids, ctx)?;
    Ok(tape.tanh(v))
}

/// Fuse the inline encoding under the head with the carry-on memory state.
pub fn context_vector(
    model: &Model,
    tape: &mut Tape,
    inline: NodeId,
    carry: NodeId,
) -> Result<NodeId> {
    let x = tape.concat(&[inline, carry])?;
    let c = dense(tape, &model.store, model.handles.ctx, x)?;
    Ok(tape.tanh(c))
}

/// Refresh an object embedding after the object was touched.
pub fn update_object_embedding(
    model: &Model,
    tape: &mut Tape,
    obj: NodeId,
    ctx: NodeId,
) -> Result<NodeId> {
    let x = tape.concat(&[obj, ctx])?;
    let u = dense(tape, &model.store, model.handles.obj_update, x)?;
    Ok(tape.tanh(u))
}

fn object_node(obj_nodes: &BTreeMap<ObjectRef, NodeId>, r: &ObjectRef) -> Result<NodeId> {
    obj_nodes
        .get(r)
        .copied()
        .ok_or_else(|| Error::StateError(format!("object {r} has no embedding node")))
}

fn selected<'a>(inp: &'a ScoreInputs<'_>) -> Result<(&'a ObjectRef, NodeId)> {
    match &inp.selected {
        Some((r, n)) => Ok((r, *n)),
        None => Err(Error::StateError(
            "slot and edit scoring require a selected object".into(),
        )),
    }
}

fn assign_score(
    model: &Model,
    tape: &mut Tape,
    graph: &OntologyGraph,
    obj_nodes: &BTreeMap<ObjectRef, NodeId>,
    target: &ObjectRef,
    mention: Option<&EntityTag>,
    inp: &ScoreInputs,
) -> Result<NodeId> {
    let obj = graph.object(target)?;
    let node = object_node(obj_nodes, target)?;
    let ids = model
        .handles
        .score_assign
        .get(&target.class)
        .ok_or_else(|| Error::Schema(format!("no attach score family for class {}", target.class)))?;
    let m = matching_features(obj, mention, inp.now, model.dims.recency_cap);
    let mut feats = Vec::with_capacity(ANALYZER_DIM + MATCH_FEAT_DIM);
    feats.extend_from_slice(inp.analyzer);
    feats.extend_from_slice(&m);
    let x = concat_features(tape, &[node, inp.ctx], &feats)?;
    mlp_scalar(tape, &model.store, *ids, x)
}

fn none_score(model: &Model, tape: &mut Tape, inp: &ScoreInputs) -> Result<NodeId> {
    let x = concat_features(tape, &[inp.ctx], inp.analyzer)?;
    mlp_scalar(tape, &model.store, model.handles.score_none, x)
}

fn link_score(
    model: &Model,
    tape: &mut Tape,
    graph: &OntologyGraph,
    obj_nodes: &BTreeMap<ObjectRef, NodeId>,
    inp: &ScoreInputs,
    op: usize,
    dst: Option<&ObjectRef>,
) -> Result<NodeId> {
    let (_, src_node) = selected(inp)?;
    let (tgt_node, rec) = match dst {
        Some(d) => (
            object_node(obj_nodes, d)?,
            recency_feature(graph.object(d)?, inp.now, model.dims.recency_cap),
        ),
        None => (tape.zeros(model.dims.d_obj), 0.0),
    };
    let table = tape.param(&model.store, model.handles.embed_linkop);
    let op_emb = tape.row(table, op)?;
    let x = concat_features(tape, &[src_node, inp.ctx, tgt_node, op_emb], &[rec])?;
    mlp_scalar(tape, &model.store, model.handles.link2what, x)
}

/// Score a candidate list and softmax it into a distribution. Handles head
/// actions (create / attach / nothing), milestone selection, slot choice and
/// link edits; category labels go through [`category_distribution`] instead.
pub fn score_candidates(
    model: &Model,
    tape: &mut Tape,
    graph: &OntologyGraph,
    obj_nodes: &BTreeMap<ObjectRef, NodeId>,
    candidates: &[Action],
    inp: &ScoreInputs,
) -> Result<ScoredCandidates> {
    if candidates.is_empty() {
        return Err(Error::StateError("no candidates to score".into()));
    }
    if inp.analyzer.len() != ANALYZER_DIM {
        return Err(Error::ConfigError(format!(
            "analyzer feature block must have {ANALYZER_DIM} entries, got {}",
            inp.analyzer.len()
        )));
    }
    let store = &model.store;
    let mut virt: BTreeMap<String, NodeId> = BTreeMap::new();
    let mut score_nodes = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let s = match cand {
            Action::New { class } => {
                let v = match virt.get(class) {
                    Some(v) => *v,
                    None => {
                        let v = virtual_object_vector(model, tape, class, inp.ctx)?;
                        virt.insert(class.clone(), v);
                        v
                    }
                };
                let ids = model.handles.score_new.get(class).ok_or_else(|| {
                    Error::Schema(format!("no creation score family for class {class}"))
                })?;
                let x = concat_features(tape, &[v, inp.ctx], inp.analyzer)?;
                mlp_scalar(tape, store, *ids, x)?
            }
            Action::Assign { target } => {
                assign_score(model, tape, graph, obj_nodes, target, inp.mention, inp)?
            }
            Action::None => none_score(model, tape, inp)?,
            Action::SelectObject { target: Some(t) } => {
                assign_score(model, tape, graph, obj_nodes, t, None, inp)?
            }
            Action::SelectObject { target: None } => none_score(model, tape, inp)?,
            Action::SelectSlot { slot } => {
                let (_, sel_node) = selected(inp)?;
                let row = match slot {
                    Some(s) => model.slot_row(s.name())?,
                    None => model.none_slot_row(),
                };
                let table = tape.param(store, model.handles.embed_slot);
                let emb = tape.row(table, row)?;
                let x = tape.concat(&[sel_node, inp.ctx, emb])?;
                mlp_scalar(tape, store, model.handles.update_x, x)?
            }
            Action::AddLink { dst, .. } => {
                link_score(model, tape, graph, obj_nodes, inp, OP_ADD, Some(dst))?
            }
            Action::DelLink { dst, .. } => {
                link_score(model, tape, graph, obj_nodes, inp, OP_DEL, Some(dst))?
            }
            Action::HoldLink { .. } => {
                link_score(model, tape, graph, obj_nodes, inp, OP_HOLD, None)?
            }
            other => {
                return Err(Error::StateError(format!(
                    "{other} cannot be scored as a policy candidate"
                )))
            }
        };
        score_nodes.push(s);
    }
    let scores = score_nodes
        .iter()
        .map(|n| tape.scalar(*n))
        .collect::<Result<Vec<f64>>>()?;
    let stacked = tape.concat(&score_nodes)?;
    let probs = tape.softmax(stacked)?;
    Ok(ScoredCandidates {
        probs,
        scores,
        virt,
    })
}

/// Distribution over the labels of a category property, returned together
/// with the raw label scores feeding it. Label order matches
/// [`value_candidates`] for the same slot.
pub fn category_distribution(
    model: &Model,
    tape: &mut Tape,
    class: &str,
    prop: &str,
    obj: NodeId,
    ctx: NodeId,
) -> Result<(NodeId, Vec<f64>)> {
    let ids = model
        .handles
        .cat_heads
        .get(&(class.to_string(), prop.to_string()))
        .ok_or_else(|| Error::Schema(format!("no label head for {class}.{prop}")))?;
    let x = tape.concat(&[obj, ctx])?;
    let logits = dense(tape, &model.store, *ids, x)?;
    let scores = tape.value(logits).to_vec();
    let probs = tape.softmax(logits)?;
    Ok((probs, scores))
}

/// Index of the largest probability; ties go to the first occurrence.
pub fn greedy_index(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

/// Draw an index proportional to the probabilities.
pub fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    probs.len().saturating_sub(1)
}
