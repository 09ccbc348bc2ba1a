//! The reader: one engine that walks a document left to right, deciding at
//! each tagged token whether the mention creates a new object, attaches to an
//! existing one, or is ignored, and running update rounds (object selection,
//! slot choice, edit) at every sentence boundary. It maintains the inline
//! encodings, the carry-on memory state, per-object embeddings, the action
//! history, and the typed object graph, and can run with the network fully
//! on or in a symbolic-only mode for fast gold replay.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{Action, ActionKind, SlotRef};
use crate::error::{Error, Result};
use crate::memory::{
    encode_inline, ActionHistory, EntityTag, EpisodeRecord, HeadMove, InlineMemory, MatrixMemory,
};
use crate::model::{Model, ANALYZER_DIM};
use crate::nn::{NodeId, Tape};
use crate::ontology::{
    LinkTriple, ObjectRef, OntologyDump, OntologyGraph, PropertyKind, Schema, NAME_PROP,
};
use crate::policy::{self, ScoreInputs};
use crate::reasoner::{apply_closure, ChangeEvent, RuleSet};

/// Saturation horizon for count-valued history features.
const COUNT_SCALE: f64 = 32.0;

/// Where in the parse a decision happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Head action at a token.
    Token,
    /// Milestone round: which object to update (or end the milestone).
    MilestoneSelect,
    /// Milestone round: which slot of the selected object to update.
    MilestoneSlot,
    /// Milestone round: the concrete edit for the chosen slot.
    MilestoneEdit,
}

/// Whether the parse runs the network or only the symbolic machinery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseNn {
    Full,
    /// No encodings, no scores, no loss terms; decisions must come from an
    /// oracle or a replayed trace. Orders of magnitude faster.
    SymbolicOnly,
}

/// Engine settings for one parse.
#[derive(Debug, Clone)]
pub struct ReaderConfig {
    /// Restrict head candidates to the mention's class.
    pub masking: bool,
    /// Propagate world rules after every applied link edit.
    pub use_reasoner: bool,
    /// Maximum update rounds per milestone before the round is forced shut.
    pub max_rounds: usize,
    pub nn: ParseNn,
    /// Build loss term nodes for every scored decision.
    pub collect_loss: bool,
}

impl Default for ReaderConfig {
    fn default() -> Self {
        ReaderConfig {
            masking: true,
            use_reasoner: true,
            max_rounds: 8,
            nn: ParseNn::Full,
            collect_loss: false,
        }
    }
}

/// Snapshot of one decision for an oracle.
pub struct DecisionPoint<'g> {
    pub phase: Phase,
    pub head: usize,
    pub sentence: usize,
    pub graph: &'g OntologyGraph,
    pub selected: Option<&'g ObjectRef>,
    pub slot: Option<&'g SlotRef>,
}

/// Something that can pick the next action among enumerated candidates,
/// typically a gold-derivation oracle during teacher forcing.
pub trait ActionOracle {
    fn choose(&mut self, dp: &DecisionPoint, candidates: &[Action]) -> Result<usize>;
}

/// Where decisions come from during a parse.
pub enum ActionSource<'a> {
    /// Highest-probability candidate (ties to the first).
    Greedy,
    /// Sample from the policy distribution.
    Sample(&'a mut ChaCha8Rng),
    /// Defer every decision to an oracle (teacher forcing).
    Oracle(&'a mut dyn ActionOracle),
    /// Play back the non-forced choices of a previous trace.
    Replay {
        trace: &'a EpisodeTrace,
        cursor: usize,
    },
    /// Teacher-forced everywhere except milestone object selection and slot
    /// choice, which are sampled from the policy; the sampled steps are
    /// marked unsupervised so their loss terms can be scaled by reward.
    Hybrid {
        oracle: &'a mut dyn ActionOracle,
        rng: &'a mut ChaCha8Rng,
    },
}

impl<'a> ActionSource<'a> {
    pub fn replay(trace: &'a EpisodeTrace) -> Self {
        ActionSource::Replay { trace, cursor: 0 }
    }
}

/// One emitted step of a parse.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: u64,
    pub phase: Phase,
    pub head: usize,
    pub sentence: usize,
    pub candidates: Vec<Action>,
    /// Candidate probabilities; empty when the step was forced or the
    /// network was off.
    pub probs: Vec<f64>,
    /// Raw candidate scores before clipping and normalisation; same length
    /// as `probs`.
    pub scores: Vec<f64>,
    pub chosen: usize,
    /// True when there was nothing to decide (single candidate or a
    /// collapsed follow-up write).
    pub forced: bool,
    /// Whether the step's loss term counts as supervised rather than
    /// reward-scaled.
    pub supervised: bool,
    /// Object this head mention was attached to, for partition metrics.
    pub attached: Option<ObjectRef>,
}

/// Full decision record of one parse.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
}

impl EpisodeTrace {
    /// Mention-to-object attachment per tagged head position, in head order.
    pub fn attachments(&self) -> Vec<(usize, Option<ObjectRef>)> {
        self.steps
            .iter()
            .filter(|s| s.phase == Phase::Token && !s.forced)
            .map(|s| (s.head, s.attached.clone()))
            .collect()
    }
}

/// Everything a parse produces.
pub struct ParseOutcome {
    pub trace: EpisodeTrace,
    pub graph: OntologyGraph,
    /// Graph dump after each completed sentence's milestone.
    pub snapshots: Vec<OntologyDump>,
    /// Negative log-probability nodes of supervised decisions.
    pub sl_terms: Vec<NodeId>,
    /// Negative log-probability nodes of sampled (reward-scaled) decisions.
    pub rl_terms: Vec<NodeId>,
    /// Scored (non-forced) decisions.
    pub decisions: usize,
    /// Scored decisions that had more than one candidate.
    pub multi_decisions: usize,
    /// Among those, how many the greedy choice agreed with the chosen action
    /// (equals accuracy counting under teacher forcing).
    pub greedy_agreement: usize,
}

struct Decision {
    chosen: usize,
    probs: Vec<f64>,
    scores: Vec<f64>,
    probs_node: Option<NodeId>,
    ctx: Option<NodeId>,
    virt: BTreeMap<String, NodeId>,
    supervised: bool,
}

struct Engine<'a> {
    schema: &'a Schema,
    rules: &'a RuleSet,
    cfg: &'a ReaderConfig,
    model: Option<&'a Model>,
    tape: Option<&'a mut Tape>,
    inline: InlineMemory,
    enc: Vec<NodeId>,
    carry: Option<MatrixMemory>,
    history: ActionHistory,
    graph: OntologyGraph,
    obj_nodes: BTreeMap<ObjectRef, NodeId>,
    t: u64,
    trace: EpisodeTrace,
    snapshots: Vec<OntologyDump>,
    sl_terms: Vec<NodeId>,
    rl_terms: Vec<NodeId>,
    decisions: usize,
    multi_decisions: usize,
    greedy_agreement: usize,
    n_tokens: usize,
    n_sentences: usize,
}

/// Parse one document. `model` and `tape` are required when the network is
/// on; symbolic-only parses accept only oracle or replay sources.
pub fn parse(
    schema: &Schema,
    rules: &RuleSet,
    model: Option<&Model>,
    mut tape: Option<&mut Tape>,
    record: &EpisodeRecord,
    cfg: &ReaderConfig,
    source: &mut ActionSource,
) -> Result<ParseOutcome> {
    match cfg.nn {
        ParseNn::Full => {
            let m = model.ok_or_else(|| {
                Error::ModeError("parsing with the network on requires a model".into())
            })?;
            if tape.is_none() {
                return Err(Error::ModeError(
                    "parsing with the network on requires a tape".into(),
                ));
            }
            if m.schema != *schema {
                return Err(Error::ConfigError(
                    "the model was built for a different schema".into(),
                ));
            }
        }
        ParseNn::SymbolicOnly => {
            if matches!(
                source,
                ActionSource::Greedy | ActionSource::Sample(_) | ActionSource::Hybrid { .. }
            ) {
                return Err(Error::ModeError(
                    "policy-driven decisions need the network; use an oracle or replay source"
                        .into(),
                ));
            }
            if cfg.collect_loss {
                return Err(Error::ModeError(
                    "loss collection needs the network".into(),
                ));
            }
        }
    }

    let inline = InlineMemory::preprocess(&record.tokens, &record.tags)?;
    let n_tokens = inline.len();
    let n_sentences = inline.sentence_count().max(1);
    let (enc, carry) = match cfg.nn {
        ParseNn::Full => {
            let m = model.unwrap();
            let tp = tape.as_deref_mut().unwrap();
            let ids: Vec<usize> = record.tokens.iter().map(|t| m.vocab.id(t)).collect();
            let enc = encode_inline(
                tp,
                &m.store,
                &ids,
                m.handles.embed_token,
                m.handles.enc_fw,
                m.handles.enc_bw,
                m.dims.d_h,
            )?;
            let carry = MatrixMemory::init(tp, m.dims.d_s);
            (enc, Some(carry))
        }
        ParseNn::SymbolicOnly => (Vec::new(), None),
    };

    let engine = Engine {
        schema,
        rules,
        cfg,
        model,
        tape,
        inline,
        enc,
        carry,
        history: ActionHistory::new(),
        graph: OntologyGraph::new(),
        obj_nodes: BTreeMap::new(),
        t: 0,
        trace: EpisodeTrace::default(),
        snapshots: Vec::new(),
        sl_terms: Vec::new(),
        rl_terms: Vec::new(),
        decisions: 0,
        multi_decisions: 0,
        greedy_agreement: 0,
        n_tokens,
        n_sentences,
    };
    engine.run(source)
}

impl<'a> Engine<'a> {
    fn full(&self) -> bool {
        matches!(self.cfg.nn, ParseNn::Full)
    }

    fn run(mut self, source: &mut ActionSource) -> Result<ParseOutcome> {
        loop {
            self.token_step(source)?;
            if self.inline.current()?.is_sentence_final {
                self.milestone(source)?;
                self.snapshots.push(self.graph.dump());
            }
            if matches!(self.inline.advance_head(), HeadMove::End) {
                break;
            }
        }
        Ok(ParseOutcome {
            trace: self.trace,
            graph: self.graph,
            snapshots: self.snapshots,
            sl_terms: self.sl_terms,
            rl_terms: self.rl_terms,
            decisions: self.decisions,
            multi_decisions: self.multi_decisions,
            greedy_agreement: self.greedy_agreement,
        })
    }

    /// Symbolic history block: saturating action-kind counts, one-hot last
    /// kind, head progress, graph size, sentence progress.
    fn analyzer(&self, head: usize, sentence: usize) -> Vec<f64> {
        let mut f = vec![0.0; ANALYZER_DIM];
        let counts = self.history.kind_counts();
        for (i, c) in counts.iter().enumerate() {
            f[i] = (*c as f64).min(COUNT_SCALE) / COUNT_SCALE;
        }
        if let Some(k) = self.history.last_kind() {
            f[ActionKind::COUNT + k.index()] = 1.0;
        }
        f[24] = head as f64 / self.n_tokens.max(1) as f64;
        f[25] = (self.graph.object_count() as f64).min(COUNT_SCALE) / COUNT_SCALE;
        f[26] = (self.graph.link_count() as f64).min(COUNT_SCALE) / COUNT_SCALE;
        f[27] = sentence as f64 / self.n_sentences as f64;
        f
    }

    fn ctx_at(&mut self, head: usize) -> Result<NodeId> {
        let model = self.model.unwrap();
        let carry = self.carry.as_ref().unwrap().state();
        let enc = self.enc[head];
        let tape = self.tape.as_deref_mut().unwrap();
        policy::context_vector(model, tape, enc, carry)
    }

    /// Step the carry-on memory with the action just taken.
    fn step_carry(&mut self, head: usize, symclass: Option<&str>, kind: ActionKind) -> Result<()> {
        if !self.full() {
            return Ok(());
        }
        let model = self.model.unwrap();
        let enc = self.enc[head];
        let tape = self.tape.as_deref_mut().unwrap();
        let sym_table = tape.param(&model.store, model.handles.embed_symclass);
        let sym = tape.row(sym_table, model.symclass_row(symclass)?)?;
        let act_table = tape.param(&model.store, model.handles.embed_actkind);
        let act = tape.row(act_table, kind.index())?;
        let input = tape.concat(&[enc, sym, act])?;
        self.carry
            .as_mut()
            .unwrap()
            .step(tape, &model.store, model.handles.ctrl, input)
    }

    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        phase: Phase,
        head: usize,
        sentence: usize,
        candidates: Vec<Action>,
        probs: Vec<f64>,
        scores: Vec<f64>,
        probs_node: Option<NodeId>,
        chosen: usize,
        forced: bool,
        supervised: bool,
        attached: Option<ObjectRef>,
        symclass: Option<&str>,
    ) -> Result<()> {
        let action = candidates[chosen].clone();
        let kind = action.kind();
        if !forced {
            self.decisions += 1;
            if candidates.len() > 1 {
                self.multi_decisions += 1;
                if !probs.is_empty() && policy::greedy_index(&probs) == chosen {
                    self.greedy_agreement += 1;
                }
            }
            if self.cfg.collect_loss {
                if let Some(pn) = probs_node {
                    let tape = self.tape.as_deref_mut().unwrap();
                    let term = tape.neg_log_pick(pn, chosen)?;
                    if supervised {
                        self.sl_terms.push(term);
                    } else {
                        self.rl_terms.push(term);
                    }
                }
            }
        }
        self.trace.steps.push(TraceStep {
            t: self.t,
            phase,
            head,
            sentence,
            candidates,
            probs,
            scores,
            chosen,
            forced,
            supervised,
            attached,
        });
        self.history.push(self.t as usize, action)?;
        self.step_carry(head, symclass, kind)?;
        self.t += 1;
        Ok(())
    }

    fn emit_forced(
        &mut self,
        phase: Phase,
        head: usize,
        sentence: usize,
        action: Action,
        symclass: Option<&str>,
        attached: Option<ObjectRef>,
    ) -> Result<()> {
        self.emit(
            phase,
            head,
            sentence,
            vec![action],
            Vec::new(),
            Vec::new(),
            None,
            0,
            true,
            true,
            attached,
            symclass,
        )
    }

    /// Score (when the network is on) and choose among ≥2 candidates.
    #[allow(clippy::too_many_arguments)]
    fn decide(
        &mut self,
        source: &mut ActionSource,
        phase: Phase,
        head: usize,
        sentence: usize,
        candidates: &[Action],
        mention: Option<&EntityTag>,
        selected: Option<&ObjectRef>,
        slot: Option<&SlotRef>,
    ) -> Result<Decision> {
        let (probs, scores, probs_node, ctx, virt) = if self.full() {
            let model = self.model.unwrap();
            let ctx = self.ctx_at(head)?;
            let analyzer = self.analyzer(head, sentence);
            let sel_pair = match selected {
                Some(r) => {
                    let node = *self.obj_nodes.get(r).ok_or_else(|| {
                        Error::StateError(format!("object {r} has no embedding node"))
                    })?;
                    Some((r.clone(), node))
                }
                None => None,
            };
            let category = matches!(slot, Some(SlotRef::Prop(_)));
            if category {
                let (r, node) = sel_pair.as_ref().unwrap();
                let prop = slot.unwrap().name();
                let tape = self.tape.as_deref_mut().unwrap();
                let (pn, sc) =
                    policy::category_distribution(model, tape, &r.class, prop, *node, ctx)?;
                (tape.value(pn).to_vec(), sc, Some(pn), Some(ctx), BTreeMap::new())
            } else {
                let inp = ScoreInputs {
                    ctx,
                    analyzer: &analyzer,
                    mention,
                    now: self.t,
                    selected: sel_pair,
                };
                let tape = self.tape.as_deref_mut().unwrap();
                let sc =
                    policy::score_candidates(model, tape, &self.graph, &self.obj_nodes, candidates, &inp)?;
                (
                    tape.value(sc.probs).to_vec(),
                    sc.scores,
                    Some(sc.probs),
                    Some(ctx),
                    sc.virt,
                )
            }
        } else {
            (Vec::new(), Vec::new(), None, None, BTreeMap::new())
        };

        let supervised = match source {
            ActionSource::Oracle(_) => true,
            ActionSource::Hybrid { .. } => {
                !matches!(phase, Phase::MilestoneSelect | Phase::MilestoneSlot)
            }
            _ => false,
        };
        let chosen = match source {
            ActionSource::Greedy => policy::greedy_index(&probs),
            ActionSource::Sample(rng) => policy::sample_index(&probs, rng),
            ActionSource::Oracle(oracle) => {
                let dp = DecisionPoint {
                    phase,
                    head,
                    sentence,
                    graph: &self.graph,
                    selected,
                    slot,
                };
                oracle.choose(&dp, candidates)?
            }
            ActionSource::Replay { trace, cursor } => loop {
                let step = trace.steps.get(*cursor).ok_or_else(|| {
                    Error::StateError("replayed trace ran out of steps".into())
                })?;
                *cursor += 1;
                if step.forced {
                    continue;
                }
                if step.candidates != candidates {
                    return Err(Error::StateError(
                        "replay diverged: candidate menu mismatch".into(),
                    ));
                }
                break step.chosen;
            },
            ActionSource::Hybrid { oracle, rng } => {
                if matches!(phase, Phase::MilestoneSelect | Phase::MilestoneSlot) {
                    policy::sample_index(&probs, rng)
                } else {
                    let dp = DecisionPoint {
                        phase,
                        head,
                        sentence,
                        graph: &self.graph,
                        selected,
                        slot,
                    };
                    oracle.choose(&dp, candidates)?
                }
            }
        };
        if chosen >= candidates.len() {
            return Err(Error::IndexError(format!(
                "chosen index {chosen} out of range for {} candidates",
                candidates.len()
            )));
        }
        Ok(Decision {
            chosen,
            probs,
            scores,
            probs_node,
            ctx,
            virt,
            supervised,
        })
    }

    fn refresh_embedding(&mut self, target: &ObjectRef, ctx: NodeId) -> Result<()> {
        if !self.full() {
            return Ok(());
        }
        let model = self.model.unwrap();
        let old = *self.obj_nodes.get(target).ok_or_else(|| {
            Error::StateError(format!("object {target} has no embedding node"))
        })?;
        let tape = self.tape.as_deref_mut().unwrap();
        let new = policy::update_object_embedding(model, tape, old, ctx)?;
        self.obj_nodes.insert(target.clone(), new);
        Ok(())
    }

    fn token_step(&mut self, source: &mut ActionSource) -> Result<()> {
        let head = self.inline.head();
        let sentence = self.inline.sentence_of(head);
        let tag = match &self.inline.current()?.entity {
            None => {
                return self.emit_forced(Phase::Token, head, sentence, Action::None, None, None)
            }
            Some(tag) => tag.clone(),
        };

        let candidates = policy::token_candidates(self.schema, &self.graph, &tag, self.cfg.masking);
        if candidates.len() < 2 {
            let action = candidates.into_iter().next().unwrap_or(Action::None);
            return self.emit_forced(Phase::Token, head, sentence, action, None, None);
        }
        let d = self.decide(source, Phase::Token, head, sentence, &candidates, Some(&tag), None, None)?;
        let action = candidates[d.chosen].clone();

        let mut attached = None;
        let mut symclass: Option<String> = None;
        // A collapsed follow-up write: after creating or attaching at a
        // mention that carries copyable content, the copy happens
        // unconditionally (target, property, value).
        let mut forced_write: Option<(ObjectRef, String, String)> = None;
        match &action {
            Action::New { class } => {
                let r = self.graph.create_object(self.schema, class, self.t)?;
                if self.full() {
                    let node = d.virt.get(class).copied().ok_or_else(|| {
                        Error::StateError(format!("no virtual vector was built for {class}"))
                    })?;
                    self.obj_nodes.insert(r.clone(), node);
                }
                let class_def = self.schema.class(class)?;
                match &tag.property {
                    None => {
                        if class_def.property(NAME_PROP).is_some() {
                            forced_write =
                                Some((r.clone(), NAME_PROP.to_string(), tag.surface.clone()));
                        }
                    }
                    Some(p) => {
                        let def = class_def.property(p).ok_or_else(|| {
                            Error::Schema(format!("class {class} has no property {p}"))
                        })?;
                        if !matches!(def.kind, PropertyKind::Category(_)) {
                            forced_write = Some((r.clone(), p.clone(), tag.surface.clone()));
                        }
                    }
                }
                symclass = Some(class.clone());
                attached = Some(r);
            }
            Action::Assign { target } => {
                self.graph.touch(target, self.t)?;
                if let Some(ctx) = d.ctx {
                    self.refresh_embedding(target, ctx)?;
                }
                if let Some(p) = &tag.property {
                    let def = self
                        .schema
                        .class(&target.class)?
                        .property(p)
                        .ok_or_else(|| {
                            Error::Schema(format!("class {} has no property {p}", target.class))
                        })?;
                    if !matches!(def.kind, PropertyKind::Category(_)) {
                        forced_write = Some((target.clone(), p.clone(), tag.surface.clone()));
                    }
                }
                symclass = Some(target.class.clone());
                attached = Some(target.clone());
            }
            Action::None => {}
            other => {
                return Err(Error::StateError(format!(
                    "unexpected head action {other}"
                )))
            }
        }
        self.emit(
            Phase::Token,
            head,
            sentence,
            candidates,
            d.probs,
            d.scores,
            d.probs_node,
            d.chosen,
            false,
            d.supervised,
            attached,
            symclass.as_deref(),
        )?;
        if let Some((r, prop, value)) = forced_write {
            self.graph.set_property(self.schema, &r, &prop, &value, self.t)?;
            let class = r.class.clone();
            let fa = Action::UpdateString {
                target: r.clone(),
                prop,
                value,
            };
            self.emit_forced(Phase::Token, head, sentence, fa, Some(&class), Some(r))?;
        }
        Ok(())
    }

    /// Apply a milestone edit; returns whether the graph changed.
    fn apply_edit(&mut self, edit: &Action) -> Result<bool> {
        match edit {
            Action::UpdateCategory {
                target,
                prop,
                label,
            } => {
                self.graph
                    .set_property(self.schema, target, prop, label, self.t)?;
                Ok(true)
            }
            Action::AddLink { src, link, dst } => {
                let added = self.graph.add_link(self.schema, src, link, dst, self.t)?;
                if added && self.cfg.use_reasoner {
                    let seed =
                        ChangeEvent::add(LinkTriple::new(src.clone(), link.clone(), dst.clone()));
                    apply_closure(&mut self.graph, self.schema, self.rules, &[seed], self.t)?;
                }
                Ok(added)
            }
            Action::DelLink { src, link, dst } => {
                let removed = self.graph.del_link(self.schema, src, link, dst, self.t)?;
                if removed && self.cfg.use_reasoner {
                    let seed =
                        ChangeEvent::del(LinkTriple::new(src.clone(), link.clone(), dst.clone()));
                    apply_closure(&mut self.graph, self.schema, self.rules, &[seed], self.t)?;
                }
                Ok(removed)
            }
            Action::HoldLink { .. } => Ok(false),
            other => Err(Error::StateError(format!(
                "unexpected milestone edit {other}"
            ))),
        }
    }

    fn milestone(&mut self, source: &mut ActionSource) -> Result<()> {
        let head = self.inline.head();
        let sentence = self.inline.sentence_of(head);
        let mut rounds = 0usize;
        loop {
            let candidates = policy::milestone_object_candidates(self.schema, &self.graph)?;
            if rounds >= self.cfg.max_rounds || candidates.len() == 1 {
                self.emit_forced(
                    Phase::MilestoneSelect,
                    head,
                    sentence,
                    Action::SelectObject { target: None },
                    None,
                    None,
                )?;
                return Ok(());
            }
            let d = self.decide(
                source,
                Phase::MilestoneSelect,
                head,
                sentence,
                &candidates,
                None,
                None,
                None,
            )?;
            let action = candidates[d.chosen].clone();
            let target = match &action {
                Action::SelectObject { target: Some(r) } => r.clone(),
                Action::SelectObject { target: None } => {
                    self.emit(
                        Phase::MilestoneSelect,
                        head,
                        sentence,
                        candidates,
                        d.probs,
                        d.scores,
                        d.probs_node,
                        d.chosen,
                        false,
                        d.supervised,
                        None,
                        None,
                    )?;
                    return Ok(());
                }
                other => {
                    return Err(Error::StateError(format!(
                        "unexpected selection action {other}"
                    )))
                }
            };
            let symclass = target.class.clone();
            self.emit(
                Phase::MilestoneSelect,
                head,
                sentence,
                candidates,
                d.probs,
                d.scores,
                d.probs_node,
                d.chosen,
                false,
                d.supervised,
                None,
                Some(&symclass),
            )?;

            // Slot choice: the selected object always has at least one
            // editable slot, plus the no-slot escape.
            let slot_cands = policy::slot_candidates(self.schema, &self.graph, &target)?;
            let d = self.decide(
                source,
                Phase::MilestoneSlot,
                head,
                sentence,
                &slot_cands,
                None,
                Some(&target),
                None,
            )?;
            let slot_action = slot_cands[d.chosen].clone();
            let slot = match &slot_action {
                Action::SelectSlot { slot: Some(s) } => s.clone(),
                Action::SelectSlot { slot: None } => {
                    self.emit(
                        Phase::MilestoneSlot,
                        head,
                        sentence,
                        slot_cands,
                        d.probs,
                        d.scores,
                        d.probs_node,
                        d.chosen,
                        false,
                        d.supervised,
                        None,
                        Some(&symclass),
                    )?;
                    rounds += 1;
                    continue;
                }
                other => {
                    return Err(Error::StateError(format!(
                        "unexpected slot action {other}"
                    )))
                }
            };
            self.emit(
                Phase::MilestoneSlot,
                head,
                sentence,
                slot_cands,
                d.probs,
                d.scores,
                d.probs_node,
                d.chosen,
                false,
                d.supervised,
                None,
                Some(&symclass),
            )?;

            // The edit itself.
            let edit_cands = policy::value_candidates(self.schema, &self.graph, &target, &slot)?;
            let decision = if edit_cands.len() < 2 {
                None
            } else {
                Some(self.decide(
                    source,
                    Phase::MilestoneEdit,
                    head,
                    sentence,
                    &edit_cands,
                    None,
                    Some(&target),
                    Some(&slot),
                )?)
            };
            let chosen = decision.as_ref().map_or(0, |d| d.chosen);
            let edit = edit_cands[chosen].clone();
            let changed = self.apply_edit(&edit)?;
            match decision {
                None => {
                    self.emit_forced(
                        Phase::MilestoneEdit,
                        head,
                        sentence,
                        edit,
                        Some(&symclass),
                        None,
                    )?;
                    if changed {
                        let ctx = if self.full() { Some(self.ctx_at(head)?) } else { None };
                        if let Some(ctx) = ctx {
                            self.refresh_embedding(&target, ctx)?;
                        }
                    }
                }
                Some(d) => {
                    self.emit(
                        Phase::MilestoneEdit,
                        head,
                        sentence,
                        edit_cands,
                        d.probs,
                        d.scores,
                        d.probs_node,
                        d.chosen,
                        false,
                        d.supervised,
                        None,
                        Some(&symclass),
                    )?;
                    if changed {
                        if let Some(ctx) = d.ctx {
                            self.refresh_embedding(&target, ctx)?;
                        }
                    }
                }
            }
            rounds += 1;
        }
    }
}
