//! Discrete actions the reader can take, both at reading-head positions and
//! during milestone update rounds.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ontology::ObjectRef;

/// Reading granularity of the head when stepping through a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Granularity {
    Word,
    Sentence,
    Paragraph,
}

/// What a note written at the current head position attaches to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoteScope {
    /// Attach to a specific object property slot.
    Object { target: ObjectRef, prop: String },
    /// Keep on the token cell itself.
    Cell,
}

/// An updatable slot of an object: either a property or an outgoing link
/// family. Property and link names share one namespace per class.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlotRef {
    Prop(String),
    Link(String),
}

impl SlotRef {
    pub fn name(&self) -> &str {
        match self {
            SlotRef::Prop(n) | SlotRef::Link(n) => n,
        }
    }
}

impl fmt::Display for SlotRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotRef::Prop(n) => write!(f, "prop:{n}"),
            SlotRef::Link(n) => write!(f, "link:{n}"),
        }
    }
}

/// One decision emitted by the reader.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    /// Create a new object of the given class and make it the focus.
    New { class: String },
    /// Attach the current mention to an existing object.
    Assign { target: ObjectRef },
    /// Do nothing at this head position.
    None,
    /// Milestone round: pick an object to update (`slot` chosen at the next
    /// step) or end the round when `target` is None.
    SelectObject { target: Option<ObjectRef> },
    /// Milestone round: pick which slot of the selected object to update;
    /// None ends the object's update without touching anything.
    SelectSlot { slot: Option<SlotRef> },
    /// Write a string or number property by copying the mention surface.
    UpdateString { target: ObjectRef, prop: String, value: String },
    /// Set a category-valued property to one of its labels.
    UpdateCategory { target: ObjectRef, prop: String, label: String },
    /// Add a link from the selected object to a destination.
    AddLink { src: ObjectRef, link: String, dst: ObjectRef },
    /// Remove a link from the selected object to a destination.
    DelLink { src: ObjectRef, link: String, dst: ObjectRef },
    /// Keep the slot's links as they are.
    HoldLink { src: ObjectRef, link: String },
    /// Jump the head forward without acting on skipped content.
    Skip { granularity: Granularity, count: usize },
    /// Write the current head encoding as a note.
    NotesTaking { scope: NoteScope },
}

/// Coarse action family, used for history features and action-kind
/// embeddings. Stable order; `COUNT` is the embedding-table size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    New,
    Assign,
    None,
    SelectObject,
    SelectSlot,
    UpdateString,
    UpdateCategory,
    AddLink,
    DelLink,
    HoldLink,
    Skip,
    NotesTaking,
}

impl ActionKind {
    pub const COUNT: usize = 12;

    pub fn index(self) -> usize {
        match self {
            ActionKind::New => 0,
            ActionKind::Assign => 1,
            ActionKind::None => 2,
            ActionKind::SelectObject => 3,
            ActionKind::SelectSlot => 4,
            ActionKind::UpdateString => 5,
            ActionKind::UpdateCategory => 6,
            ActionKind::AddLink => 7,
            ActionKind::DelLink => 8,
            ActionKind::HoldLink => 9,
            ActionKind::Skip => 10,
            ActionKind::NotesTaking => 11,
        }
    }
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::New { .. } => ActionKind::New,
            Action::Assign { .. } => ActionKind::Assign,
            Action::None => ActionKind::None,
            Action::SelectObject { .. } => ActionKind::SelectObject,
            Action::SelectSlot { .. } => ActionKind::SelectSlot,
            Action::UpdateString { .. } => ActionKind::UpdateString,
            Action::UpdateCategory { .. } => ActionKind::UpdateCategory,
            Action::AddLink { .. } => ActionKind::AddLink,
            Action::DelLink { .. } => ActionKind::DelLink,
            Action::HoldLink { .. } => ActionKind::HoldLink,
            Action::Skip { .. } => ActionKind::Skip,
            Action::NotesTaking { .. } => ActionKind::NotesTaking,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::New { class } => write!(f, "New({class})"),
            Action::Assign { target } => write!(f, "Assign({target})"),
            Action::None => write!(f, "None"),
            Action::SelectObject { target: Some(t) } => write!(f, "Select({t})"),
            Action::SelectObject { target: None } => write!(f, "Select(end)"),
            Action::SelectSlot { slot: Some(s) } => write!(f, "Slot({s})"),
            Action::SelectSlot { slot: None } => write!(f, "Slot(none)"),
            Action::UpdateString { target, prop, value } => {
                write!(f, "SetStr({target}.{prop}={value:?})")
            }
            Action::UpdateCategory { target, prop, label } => {
                write!(f, "SetCat({target}.{prop}={label})")
            }
            Action::AddLink { src, link, dst } => write!(f, "AddLink({src}-{link}->{dst})"),
            Action::DelLink { src, link, dst } => write!(f, "DelLink({src}-{link}->{dst})"),
            Action::HoldLink { src, link } => write!(f, "HoldLink({src}.{link})"),
            Action::Skip { granularity, count } => {
                write!(f, "Skip({granularity:?} x{count})")
            }
            Action::NotesTaking { scope } => write!(f, "Note({scope:?})"),
        }
    }
}
