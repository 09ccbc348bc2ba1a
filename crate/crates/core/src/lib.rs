//! Schema-driven incremental document parsing.
//!
//! The engine reads a tokenized document left to right and maintains a typed
//! object graph while doing so. Every move is a discrete action drawn from a
//! small vocabulary (create an object, assign a mention to an existing one,
//! fill a property, add or delete a link, do nothing), scored by small neural
//! networks over a mix of distributed state (token encodings, a recurrent
//! controller state, per-object embeddings) and symbolic features (name
//! overlap, action history). A forward-chaining rule engine can close the
//! graph over domain rules after every edit.
//!
//! The crate ships two synthetic worlds for end-to-end experiments: a dynamic
//! household world (people moving between rooms, picking things up and
//! dropping them) and a static incident-report world (persons and items tied
//! to a single event). Both come with generators that emit ground-truth
//! graphs per sentence, which the trainers consume for supervised imitation,
//! policy-gradient training on a terminal graph-match reward, or a mix.

pub mod action;
pub mod error;
pub mod eval;
pub mod learning;
pub mod memory;
pub mod model;
pub mod nn;
pub mod ontology;
pub mod policy;
pub mod reader;
pub mod reasoner;
pub mod rng;
pub mod worldsim;

pub use action::{Action, Granularity, NoteScope, SlotRef};
pub use error::{Error, Result};
pub use ontology::{ObjectRef, OntologyGraph, PropValue, Schema};
