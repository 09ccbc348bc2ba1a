//! Typed object graphs and the schemas that govern them.
//!
//! A schema declares classes, their properties (string, number, category)
//! and their outgoing link types. A graph holds object instances (indexed
//! 1-based per class, in creation order) and a set of directed, typed links.
//! Every mutation is validated against the schema; properties may lock on
//! first write. Graphs compare structurally through a canonical dump, and
//! predicted graphs are scored against references with a name-based object
//! alignment followed by an F1 over remapped link triples.

mod compare;
mod dump;
mod graph;
mod schema;

pub use compare::{align_objects, aligned_link_f1, match_score, Alignment};
pub use dump::{DumpObject, OntologyDump};
pub use graph::{LinkTriple, ObjectInstance, ObjectRef, OntologyGraph, PropValue, PropertySlot};
pub use schema::{ClassDef, LinkDef, PropertyDef, PropertyKind, Schema};

/// Property name used as an object's identity for alignment purposes.
pub const NAME_PROP: &str = "Name";
