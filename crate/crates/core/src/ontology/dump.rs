//! Canonical serialized form of a graph. Objects are sorted by class name
//! then index, links lexicographically, and property maps are ordered, so
//! two structurally equal graphs always dump to identical bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::graph::{ObjectRef, OntologyGraph};
use crate::ontology::schema::Schema;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpObject {
    pub class: String,
    pub index: usize,
    pub props: BTreeMap<String, String>,
}

/// Wire form: `{"objects":[...],"links":[[srcClass,srcIdx,name,dstClass,dstIdx],...]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyDump {
    pub objects: Vec<DumpObject>,
    pub links: Vec<(String, usize, String, String, usize)>,
}

impl OntologyDump {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dump serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(Error::from)
    }
}

impl OntologyGraph {
    pub fn dump(&self) -> OntologyDump {
        let mut objects: Vec<DumpObject> = self
            .all_objects()
            .map(|o| DumpObject {
                class: o.class.clone(),
                index: o.index,
                props: o
                    .props()
                    .map(|(k, v)| (k.clone(), v.value.as_str().to_string()))
                    .collect(),
            })
            .collect();
        objects.sort_by(|a, b| (&a.class, a.index).cmp(&(&b.class, b.index)));
        let mut links: Vec<(String, usize, String, String, usize)> = self
            .links()
            .map(|l| {
                (
                    l.src.class.clone(),
                    l.src.index,
                    l.link.clone(),
                    l.dst.class.clone(),
                    l.dst.index,
                )
            })
            .collect();
        links.sort();
        OntologyDump { objects, links }
    }

    /// Canonical byte form; equality of these strings is the crate's notion
    /// of structural graph equality (embeddings and timestamps are excluded).
    pub fn canonical_json(&self) -> String {
        self.dump().to_json()
    }

    pub fn same_content(&self, other: &OntologyGraph) -> bool {
        self.dump() == other.dump()
    }

    /// Rebuild a graph from a dump, validating against the schema. Objects
    /// are created in (class, index) order and must be densely indexed.
    pub fn from_dump(schema: &Schema, dump: &OntologyDump) -> Result<Self> {
        let mut g = OntologyGraph::new();
        let mut sorted = dump.objects.clone();
        sorted.sort_by(|a, b| (&a.class, a.index).cmp(&(&b.class, b.index)));
        for (t, o) in sorted.iter().enumerate() {
            let r = g.create_object(schema, &o.class, t as u64)?;
            if r.index != o.index {
                return Err(Error::Schema(format!(
                    "dump indices for class {} are not dense: expected {}, got {}",
                    o.class, r.index, o.index
                )));
            }
            for (prop, value) in &o.props {
                g.set_property(schema, &r, prop, value, t as u64)?;
            }
        }
        for (sc, si, name, dc, di) in &dump.links {
            let src = ObjectRef::new(sc.clone(), *si);
            let dst = ObjectRef::new(dc.clone(), *di);
            g.add_link(schema, &src, name, &dst, 0)?;
        }
        Ok(g)
    }
}
