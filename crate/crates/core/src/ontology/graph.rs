//! The mutable object graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::schema::{PropertyKind, Schema};

/// Reference to one object: class name plus 1-based per-class index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectRef {
    pub class: String,
    pub index: usize,
}

impl ObjectRef {
    pub fn new(class: impl Into<String>, index: usize) -> Self {
        Self {
            class: class.into(),
            index,
        }
    }
}

impl fmt::Display for ObjectRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.class, self.index)
    }
}

/// A typed property value. Numbers keep their written decimal form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropValue {
    Str(String),
    Num(String),
    Cat(String),
}

impl PropValue {
    pub fn as_str(&self) -> &str {
        match self {
            PropValue::Str(s) | PropValue::Num(s) | PropValue::Cat(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertySlot {
    pub value: PropValue,
    pub locked: bool,
    pub set_at: u64,
}

#[derive(Debug, Clone)]
pub struct ObjectInstance {
    pub class: String,
    pub index: usize,
    props: BTreeMap<String, PropertySlot>,
    /// Distributed representation maintained by the parser; starts at zero,
    /// ignored by structural comparison and serialization.
    pub embedding: Vec<f64>,
    pub created_at: u64,
    pub last_touched: u64,
}

impl ObjectInstance {
    pub fn object_ref(&self) -> ObjectRef {
        ObjectRef::new(self.class.clone(), self.index)
    }

    pub fn prop(&self, name: &str) -> Option<&PropertySlot> {
        self.props.get(name)
    }

    pub fn prop_value(&self, name: &str) -> Option<&str> {
        self.props.get(name).map(|s| s.value.as_str())
    }

    pub fn props(&self) -> impl Iterator<Item = (&String, &PropertySlot)> {
        self.props.iter()
    }
}

/// Directed, typed link between two objects.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkTriple {
    pub src: ObjectRef,
    pub link: String,
    pub dst: ObjectRef,
}

impl LinkTriple {
    pub fn new(src: ObjectRef, link: impl Into<String>, dst: ObjectRef) -> Self {
        Self {
            src,
            link: link.into(),
            dst,
        }
    }
}

impl fmt::Display for LinkTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -{}-> {}", self.src, self.link, self.dst)
    }
}

#[derive(Debug, Clone, Default)]
pub struct OntologyGraph {
    /// Objects per class, creation order; index within the vec is ref index - 1.
    objects: BTreeMap<String, Vec<ObjectInstance>>,
    links: BTreeSet<LinkTriple>,
}

impl OntologyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Create a fresh instance of `class`. Indices are 1-based and dense in
    /// creation order within each class.
    pub fn create_object(&mut self, schema: &Schema, class: &str, t: u64) -> Result<ObjectRef> {
        schema.class(class)?;
        let list = self.objects.entry(class.to_string()).or_default();
        let index = list.len() + 1;
        list.push(ObjectInstance {
            class: class.to_string(),
            index,
            props: BTreeMap::new(),
            embedding: Vec::new(),
            created_at: t,
            last_touched: t,
        });
        Ok(ObjectRef::new(class, index))
    }

    pub fn object(&self, r: &ObjectRef) -> Result<&ObjectInstance> {
        self.objects
            .get(&r.class)
            .and_then(|list| list.get(r.index.checked_sub(1)?))
            .ok_or_else(|| Error::DanglingRef(r.clone()))
    }

    pub fn object_mut(&mut self, r: &ObjectRef) -> Result<&mut ObjectInstance> {
        self.objects
            .get_mut(&r.class)
            .and_then(|list| list.get_mut(r.index.checked_sub(1)?))
            .ok_or_else(|| Error::DanglingRef(r.clone()))
    }

    pub fn contains(&self, r: &ObjectRef) -> bool {
        self.object(r).is_ok()
    }

    /// Write a property. Values are type-checked against the schema; a slot
    /// declared `lock` freezes after its first successful write.
    pub fn set_property(
        &mut self,
        schema: &Schema,
        r: &ObjectRef,
        prop: &str,
        raw: &str,
        t: u64,
    ) -> Result<()> {
        let class = schema.class(&r.class)?;
        let def = class.property(prop).ok_or_else(|| {
            Error::Schema(format!("class {} has no property {prop}", r.class))
        })?;
        let value = match &def.kind {
            PropertyKind::Str => PropValue::Str(raw.to_string()),
            PropertyKind::Number => {
                if !is_decimal_string(raw) {
                    return Err(Error::TypeError(format!(
                        "{r}.{prop}: {raw:?} is not a decimal string"
                    )));
                }
                PropValue::Num(raw.to_string())
            }
            PropertyKind::Category(labels) => {
                if !labels.iter().any(|l| l == raw) {
                    return Err(Error::TypeError(format!(
                        "{r}.{prop}: {raw:?} is not one of {labels:?}"
                    )));
                }
                PropValue::Cat(raw.to_string())
            }
        };
        let lock = def.lock_on_first_write;
        let obj = self.object_mut(r)?;
        if let Some(slot) = obj.props.get(prop) {
            if slot.locked {
                return Err(Error::LockViolation {
                    object: r.clone(),
                    prop: prop.to_string(),
                });
            }
        }
        obj.props.insert(
            prop.to_string(),
            PropertySlot {
                value,
                locked: lock,
                set_at: t,
            },
        );
        obj.last_touched = t;
        Ok(())
    }

    /// Add a link; returns false if it was already present (idempotent).
    pub fn add_link(
        &mut self,
        schema: &Schema,
        src: &ObjectRef,
        link: &str,
        dst: &ObjectRef,
        t: u64,
    ) -> Result<bool> {
        let class = schema.class(&src.class)?;
        let def = class
            .link(link)
            .ok_or_else(|| Error::Schema(format!("class {} has no link {link}", src.class)))?;
        if def.target != dst.class {
            return Err(Error::TypeError(format!(
                "link {link} targets {} but got {}",
                def.target, dst.class
            )));
        }
        self.object(src)?;
        self.object(dst)?;
        let triple = LinkTriple::new(src.clone(), link, dst.clone());
        let added = self.links.insert(triple);
        if added {
            self.object_mut(src)?.last_touched = t;
        }
        Ok(added)
    }

    /// Delete a link; returns false when the link was absent (callers treat
    /// that as a logged no-op, not an error).
    pub fn del_link(
        &mut self,
        schema: &Schema,
        src: &ObjectRef,
        link: &str,
        dst: &ObjectRef,
        t: u64,
    ) -> Result<bool> {
        schema
            .class(&src.class)?
            .link(link)
            .ok_or_else(|| Error::Schema(format!("class {} has no link {link}", src.class)))?;
        self.object(src)?;
        self.object(dst)?;
        let triple = LinkTriple::new(src.clone(), link, dst.clone());
        let removed = self.links.remove(&triple);
        if removed {
            self.object_mut(src)?.last_touched = t;
        }
        Ok(removed)
    }

    pub fn touch(&mut self, r: &ObjectRef, t: u64) -> Result<()> {
        self.object_mut(r)?.last_touched = t;
        Ok(())
    }

    pub fn has_link(&self, src: &ObjectRef, link: &str, dst: &ObjectRef) -> bool {
        self.links
            .contains(&LinkTriple::new(src.clone(), link, dst.clone()))
    }

    pub fn links(&self) -> impl Iterator<Item = &LinkTriple> {
        self.links.iter()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// Outgoing links of `src` with the given name.
    pub fn links_from(&self, src: &ObjectRef, link: &str) -> Vec<LinkTriple> {
        self.links
            .iter()
            .filter(|l| &l.src == src && l.link == link)
            .cloned()
            .collect()
    }

    /// All links touching the object in either direction.
    pub fn links_of(&self, r: &ObjectRef) -> Vec<LinkTriple> {
        self.links
            .iter()
            .filter(|l| &l.src == r || &l.dst == r)
            .cloned()
            .collect()
    }

    pub fn objects_of(&self, class: &str) -> &[ObjectInstance] {
        self.objects.get(class).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All objects, grouped by class in lexicographic class order.
    pub fn all_objects(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.objects.values().flatten()
    }

    pub fn count_of(&self, class: &str) -> usize {
        self.objects.get(class).map(Vec::len).unwrap_or(0)
    }

    pub fn object_count(&self) -> usize {
        self.objects.values().map(Vec::len).sum()
    }

    pub fn class_names(&self) -> impl Iterator<Item = &String> {
        self.objects.keys()
    }
}

/// Digits with an optional single fractional part: "34", "2", "19.5".
pub(crate) fn is_decimal_string(s: &str) -> bool {
    let mut parts = s.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    digits(int) && frac.map_or(true, digits)
}
