//! Schema definitions and their JSON wire form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropertyKind {
    /// Free text, filled by copying a tagged span from the document.
    Str,
    /// Decimal text (digits with an optional fractional part); stored as the
    /// written string, never parsed into a float.
    Number,
    /// Closed label set predicted by a classifier head.
    Category(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyDef {
    pub name: String,
    pub kind: PropertyKind,
    /// When true the first successful write freezes the slot.
    pub lock_on_first_write: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkDef {
    pub name: String,
    /// Class the link points to.
    pub target: String,
    /// Immutable links cannot be deleted once added.
    pub mutable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDef {
    pub name: String,
    pub properties: Vec<PropertyDef>,
    pub links: Vec<LinkDef>,
}

impl ClassDef {
    pub fn property(&self, name: &str) -> Option<&PropertyDef> {
        self.properties.iter().find(|p| p.name == name)
    }

    pub fn link(&self, name: &str) -> Option<&LinkDef> {
        self.links.iter().find(|l| l.name == name)
    }
}

/// Validated collection of class definitions. Class order is meaningful: it
/// fixes candidate enumeration order everywhere downstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    classes: Vec<ClassDef>,
}

impl Schema {
    pub fn new(classes: Vec<ClassDef>) -> Result<Self> {
        let schema = Self { classes };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Schema("schema declares no classes".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.name.is_empty() {
                return Err(Error::Schema("empty class name".into()));
            }
            if self.classes[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("duplicate class {}", c.name)));
            }
            for (j, p) in c.properties.iter().enumerate() {
                if p.name.is_empty() {
                    return Err(Error::Schema(format!("{}: empty property name", c.name)));
                }
                if c.properties[..j].iter().any(|o| o.name == p.name) {
                    return Err(Error::Schema(format!(
                        "{}: duplicate property {}",
                        c.name, p.name
                    )));
                }
                if let PropertyKind::Category(labels) = &p.kind {
                    if labels.is_empty() {
                        return Err(Error::Schema(format!(
                            "{}.{}: category with no labels",
                            c.name, p.name
                        )));
                    }
                    for (k, l) in labels.iter().enumerate() {
                        if l.is_empty() || labels[..k].contains(l) {
                            return Err(Error::Schema(format!(
                                "{}.{}: bad category label {l:?}",
                                c.name, p.name
                            )));
                        }
                    }
                }
            }
            for (j, l) in c.links.iter().enumerate() {
                if l.name.is_empty() {
                    return Err(Error::Schema(format!("{}: empty link name", c.name)));
                }
                if c.links[..j].iter().any(|o| o.name == l.name) {
                    return Err(Error::Schema(format!(
                        "{}: duplicate link {}",
                        c.name, l.name
                    )));
                }
                // Properties and links share the update-slot namespace.
                if c.properties.iter().any(|p| p.name == l.name) {
                    return Err(Error::Schema(format!(
                        "{}: link {} collides with a property name",
                        c.name, l.name
                    )));
                }
                if !self.classes.iter().any(|t| t.name == l.target) {
                    return Err(Error::Schema(format!(
                        "{}: link {} targets unknown class {}",
                        c.name, l.name, l.target
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn class(&self, name: &str) -> Result<&ClassDef> {
        self.classes
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown class {name}")))
    }

    pub fn has_class(&self, name: &str) -> bool {
        self.classes.iter().any(|c| c.name == name)
    }

    pub fn class_position(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown class {name}")))
    }

    pub fn to_json(&self) -> String {
        let wire = SchemaWire {
            classes: self
                .classes
                .iter()
                .map(|c| ClassWire {
                    name: c.name.clone(),
                    properties: c
                        .properties
                        .iter()
                        .map(|p| PropertyWire {
                            name: p.name.clone(),
                            kind: match &p.kind {
                                PropertyKind::Str => "string".into(),
                                PropertyKind::Number => "number".into(),
                                PropertyKind::Category(_) => "category".into(),
                            },
                            labels: match &p.kind {
                                PropertyKind::Category(l) => Some(l.clone()),
                                _ => None,
                            },
                            lock: p.lock_on_first_write,
                        })
                        .collect(),
                    links: c
                        .links
                        .iter()
                        .map(|l| LinkWire {
                            name: l.name.clone(),
                            target: l.target.clone(),
                            mutable: l.mutable,
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&wire).expect("schema serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let wire: SchemaWire =
            serde_json::from_str(json).map_err(|e| Error::Schema(format!("bad schema: {e}")))?;
        let classes = wire
            .classes
            .into_iter()
            .map(|c| {
                let properties = c
                    .properties
                    .into_iter()
                    .map(|p| {
                        let kind = match p.kind.as_str() {
                            "string" => PropertyKind::Str,
                            "number" => PropertyKind::Number,
                            "category" => PropertyKind::Category(p.labels.unwrap_or_default()),
                            other => {
                                return Err(Error::Schema(format!(
                                    "{}.{}: unknown property kind {other:?}",
                                    c.name, p.name
                                )))
                            }
                        };
                        Ok(PropertyDef {
                            name: p.name,
                            kind,
                            lock_on_first_write: p.lock,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let links = c
                    .links
                    .into_iter()
                    .map(|l| LinkDef {
                        name: l.name,
                        target: l.target,
                        mutable: l.mutable,
                    })
                    .collect();
                Ok(ClassDef {
                    name: c.name,
                    properties,
                    links,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(classes)
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaWire {
    classes: Vec<ClassWire>,
}

#[derive(Serialize, Deserialize)]
struct ClassWire {
    name: String,
    #[serde(default)]
    properties: Vec<PropertyWire>,
    #[serde(default)]
    links: Vec<LinkWire>,
}

#[derive(Serialize, Deserialize)]
struct PropertyWire {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
    #[serde(default)]
    lock: bool,
}

#[derive(Serialize, Deserialize)]
struct LinkWire {
    name: String,
    target: String,
    #[serde(default = "default_true")]
    mutable: bool,
}

fn default_true() -> bool {
    true
}
