//! Synthetic worlds that emit annotated documents with reference object
//! graphs: a dynamic household world (people moving and carrying things,
//! with link deletions) and a static incident-report world (monotone
//! property- and link-building).

mod dynamic;
mod report;

pub use dynamic::{generate_dynamic, DynConfig};
pub use report::{generate_report, ReportConfig};

use crate::ontology::{ClassDef, LinkDef, PropertyDef, PropertyKind, Schema};
use crate::reasoner::{BindExpr, Effect, LinkOp, Rule, RuleSet, Trigger, TriggerEnd};

fn name_prop() -> PropertyDef {
    PropertyDef {
        name: "Name".into(),
        kind: PropertyKind::Str,
        lock_on_first_write: true,
    }
}

/// Schema of the dynamic household world: persons move between locations
/// and carry items; items rest at locations when not carried.
pub fn dynamic_schema() -> Schema {
    Schema::new(vec![
        ClassDef {
            name: "Person".into(),
            properties: vec![name_prop()],
            links: vec![
                LinkDef { name: "carry".into(), target: "Item".into(), mutable: true },
                LinkDef { name: "locate".into(), target: "Location".into(), mutable: true },
            ],
        },
        ClassDef {
            name: "Item".into(),
            properties: vec![name_prop()],
            links: vec![LinkDef {
                name: "locate".into(),
                target: "Location".into(),
                mutable: true,
            }],
        },
        ClassDef {
            name: "Location".into(),
            properties: vec![name_prop()],
            links: vec![],
        },
    ])
    .expect("dynamic schema is well-formed")
}

/// Closure rules of the dynamic world: picking an item up clears its
/// resting place, dropping places it at the carrier's location (when that
/// location is known and unique), and an object can only be at one place.
pub fn dynamic_rules() -> RuleSet {
    RuleSet {
        rules: vec![
            Rule {
                name: "pickup-clears-item-location".into(),
                on: Trigger { op: LinkOp::Add, link: "carry".into() },
                effects: vec![Effect {
                    op: LinkOp::Del,
                    link: "locate".into(),
                    src: BindExpr::End(TriggerEnd::Dst),
                    dst: BindExpr::Any,
                }],
            },
            Rule {
                name: "drop-places-item".into(),
                on: Trigger { op: LinkOp::Del, link: "carry".into() },
                effects: vec![Effect {
                    op: LinkOp::Add,
                    link: "locate".into(),
                    src: BindExpr::End(TriggerEnd::Dst),
                    dst: BindExpr::Via { link: "locate".into(), base: TriggerEnd::Src },
                }],
            },
            Rule {
                name: "single-location".into(),
                on: Trigger { op: LinkOp::Add, link: "locate".into() },
                effects: vec![Effect {
                    op: LinkOp::Del,
                    link: "locate".into(),
                    src: BindExpr::End(TriggerEnd::Src),
                    dst: BindExpr::Except(TriggerEnd::Dst),
                }],
            },
        ],
    }
}

/// Schema of the incident-report world: one event with a categorical type
/// and a numeric date, involved persons with a categorical gender, and
/// items they held. Links are write-once.
pub fn report_schema() -> Schema {
    Schema::new(vec![
        ClassDef {
            name: "Event".into(),
            properties: vec![
                PropertyDef {
                    name: "Type".into(),
                    kind: PropertyKind::Category(vec![
                        "fire".into(),
                        "flood".into(),
                        "theft".into(),
                        "storm".into(),
                    ]),
                    lock_on_first_write: false,
                },
                PropertyDef {
                    name: "Date".into(),
                    kind: PropertyKind::Number,
                    lock_on_first_write: true,
                },
            ],
            links: vec![LinkDef {
                name: "involve".into(),
                target: "Person".into(),
                mutable: false,
            }],
        },
        ClassDef {
            name: "Person".into(),
            properties: vec![
                name_prop(),
                PropertyDef {
                    name: "Gender".into(),
                    kind: PropertyKind::Category(vec!["female".into(), "male".into()]),
                    lock_on_first_write: false,
                },
            ],
            links: vec![LinkDef { name: "hold".into(), target: "Item".into(), mutable: false }],
        },
        ClassDef {
            name: "Item".into(),
            properties: vec![name_prop()],
            links: vec![],
        },
    ])
    .expect("report schema is well-formed")
}

/// The report world has no state-revision rules; its graphs only grow.
pub fn report_rules() -> RuleSet {
    RuleSet::default()
}
