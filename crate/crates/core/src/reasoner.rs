//! Symbolic rule closure over the object graph.
//!
//! Rules fire on effective link changes (an add that was absent, a delete
//! that was present) and emit further link changes, which are applied and
//! may trigger more rules, wave by wave, until a fixpoint. A wave cap turns
//! non-terminating rule sets into an error instead of a hang.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::{LinkTriple, ObjectRef, OntologyGraph, Schema};

/// Maximum number of propagation waves before the closure is declared
/// non-terminating.
pub const MAX_CLOSURE_PASSES: usize = 8;

/// Direction of a link change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkOp {
    Add,
    Del,
}

/// One effective link change, either performed directly or derived by rules.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ChangeEvent {
    pub op: LinkOp,
    pub triple: LinkTriple,
}

impl ChangeEvent {
    pub fn add(triple: LinkTriple) -> Self {
        ChangeEvent { op: LinkOp::Add, triple }
    }

    pub fn del(triple: LinkTriple) -> Self {
        ChangeEvent { op: LinkOp::Del, triple }
    }
}

/// Which end of the triggering link a binding refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerEnd {
    Src,
    Dst,
}

/// Object-set expression inside a rule effect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BindExpr {
    /// The triggering link's source or destination object.
    End(TriggerEnd),
    /// Any object (delete effects only).
    Any,
    /// Any object except the bound end (delete effects only).
    Except(TriggerEnd),
    /// Follow `link` from the bound end; resolves only when exactly one
    /// destination exists, otherwise the effect silently does not fire.
    Via { link: String, base: TriggerEnd },
}

impl BindExpr {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "$src" => return Ok(BindExpr::End(TriggerEnd::Src)),
            "$dst" => return Ok(BindExpr::End(TriggerEnd::Dst)),
            "*" => return Ok(BindExpr::Any),
            "!$src" => return Ok(BindExpr::Except(TriggerEnd::Src)),
            "!$dst" => return Ok(BindExpr::Except(TriggerEnd::Dst)),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("via:") {
            if let Some((link, base)) = rest.rsplit_once(':') {
                let base = match base {
                    "$src" => TriggerEnd::Src,
                    "$dst" => TriggerEnd::Dst,
                    _ => {
                        return Err(Error::ClosureError(format!(
                            "via binding must end in $src or $dst: {s:?}"
                        )))
                    }
                };
                if link.is_empty() {
                    return Err(Error::ClosureError(format!("empty via link in {s:?}")));
                }
                return Ok(BindExpr::Via { link: link.to_string(), base });
            }
        }
        Err(Error::ClosureError(format!("unrecognized binding expression {s:?}")))
    }

    pub fn render(&self) -> String {
        match self {
            BindExpr::End(TriggerEnd::Src) => "$src".into(),
            BindExpr::End(TriggerEnd::Dst) => "$dst".into(),
            BindExpr::Any => "*".into(),
            BindExpr::Except(TriggerEnd::Src) => "!$src".into(),
            BindExpr::Except(TriggerEnd::Dst) => "!$dst".into(),
            BindExpr::Via { link, base } => format!(
                "via:{link}:{}",
                match base {
                    TriggerEnd::Src => "$src",
                    TriggerEnd::Dst => "$dst",
                }
            ),
        }
    }
}

/// Condition a change event must match for a rule to fire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trigger {
    pub op: LinkOp,
    pub link: String,
}

/// One link change a fired rule performs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Effect {
    pub op: LinkOp,
    pub link: String,
    pub src: BindExpr,
    pub dst: BindExpr,
}

/// A named closure rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub name: String,
    pub on: Trigger,
    pub effects: Vec<Effect>,
}

/// Ordered collection of rules; order is the firing order within a wave.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

// ---------------------------------------------------------------- JSON wire

#[derive(Serialize, Deserialize)]
struct TriggerWire {
    op: LinkOp,
    link: String,
}

#[derive(Serialize, Deserialize)]
struct EffectWire {
    op: LinkOp,
    link: String,
    src: String,
    dst: String,
}

#[derive(Serialize, Deserialize)]
struct RuleWire {
    name: String,
    on: TriggerWire,
    #[serde(rename = "do")]
    effects: Vec<EffectWire>,
}

#[derive(Serialize, Deserialize)]
struct RuleSetWire {
    rules: Vec<RuleWire>,
}

impl RuleSet {
    pub fn to_json(&self) -> Result<String> {
        let wire = RuleSetWire {
            rules: self
                .rules
                .iter()
                .map(|r| RuleWire {
                    name: r.name.clone(),
                    on: TriggerWire { op: r.on.op, link: r.on.link.clone() },
                    effects: r
                        .effects
                        .iter()
                        .map(|e| EffectWire {
                            op: e.op,
                            link: e.link.clone(),
                            src: e.src.render(),
                            dst: e.dst.render(),
                        })
                        .collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&wire)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: RuleSetWire = serde_json::from_str(text)?;
        let mut rules = Vec::new();
        for rw in wire.rules {
            let effects = rw
                .effects
                .into_iter()
                .map(|ew| {
                    Ok(Effect {
                        op: ew.op,
                        link: ew.link,
                        src: BindExpr::parse(&ew.src)?,
                        dst: BindExpr::parse(&ew.dst)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rules.push(Rule {
                name: rw.name,
                on: Trigger { op: rw.on.op, link: rw.on.link },
                effects,
            });
        }
        let set = RuleSet { rules };
        set.validate_shapes()?;
        Ok(set)
    }

    /// Structural checks that do not need a schema: add effects must bind
    /// both ends concretely, and rules must have at least one effect.
    pub fn validate_shapes(&self) -> Result<()> {
        for rule in &self.rules {
            if rule.effects.is_empty() {
                return Err(Error::ClosureError(format!("rule {} has no effects", rule.name)));
            }
            for e in &rule.effects {
                if e.op == LinkOp::Add {
                    let concrete = |b: &BindExpr| {
                        matches!(b, BindExpr::End(_) | BindExpr::Via { .. })
                    };
                    if !concrete(&e.src) || !concrete(&e.dst) {
                        return Err(Error::ClosureError(format!(
                            "rule {}: add effects need concrete bindings",
                            rule.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Check every referenced link name exists on at least one class.
    pub fn validate_against(&self, schema: &Schema) -> Result<()> {
        self.validate_shapes()?;
        let link_exists = |name: &str| {
            schema
                .classes()
                .iter()
                .any(|c| c.links.iter().any(|l| l.name == name))
        };
        for rule in &self.rules {
            if !link_exists(&rule.on.link) {
                return Err(Error::ClosureError(format!(
                    "rule {}: trigger link {} not in schema",
                    rule.name, rule.on.link
                )));
            }
            for e in &rule.effects {
                if !link_exists(&e.link) {
                    return Err(Error::ClosureError(format!(
                        "rule {}: effect link {} not in schema",
                        rule.name, e.link
                    )));
                }
                if let BindExpr::Via { link, .. } = &e.src {
                    if !link_exists(link) {
                        return Err(Error::ClosureError(format!(
                            "rule {}: via link {link} not in schema",
                            rule.name
                        )));
                    }
                }
                if let BindExpr::Via { link, .. } = &e.dst {
                    if !link_exists(link) {
                        return Err(Error::ClosureError(format!(
                            "rule {}: via link {link} not in schema",
                            rule.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn trigger_end(ev: &ChangeEvent, end: TriggerEnd) -> &ObjectRef {
    match end {
        TriggerEnd::Src => &ev.triple.src,
        TriggerEnd::Dst => &ev.triple.dst,
    }
}

/// Resolve a binding to the set of concrete objects it selects, given the
/// triggering event. `None` means "unconstrained" (Any), used only when
/// filtering existing links for deletion. `Some(vec![])` means the binding
/// did not resolve (ambiguous or absent via), so the effect does not fire.
fn resolve_binding(
    graph: &OntologyGraph,
    ev: &ChangeEvent,
    expr: &BindExpr,
) -> Option<Vec<ObjectRef>> {
    match expr {
        BindExpr::End(end) => Some(vec![trigger_end(ev, *end).clone()]),
        BindExpr::Any => None,
        BindExpr::Except(_) => None, // handled as a filter, not a set
        BindExpr::Via { link, base } => {
            let from = trigger_end(ev, *base);
            let targets = graph.links_from(from, link);
            if targets.len() == 1 {
                Some(vec![targets[0].dst.clone()])
            } else {
                Some(vec![])
            }
        }
    }
}

/// Whether `obj` passes a binding used as a filter over existing links.
fn binding_filter(
    graph: &OntologyGraph,
    ev: &ChangeEvent,
    expr: &BindExpr,
    obj: &ObjectRef,
) -> bool {
    match expr {
        BindExpr::Any => true,
        BindExpr::Except(end) => obj != trigger_end(ev, *end),
        other => match resolve_binding(graph, ev, other) {
            Some(set) => set.contains(obj),
            None => true,
        },
    }
}

fn fire_rule(
    graph: &mut OntologyGraph,
    schema: &Schema,
    rule: &Rule,
    ev: &ChangeEvent,
    t: u64,
) -> Result<Vec<ChangeEvent>> {
    let mut out = Vec::new();
    for effect in &rule.effects {
        match effect.op {
            LinkOp::Del => {
                // Enumerate present links with this name, filter both ends.
                let victims: Vec<LinkTriple> = {
                    let g: &OntologyGraph = graph;
                    g.links()
                        .filter(|l| l.link == effect.link)
                        .filter(|l| binding_filter(g, ev, &effect.src, &l.src))
                        .filter(|l| binding_filter(g, ev, &effect.dst, &l.dst))
                        .cloned()
                        .collect()
                };
                for v in victims {
                    if graph.del_link(schema, &v.src, &v.link, &v.dst, t)? {
                        out.push(ChangeEvent::del(v));
                    }
                }
            }
            LinkOp::Add => {
                let srcs = resolve_binding(graph, ev, &effect.src)
                    .expect("validated: add bindings are concrete");
                let dsts = resolve_binding(graph, ev, &effect.dst)
                    .expect("validated: add bindings are concrete");
                for s in &srcs {
                    for d in &dsts {
                        if graph.add_link(schema, s, &effect.link, d, t)? {
                            out.push(ChangeEvent::add(LinkTriple::new(
                                s.clone(),
                                effect.link.clone(),
                                d.clone(),
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Propagate rules from the seed changes until no rule makes an effective
/// change. Returns every derived change in application order.
pub fn apply_closure(
    graph: &mut OntologyGraph,
    schema: &Schema,
    rules: &RuleSet,
    seed: &[ChangeEvent],
    t: u64,
) -> Result<Vec<ChangeEvent>> {
    let mut wave: Vec<ChangeEvent> = seed.to_vec();
    let mut derived = Vec::new();
    let mut pass = 0usize;
    while !wave.is_empty() {
        if pass >= MAX_CLOSURE_PASSES {
            return Err(Error::ClosureError(format!(
                "rule closure did not reach a fixpoint within {MAX_CLOSURE_PASSES} passes"
            )));
        }
        let mut next = Vec::new();
        for ev in &wave {
            for rule in &rules.rules {
                if rule.on.op == ev.op && rule.on.link == ev.triple.link {
                    let produced = fire_rule(graph, schema, rule, ev, t)?;
                    derived.extend(produced.iter().cloned());
                    next.extend(produced);
                }
            }
        }
        wave = next;
        pass += 1;
    }
    Ok(derived)
}

/// Fixpoint check: replaying an add event for every present link must cause
/// no effective change. Returns human-readable violations (empty = clean).
pub fn consistency_check(
    graph: &OntologyGraph,
    schema: &Schema,
    rules: &RuleSet,
) -> Result<Vec<String>> {
    let mut violations = Vec::new();
    let links: Vec<LinkTriple> = graph.links().cloned().collect();
    for link in links {
        let mut probe = graph.clone();
        let ev = ChangeEvent::add(link.clone());
        let derived = apply_closure(&mut probe, schema, rules, &[ev], u64::MAX)?;
        for d in derived {
            let verb = match d.op {
                LinkOp::Add => "missing",
                LinkOp::Del => "stale",
            };
            violations.push(format!("{verb} link {} (replaying {})", d.triple, link));
        }
    }
    violations.sort();
    violations.dedup();
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{ClassDef, LinkDef, PropertyDef, PropertyKind};

    fn world_schema() -> Schema {
        let name_prop = PropertyDef {
            name: "Name".into(),
            kind: PropertyKind::Str,
            lock_on_first_write: true,
        };
        Schema::new(vec![
            ClassDef {
                name: "Person".into(),
                properties: vec![name_prop.clone()],
                links: vec![
                    LinkDef { name: "carry".into(), target: "Item".into(), mutable: true },
                    LinkDef { name: "locate".into(), target: "Location".into(), mutable: true },
                ],
            },
            ClassDef {
                name: "Item".into(),
                properties: vec![name_prop.clone()],
                links: vec![LinkDef {
                    name: "locate".into(),
                    target: "Location".into(),
                    mutable: true,
                }],
            },
            ClassDef { name: "Location".into(), properties: vec![name_prop], links: vec![] },
        ])
        .unwrap()
    }

    fn world_rules() -> RuleSet {
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

    struct World {
        schema: Schema,
        rules: RuleSet,
        graph: OntologyGraph,
        p: ObjectRef,
        i: ObjectRef,
        l1: ObjectRef,
        l2: ObjectRef,
    }

    fn build_world() -> World {
        let schema = world_schema();
        let mut graph = OntologyGraph::new();
        let p = graph.create_object(&schema, "Person", 0).unwrap();
        let i = graph.create_object(&schema, "Item", 1).unwrap();
        let l1 = graph.create_object(&schema, "Location", 2).unwrap();
        let l2 = graph.create_object(&schema, "Location", 3).unwrap();
        World { schema, rules: world_rules(), graph, p, i, l1, l2 }
    }

    fn do_link(w: &mut World, op: LinkOp, src: &ObjectRef, link: &str, dst: &ObjectRef, t: u64) {
        let effective = match op {
            LinkOp::Add => w.graph.add_link(&w.schema, src, link, dst, t).unwrap(),
            LinkOp::Del => w.graph.del_link(&w.schema, src, link, dst, t).unwrap(),
        };
        assert!(effective);
        let ev = ChangeEvent {
            op,
            triple: LinkTriple::new(src.clone(), link, dst.clone()),
        };
        apply_closure(&mut w.graph, &w.schema, &w.rules, &[ev], t).unwrap();
    }

    #[test]
    fn moving_replaces_previous_location() {
        let mut w = build_world();
        let (p, l1, l2) = (w.p.clone(), w.l1.clone(), w.l2.clone());
        do_link(&mut w, LinkOp::Add, &p, "locate", &l1, 10);
        do_link(&mut w, LinkOp::Add, &p, "locate", &l2, 11);
        assert!(!w.graph.has_link(&p, "locate", &l1));
        assert!(w.graph.has_link(&p, "locate", &l2));
        assert_eq!(w.graph.link_count(), 1);
    }

    #[test]
    fn pickup_clears_item_location() {
        let mut w = build_world();
        let (p, i, l1) = (w.p.clone(), w.i.clone(), w.l1.clone());
        do_link(&mut w, LinkOp::Add, &i, "locate", &l1, 10);
        do_link(&mut w, LinkOp::Add, &p, "carry", &i, 11);
        assert!(!w.graph.has_link(&i, "locate", &l1));
        assert!(w.graph.has_link(&p, "carry", &i));
    }

    #[test]
    fn drop_places_item_at_carrier_location() {
        let mut w = build_world();
        let (p, i, l2) = (w.p.clone(), w.i.clone(), w.l2.clone());
        do_link(&mut w, LinkOp::Add, &p, "locate", &l2, 10);
        do_link(&mut w, LinkOp::Add, &p, "carry", &i, 11);
        do_link(&mut w, LinkOp::Del, &p, "carry", &i, 12);
        assert!(w.graph.has_link(&i, "locate", &l2));
    }

    #[test]
    fn drop_without_carrier_location_is_skipped() {
        let mut w = build_world();
        let (p, i) = (w.p.clone(), w.i.clone());
        do_link(&mut w, LinkOp::Add, &p, "carry", &i, 10);
        do_link(&mut w, LinkOp::Del, &p, "carry", &i, 11);
        assert_eq!(w.graph.links_from(&i, "locate").len(), 0);
    }

    #[test]
    fn drop_cascade_clears_stale_item_location() {
        // Stale item location + drop: the derived add triggers the
        // single-location rule which removes the stale link.
        let mut w = build_world();
        let (p, i, l1, l2) = (w.p.clone(), w.i.clone(), w.l1.clone(), w.l2.clone());
        w.graph.add_link(&w.schema, &i, "locate", &l1, 5).unwrap();
        w.graph.add_link(&w.schema, &p, "locate", &l2, 6).unwrap();
        w.graph.add_link(&w.schema, &p, "carry", &i, 7).unwrap();
        let removed = w.graph.del_link(&w.schema, &p, "carry", &i, 8).unwrap();
        assert!(removed);
        let ev = ChangeEvent::del(LinkTriple::new(p.clone(), "carry", i.clone()));
        let derived = apply_closure(&mut w.graph, &w.schema, &w.rules, &[ev], 8).unwrap();
        assert!(w.graph.has_link(&i, "locate", &l2));
        assert!(!w.graph.has_link(&i, "locate", &l1));
        assert_eq!(derived.len(), 2); // add new location, del stale one
    }

    #[test]
    fn nonterminating_rules_error_out() {
        let schema = world_schema();
        let flip = RuleSet {
            rules: vec![
                Rule {
                    name: "del-on-add".into(),
                    on: Trigger { op: LinkOp::Add, link: "locate".into() },
                    effects: vec![Effect {
                        op: LinkOp::Del,
                        link: "locate".into(),
                        src: BindExpr::End(TriggerEnd::Src),
                        dst: BindExpr::End(TriggerEnd::Dst),
                    }],
                },
                Rule {
                    name: "add-on-del".into(),
                    on: Trigger { op: LinkOp::Del, link: "locate".into() },
                    effects: vec![Effect {
                        op: LinkOp::Add,
                        link: "locate".into(),
                        src: BindExpr::End(TriggerEnd::Src),
                        dst: BindExpr::End(TriggerEnd::Dst),
                    }],
                },
            ],
        };
        let mut graph = OntologyGraph::new();
        let p = graph.create_object(&schema, "Person", 0).unwrap();
        let l = graph.create_object(&schema, "Location", 1).unwrap();
        graph.add_link(&schema, &p, "locate", &l, 2).unwrap();
        let ev = ChangeEvent::add(LinkTriple::new(p, "locate", l));
        let err = apply_closure(&mut graph, &schema, &flip, &[ev], 2).unwrap_err();
        assert!(matches!(err, Error::ClosureError(_)));
    }

    #[test]
    fn consistency_flags_double_location_and_carried_item_location() {
        let mut w = build_world();
        let (p, i, l1, l2) = (w.p.clone(), w.i.clone(), w.l1.clone(), w.l2.clone());
        // clean state first
        do_link(&mut w, LinkOp::Add, &p, "locate", &l1, 10);
        do_link(&mut w, LinkOp::Add, &p, "carry", &i, 11);
        assert!(consistency_check(&w.graph, &w.schema, &w.rules).unwrap().is_empty());
        // force a second location without closure
        w.graph.add_link(&w.schema, &p, "locate", &l2, 12).unwrap();
        let v = consistency_check(&w.graph, &w.schema, &w.rules).unwrap();
        assert!(!v.is_empty());
        // carried item with a location is also flagged
        let mut w2 = build_world();
        let (p2, i2, l) = (w2.p.clone(), w2.i.clone(), w2.l1.clone());
        do_link(&mut w2, LinkOp::Add, &p2, "carry", &i2, 10);
        w2.graph.add_link(&w2.schema, &i2, "locate", &l, 11).unwrap();
        assert!(!consistency_check(&w2.graph, &w2.schema, &w2.rules).unwrap().is_empty());
    }

    #[test]
    fn closure_result_is_a_fixpoint() {
        let mut w = build_world();
        let (p, i, l1, l2) = (w.p.clone(), w.i.clone(), w.l1.clone(), w.l2.clone());
        do_link(&mut w, LinkOp::Add, &i, "locate", &l1, 1);
        do_link(&mut w, LinkOp::Add, &p, "locate", &l1, 2);
        do_link(&mut w, LinkOp::Add, &p, "carry", &i, 3);
        do_link(&mut w, LinkOp::Add, &p, "locate", &l2, 4);
        do_link(&mut w, LinkOp::Del, &p, "carry", &i, 5);
        assert!(consistency_check(&w.graph, &w.schema, &w.rules).unwrap().is_empty());
        assert!(w.graph.has_link(&i, "locate", &l2));
    }

    #[test]
    fn ruleset_json_roundtrip() {
        let rules = world_rules();
        let text = rules.to_json().unwrap();
        let back = RuleSet::from_json(&text).unwrap();
        assert_eq!(back, rules);
        assert_eq!(back.to_json().unwrap(), text);
        rules.validate_against(&world_schema()).unwrap();
    }

    #[test]
    fn bad_bindings_are_rejected() {
        assert!(BindExpr::parse("$mid").is_err());
        assert!(BindExpr::parse("via::$src").is_err());
        assert!(BindExpr::parse("via:locate:me").is_err());
        let mut rules = world_rules();
        rules.rules[1].effects[0].src = BindExpr::Any;
        assert!(rules.validate_shapes().is_err());
    }

    #[test]
    fn rules_against_wrong_schema_are_rejected() {
        let schema = world_schema();
        let mut rules = world_rules();
        rules.rules[0].on.link = "owns".into();
        assert!(rules.validate_against(&schema).is_err());
    }
}
