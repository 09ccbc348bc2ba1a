//! Alignment of predicted objects onto reference objects and the structural
//! match score used both as a terminal reward and for exact-match metrics.

use std::collections::{BTreeMap, BTreeSet};

use crate::ontology::graph::{LinkTriple, ObjectRef, OntologyGraph};
use crate::ontology::NAME_PROP;

/// Mapping from predicted object refs to reference object refs.
#[derive(Debug, Clone, Default)]
pub struct Alignment {
    pub pred_to_gold: BTreeMap<ObjectRef, ObjectRef>,
}

impl Alignment {
    pub fn map(&self, r: &ObjectRef) -> Option<&ObjectRef> {
        self.pred_to_gold.get(r)
    }
}

/// Pair objects of the same class by equal Name property, earliest-created
/// predicted object to earliest-created reference object when several share
/// a name. Objects without a Name (classes that do not declare one, or slots
/// never filled) fall back to positional pairing within their class, in
/// creation order, after the named ones are matched.
pub fn align_objects(pred: &OntologyGraph, gold: &OntologyGraph) -> Alignment {
    let mut out = Alignment::default();
    let classes: BTreeSet<&String> = pred.class_names().chain(gold.class_names()).collect();
    for class in classes {
        // named objects: name -> creation-ordered queue
        let mut gold_named: BTreeMap<&str, Vec<&ObjectRef>> = BTreeMap::new();
        let mut gold_refs: Vec<ObjectRef> = Vec::new();
        for o in gold.objects_of(class) {
            gold_refs.push(o.object_ref());
        }
        let mut gold_ref_named: Vec<Option<&str>> = Vec::new();
        for o in gold.objects_of(class) {
            gold_ref_named.push(o.prop_value(NAME_PROP));
        }
        for (i, name) in gold_ref_named.iter().enumerate() {
            if let Some(n) = name {
                gold_named.entry(n).or_default().push(&gold_refs[i]);
            }
        }
        let mut gold_taken: BTreeSet<&ObjectRef> = BTreeSet::new();
        let mut pred_unnamed: Vec<ObjectRef> = Vec::new();
        for o in pred.objects_of(class) {
            let pr = o.object_ref();
            match o.prop_value(NAME_PROP) {
                Some(name) => {
                    if let Some(queue) = gold_named.get_mut(name) {
                        if let Some(g) = queue.iter().find(|g| !gold_taken.contains(*g)) {
                            gold_taken.insert(g);
                            out.pred_to_gold.insert(pr, (*g).clone());
                            continue;
                        }
                    }
                    // named but unmatched: stays unaligned
                }
                None => pred_unnamed.push(pr),
            }
        }
        // positional pairing for nameless objects on both sides
        let gold_unnamed: Vec<&ObjectRef> = gold_refs
            .iter()
            .zip(gold_ref_named.iter())
            .filter(|(g, n)| n.is_none() && !gold_taken.contains(*g))
            .map(|(g, _)| g)
            .collect();
        for (p, g) in pred_unnamed.into_iter().zip(gold_unnamed) {
            out.pred_to_gold.insert(p, g.clone());
        }
    }
    out
}

fn remapped_links(pred: &OntologyGraph, alignment: &Alignment) -> (Vec<LinkTriple>, usize) {
    let mut mapped = Vec::new();
    let mut unmatched = 0usize;
    for l in pred.links() {
        match (alignment.map(&l.src), alignment.map(&l.dst)) {
            (Some(s), Some(d)) => {
                mapped.push(LinkTriple::new(s.clone(), l.link.clone(), d.clone()))
            }
            _ => unmatched += 1,
        }
    }
    (mapped, unmatched)
}

/// F1 over link triples after alignment remapping. Both-empty counts as a
/// perfect 1.0; one-sided emptiness as 0.0.
pub fn aligned_link_f1(pred: &OntologyGraph, gold: &OntologyGraph) -> f64 {
    let alignment = align_objects(pred, gold);
    link_f1_with_alignment(pred, gold, &alignment)
}

pub(crate) fn link_f1_with_alignment(
    pred: &OntologyGraph,
    gold: &OntologyGraph,
    alignment: &Alignment,
) -> f64 {
    let (mapped, unmatched) = remapped_links(pred, alignment);
    let gold_links: BTreeSet<&LinkTriple> = gold.links().collect();
    let pred_total = mapped.len() + unmatched;
    let gold_total = gold_links.len();
    if pred_total == 0 && gold_total == 0 {
        return 1.0;
    }
    if pred_total == 0 || gold_total == 0 {
        return 0.0;
    }
    let mapped_set: BTreeSet<&LinkTriple> = mapped.iter().collect();
    let tp = mapped_set.intersection(&gold_links).count();
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / pred_total as f64;
    let r = tp as f64 / gold_total as f64;
    2.0 * p * r / (p + r)
}

/// Structural agreement in [0, 1]: the aligned link F1 scaled by per-class
/// object-count agreement (sum of per-class min counts over sum of max
/// counts). The scale factor exists so the score is exactly 1.0 only when
/// the remapped link sets are equal AND every class has the same number of
/// objects on both sides — without it a spurious, never-linked duplicate
/// object would still score a perfect match.
pub fn match_score(pred: &OntologyGraph, gold: &OntologyGraph) -> f64 {
    let f1 = aligned_link_f1(pred, gold);
    let classes: BTreeSet<&String> = pred.class_names().chain(gold.class_names()).collect();
    let (mut min_sum, mut max_sum) = (0usize, 0usize);
    for class in classes {
        let a = pred.count_of(class);
        let b = gold.count_of(class);
        min_sum += a.min(b);
        max_sum += a.max(b);
    }
    let count_agreement = if max_sum == 0 {
        1.0
    } else {
        min_sum as f64 / max_sum as f64
    };
    f1 * count_agreement
}
