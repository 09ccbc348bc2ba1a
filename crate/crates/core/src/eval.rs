//! Held-out evaluation: forced-choice accuracies under teacher forcing,
//! structural quality of greedy parses, and the partition/consistency
//! metrics built on object alignment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::learning::{gold_token_plan, GoldOracle, GoldTokenPlan, RewardKind};
use crate::memory::EpisodeRecord;
use crate::model::Model;
use crate::nn::Tape;
use crate::ontology::{
    align_objects, aligned_link_f1, match_score, ObjectRef, OntologyGraph,
};
use crate::policy::greedy_index;
use crate::reader::{parse, ActionSource, EpisodeTrace, ParseNn, Phase, ReaderConfig};
use crate::reasoner::RuleSet;

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub masking: bool,
    pub use_reasoner: bool,
    pub max_rounds: usize,
    pub reward: RewardKind,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            masking: true,
            use_reasoner: true,
            max_rounds: 8,
            reward: RewardKind::StructureMatch,
        }
    }
}

/// Aggregate metrics over an evaluation set.
///
/// Accuracies come from a teacher-forced pass and count only real choices
/// (non-forced steps with at least two candidates): a step is correct when
/// the model's top-probability candidate is the reference one. Structural
/// metrics come from an independent greedy pass. Accuracies with an empty
/// denominator report 1.0 (vacuously correct).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    /// All scored decisions.
    pub action_acc: f64,
    /// Reading-phase decisions only (attach each mention to an object).
    pub assignment_acc: f64,
    /// Category-label decisions only.
    pub category_acc: f64,
    /// Mean over episodes of the per-sentence aligned link F1 of greedy
    /// parses.
    pub link_f1: f64,
    /// Mean Rand index between the greedy mention partition and the
    /// reference partition.
    pub rand_index: f64,
    /// Mean terminal reward of greedy parses.
    pub mean_reward: f64,
    /// Fraction of episodes whose greedy parse matches the final reference
    /// graph exactly (structure score 1.0).
    pub ontology_acc: f64,
    /// Fraction of episodes whose greedy parse reaches fact-level micro-F1
    /// of at least 0.95 against the final reference graph.
    pub ontology_acc95: f64,
}

/// Run both evaluation passes over `records`.
pub fn evaluate(
    model: &Model,
    rules: &RuleSet,
    records: &[EpisodeRecord],
    opts: &EvalOptions,
) -> Result<EvalSummary> {
    if records.is_empty() {
        return Err(Error::EvalError("no records to evaluate".into()));
    }
    let schema = &model.schema;
    let cfg = ReaderConfig {
        masking: opts.masking,
        use_reasoner: opts.use_reasoner,
        max_rounds: opts.max_rounds,
        nn: ParseNn::Full,
        collect_loss: false,
    };

    let mut action = Counter::default();
    let mut assignment = Counter::default();
    let mut category = Counter::default();
    let mut link_f1_sum = 0.0;
    let mut ri_sum = 0.0;
    let mut reward_sum = 0.0;
    let mut exact = 0usize;
    let mut near = 0usize;

    for rec in records {
        let plan = gold_token_plan(schema, rec)?;

        // Teacher-forced pass: how often does the greedy choice agree with
        // the reference action?
        {
            let mut oracle = GoldOracle::new(schema, rules, rec)?;
            let mut source = ActionSource::Oracle(&mut oracle);
            let mut tape = Tape::new();
            let out = parse(schema, rules, Some(model), Some(&mut tape), rec, &cfg, &mut source)?;
            for step in &out.trace.steps {
                if step.forced || step.candidates.len() < 2 {
                    continue;
                }
                let hit = greedy_index(&step.probs) == step.chosen;
                action.add(hit);
                match step.phase {
                    Phase::Token => assignment.add(hit),
                    Phase::MilestoneEdit => {
                        if step
                            .candidates
                            .iter()
                            .any(|c| matches!(c, Action::UpdateCategory { .. }))
                        {
                            category.add(hit);
                        }
                    }
                    _ => {}
                }
            }
        }

        // Greedy pass: structural quality without any reference guidance.
        {
            let mut source = ActionSource::Greedy;
            let mut tape = Tape::new();
            let out = parse(schema, rules, Some(model), Some(&mut tape), rec, &cfg, &mut source)?;
            if out.snapshots.len() != rec.snapshots.len() {
                return Err(Error::EvalError(format!(
                    "parse produced {} sentence snapshots, reference has {}",
                    out.snapshots.len(),
                    rec.snapshots.len()
                )));
            }
            if !rec.snapshots.is_empty() {
                let mut f1 = 0.0;
                for (p, g) in out.snapshots.iter().zip(&rec.snapshots) {
                    let pg = OntologyGraph::from_dump(schema, p)?;
                    let gg = OntologyGraph::from_dump(schema, g)?;
                    f1 += aligned_link_f1(&pg, &gg);
                }
                link_f1_sum += f1 / rec.snapshots.len() as f64;
            } else {
                link_f1_sum += 1.0;
            }
            let gold_final = OntologyGraph::from_dump(schema, rec.final_snapshot()?)?;
            reward_sum += match opts.reward {
                RewardKind::StructureMatch => match_score(&out.graph, &gold_final),
                RewardKind::Consistency => consistency_micro_f1(&out.graph, &gold_final),
            };
            if match_score(&out.graph, &gold_final) == 1.0 {
                exact += 1;
            }
            if consistency_micro_f1(&out.graph, &gold_final) >= 0.95 {
                near += 1;
            }
            let (a, b) = mention_partition(&plan, &out.trace);
            ri_sum += rand_index(&a, &b)?;
        }
    }

    let n = records.len() as f64;
    Ok(EvalSummary {
        episodes: records.len(),
        action_acc: action.rate(),
        assignment_acc: assignment.rate(),
        category_acc: category.rate(),
        link_f1: link_f1_sum / n,
        rand_index: ri_sum / n,
        mean_reward: reward_sum / n,
        ontology_acc: exact as f64 / n,
        ontology_acc95: near as f64 / n,
    })
}

#[derive(Default)]
struct Counter {
    hits: usize,
    total: usize,
}

impl Counter {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.hits += hit as usize;
    }

    fn rate(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }
}

/// Label vectors (predicted, reference) over the tagged token positions,
/// for partition comparison. A mention the parse attached to no object gets
/// its own singleton label.
pub fn mention_partition(plan: &GoldTokenPlan, trace: &EpisodeTrace) -> (Vec<String>, Vec<String>) {
    let pred: BTreeMap<usize, Option<ObjectRef>> = trace.attachments().into_iter().collect();
    let mut a = Vec::with_capacity(plan.attachments.len());
    let mut b = Vec::with_capacity(plan.attachments.len());
    for (pos, gold_ref) in &plan.attachments {
        b.push(gold_ref.to_string());
        a.push(match pred.get(pos) {
            Some(Some(r)) => r.to_string(),
            _ => format!("none-{pos}"),
        });
    }
    (a, b)
}

/// Rand index between two partitions given as per-element labels: the
/// fraction of element pairs on which the partitions agree (both together
/// or both apart). Fewer than two elements is trivially 1.0.
pub fn rand_index(a: &[String], b: &[String]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::EvalError(format!(
            "partition sizes differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    let mut cells: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    let mut rows: BTreeMap<&str, u64> = BTreeMap::new();
    let mut cols: BTreeMap<&str, u64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *cells.entry((x.as_str(), y.as_str())).or_insert(0) += 1;
        *rows.entry(x.as_str()).or_insert(0) += 1;
        *cols.entry(y.as_str()).or_insert(0) += 1;
    }
    let c2 = |k: u64| (k * (k - 1) / 2) as f64;
    let s_cells: f64 = cells.values().map(|&k| c2(k)).sum();
    let s_rows: f64 = rows.values().map(|&k| c2(k)).sum();
    let s_cols: f64 = cols.values().map(|&k| c2(k)).sum();
    let pairs = c2(n as u64);
    Ok((pairs + 2.0 * s_cells - s_rows - s_cols) / pairs)
}

/// Fact-level micro-F1 between a parsed graph and a reference graph.
///
/// Objects are aligned first; each graph is then flattened into a set of
/// string facts — object existence, property values, link triples — with
/// aligned objects named by their reference identity and unaligned
/// predicted objects by a prefix that can never match. Two empty graphs
/// count as 1.0.
pub fn consistency_micro_f1(pred: &OntologyGraph, gold: &OntologyGraph) -> f64 {
    use std::collections::BTreeSet;
    let alignment = align_objects(pred, gold);
    let pred_id = |r: &ObjectRef| match alignment.map(r) {
        Some(g) => g.to_string(),
        None => format!("pred!{r}"),
    };

    let mut pred_facts: BTreeSet<String> = BTreeSet::new();
    for o in pred.all_objects() {
        let id = pred_id(&o.object_ref());
        pred_facts.insert(format!("obj:{id}"));
        for (name, slot) in o.props() {
            pred_facts.insert(format!("prop:{id}.{name}={}", slot.value.as_str()));
        }
    }
    for l in pred.links() {
        pred_facts.insert(format!(
            "link:{}:{}:{}",
            pred_id(&l.src),
            l.link,
            pred_id(&l.dst)
        ));
    }

    let mut gold_facts: BTreeSet<String> = BTreeSet::new();
    for o in gold.all_objects() {
        let id = o.object_ref().to_string();
        gold_facts.insert(format!("obj:{id}"));
        for (name, slot) in o.props() {
            gold_facts.insert(format!("prop:{id}.{name}={}", slot.value.as_str()));
        }
    }
    for l in gold.links() {
        gold_facts.insert(format!("link:{}:{}:{}", l.src, l.link, l.dst));
    }

    if pred_facts.is_empty() && gold_facts.is_empty() {
        return 1.0;
    }
    let tp = pred_facts.intersection(&gold_facts).count() as f64;
    let fp = pred_facts.difference(&gold_facts).count() as f64;
    let fn_ = gold_facts.difference(&pred_facts).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::episode_reward;
    use crate::model::{Dims, Vocab};
    use crate::ontology::Schema;
    use crate::worldsim::{
        dynamic_rules, dynamic_schema, generate_dynamic, report_schema, DynConfig,
    };
    use proptest::prelude::*;

    fn labels(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rand_index_frozen_examples() {
        // Identical partitions agree on every pair.
        let a = labels(&["a", "a", "b", "b"]);
        assert_eq!(rand_index(&a, &a).unwrap(), 1.0);
        // Renaming the groups changes nothing.
        let b = labels(&["x", "x", "y", "y"]);
        assert_eq!(rand_index(&a, &b).unwrap(), 1.0);
        // Crossed grouping: only the two fully-apart pairs agree.
        let c = labels(&["x", "y", "x", "y"]);
        assert!((rand_index(&a, &c).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        // Singletons against one block: no pair agrees.
        let d = labels(&["1", "2", "3"]);
        let e = labels(&["x", "x", "x"]);
        assert_eq!(rand_index(&d, &e).unwrap(), 0.0);
        // Degenerate sizes are trivially perfect.
        assert_eq!(rand_index(&labels(&["a"]), &labels(&["b"])).unwrap(), 1.0);
        assert_eq!(rand_index(&[], &[]).unwrap(), 1.0);
        // Mismatched lengths are a caller error.
        assert!(rand_index(&a, &d).is_err());
    }

    /// O(n^2) reference implementation: count agreeing pairs directly.
    fn rand_index_brute(a: &[String], b: &[String]) -> f64 {
        let n = a.len();
        if n < 2 {
            return 1.0;
        }
        let mut agree = 0u64;
        let mut total = 0u64;
        for i in 0..n {
            for j in (i + 1)..n {
                total += 1;
                let together_a = a[i] == a[j];
                let together_b = b[i] == b[j];
                if together_a == together_b {
                    agree += 1;
                }
            }
        }
        agree as f64 / total as f64
    }

    proptest! {
        #[test]
        fn rand_index_matches_pairwise_counting(
            pairs in prop::collection::vec((0u8..4, 0u8..4), 2..40)
        ) {
            let a: Vec<String> = pairs.iter().map(|(x, _)| format!("a{x}")).collect();
            let b: Vec<String> = pairs.iter().map(|(_, y)| format!("b{y}")).collect();
            let fast = rand_index(&a, &b).unwrap();
            let slow = rand_index_brute(&a, &b);
            prop_assert!((fast - slow).abs() < 1e-12, "fast {fast} vs slow {slow}");
        }

        #[test]
        fn rand_index_stays_in_unit_range(
            pairs in prop::collection::vec((0u8..6, 0u8..6), 0..50)
        ) {
            let a: Vec<String> = pairs.iter().map(|(x, _)| format!("a{x}")).collect();
            let b: Vec<String> = pairs.iter().map(|(_, y)| format!("b{y}")).collect();
            let ri = rand_index(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&ri));
        }
    }

    fn person_location(schema: &Schema, name: &str) -> OntologyGraph {
        let mut g = OntologyGraph::new();
        let p = g.create_object(schema, "Person", 1).unwrap();
        g.set_property(schema, &p, "Name", name, 2).unwrap();
        let l = g.create_object(schema, "Location", 3).unwrap();
        g.set_property(schema, &l, "Name", "garden", 4).unwrap();
        g.add_link(schema, &p, "locate", &l, 5).unwrap();
        g
    }

    #[test]
    fn consistency_is_perfect_on_identical_graphs() {
        let schema = dynamic_schema();
        let a = person_location(&schema, "John");
        let b = person_location(&schema, "John");
        assert_eq!(consistency_micro_f1(&a, &b), 1.0);
        let empty = OntologyGraph::new();
        assert_eq!(consistency_micro_f1(&empty, &empty), 1.0);
        assert_eq!(consistency_micro_f1(&empty, &a), 0.0);
    }

    #[test]
    fn consistency_penalises_a_misnamed_object() {
        let schema = dynamic_schema();
        let pred = person_location(&schema, "Jane");
        let gold = person_location(&schema, "John");
        // The misnamed person cannot align: its three facts are spurious and
        // the reference person's three facts are missed; only the location's
        // two facts match. F1 = 2*2 / (2*2 + 3 + 3).
        assert!((consistency_micro_f1(&pred, &gold) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn consistency_penalises_a_wrong_category_value() {
        let schema = report_schema();
        let mk = |gender: &str| {
            let mut g = OntologyGraph::new();
            let p = g.create_object(&schema, "Person", 1).unwrap();
            g.set_property(&schema, &p, "Name", "John", 2).unwrap();
            g.set_property(&schema, &p, "Gender", gender, 3).unwrap();
            g
        };
        let pred = mk("female");
        let gold = mk("male");
        // Aligned by name; object + Name agree, Gender differs on both
        // sides: F1 = 2*2 / (2*2 + 1 + 1).
        assert!((consistency_micro_f1(&pred, &gold) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn teacher_forced_attachments_match_the_reference_partition() {
        let schema = dynamic_schema();
        let rules = dynamic_rules();
        let records = generate_dynamic(&DynConfig::default(), 5, 91);
        for rec in &records {
            let plan = gold_token_plan(&schema, rec).unwrap();
            let mut oracle = GoldOracle::new(&schema, &rules, rec).unwrap();
            let mut source = ActionSource::Oracle(&mut oracle);
            let cfg = ReaderConfig { nn: ParseNn::SymbolicOnly, ..ReaderConfig::default() };
            let out = parse(&schema, &rules, None, None, rec, &cfg, &mut source).unwrap();
            let (a, b) = mention_partition(&plan, &out.trace);
            assert_eq!(a.len(), rec.tags.len());
            assert_eq!(rand_index(&a, &b).unwrap(), 1.0);
        }
    }

    #[test]
    fn evaluate_reports_unit_range_metrics_for_a_fresh_model() {
        let schema = dynamic_schema();
        let rules = dynamic_rules();
        let cfg = DynConfig { min_sentences: 2, max_sentences: 4 };
        let records = generate_dynamic(&cfg, 4, 17);
        let vocab = Vocab::build(&records);
        let model = Model::new(schema, vocab, Dims::default(), 1).unwrap();
        let summary = evaluate(&model, &rules, &records, &EvalOptions::default()).unwrap();
        assert_eq!(summary.episodes, 4);
        for v in [
            summary.action_acc,
            summary.assignment_acc,
            summary.category_acc,
            summary.link_f1,
            summary.rand_index,
            summary.mean_reward,
            summary.ontology_acc,
            summary.ontology_acc95,
        ] {
            assert!((0.0..=1.0).contains(&v), "metric out of range: {v}");
        }
        // Dynamic stories have no category slots, so that accuracy is
        // vacuous.
        assert_eq!(summary.category_acc, 1.0);
        assert!(evaluate(&model, &rules, &[], &EvalOptions::default()).is_err());
    }

    #[test]
    fn rewards_agree_with_the_underlying_scores() {
        let schema = dynamic_schema();
        let a = person_location(&schema, "John");
        let dump = a.dump();
        let r1 = episode_reward(RewardKind::StructureMatch, &schema, &a, &dump).unwrap();
        let r2 = episode_reward(RewardKind::Consistency, &schema, &a, &dump).unwrap();
        assert_eq!(r1, 1.0);
        assert_eq!(r2, 1.0);
    }
}
