//! Model assembly: dimension settings, token vocabulary, the full parameter
//! registry derived from a schema, and checkpoint save/load.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::EpisodeRecord;
use crate::nn::{DenseIds, GruIds, MlpScalarIds, ParamId, ParameterStore, Shape};
use crate::ontology::{PropertyKind, Schema};
use crate::rng::stream_rng;

/// Width of the symbolic history feature block fed to every score head.
pub const ANALYZER_DIM: usize = 28;
/// Width of the mention/object matching feature block for assign scores.
pub const MATCH_FEAT_DIM: usize = 4;
/// Number of link-edit operators (add, del, hold) for the operator table.
pub const LINK_OP_COUNT: usize = 3;

/// Network widths. The inline encoding is twice `d_h` (both directions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub d_emb: usize,
    pub d_h: usize,
    pub d_s: usize,
    pub d_obj: usize,
    pub d_ctx: usize,
    pub d_sym: usize,
    pub d_act: usize,
    pub mlp_hidden: usize,
    pub slot_embed: usize,
    pub op_embed: usize,
    /// Time horizon used to scale recency features into [0, 1].
    pub recency_cap: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            d_emb: 32,
            d_h: 32,
            d_s: 64,
            d_obj: 32,
            d_ctx: 64,
            d_sym: 8,
            d_act: 8,
            mlp_hidden: 64,
            slot_embed: 16,
            op_embed: 8,
            recency_cap: 32,
        }
    }
}

impl Dims {
    pub fn d_inl(&self) -> usize {
        2 * self.d_h
    }

    /// Input width of the carry-on memory cell: inline encoding plus the
    /// symbolic class and action-kind embeddings of the step just taken.
    pub fn ctrl_input(&self) -> usize {
        self.d_inl() + self.d_sym + self.d_act
    }
}

/// Token vocabulary with a reserved id 0 for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

pub const UNK_TOKEN: &str = "<unk>";

impl Vocab {
    /// Collect the sorted set of tokens appearing in the records.
    pub fn build(records: &[EpisodeRecord]) -> Self {
        let mut set: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
        for r in records {
            for t in &r.tokens {
                set.insert(t);
            }
        }
        let mut tokens = vec![UNK_TOKEN.to_string()];
        tokens.extend(set.into_iter().filter(|t| *t != UNK_TOKEN).map(str::to_string));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::ConfigError(format!(
                "vocabulary must start with {UNK_TOKEN}"
            )));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::ConfigError(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Resolved parameter handles for every component of the network.
#[derive(Debug, Clone)]
pub struct Handles {
    pub embed_token: ParamId,
    pub enc_fw: GruIds,
    pub enc_bw: GruIds,
    pub ctrl: GruIds,
    pub embed_symclass: ParamId,
    pub embed_actkind: ParamId,
    pub embed_slot: ParamId,
    pub embed_linkop: ParamId,
    pub ctx: DenseIds,
    pub virt: BTreeMap<String, DenseIds>,
    pub score_new: BTreeMap<String, MlpScalarIds>,
    pub score_assign: BTreeMap<String, MlpScalarIds>,
    pub score_none: MlpScalarIds,
    pub obj_update: DenseIds,
    pub update_x: MlpScalarIds,
    pub link2what: MlpScalarIds,
    /// (class, property) -> label-logit head for category-valued slots.
    pub cat_heads: BTreeMap<(String, String), DenseIds>,
}

/// Rows of the slot-embedding table: one per distinct slot name plus a
/// trailing row for the "no slot" option.
pub fn slot_vocabulary(schema: &Schema) -> Vec<String> {
    let mut names = std::collections::BTreeSet::new();
    for class in schema.classes() {
        for p in &class.properties {
            names.insert(p.name.clone());
        }
        for l in &class.links {
            names.insert(l.name.clone());
        }
    }
    names.into_iter().collect()
}

/// A schema-specific network: parameters plus resolved handles.
#[derive(Debug, Clone)]
pub struct Model {
    pub dims: Dims,
    pub vocab: Vocab,
    pub schema: Schema,
    pub store: ParameterStore,
    pub handles: Handles,
    slot_index: BTreeMap<String, usize>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Model {
    pub fn new(schema: Schema, vocab: Vocab, dims: Dims, seed: u64) -> Result<Self> {
        let mut store = ParameterStore::new();
        let mut rng = stream_rng(seed, "init", 0);
        let d = &dims;
        let n_classes = schema.classes().len();

        let embed_token =
            store.add_matrix_glorot("embed.token", vocab.len(), d.d_emb, &mut rng)?;
        let enc_fw = GruIds::register(&mut store, "enc.fw", d.d_emb, d.d_h, &mut rng)?;
        let enc_bw = GruIds::register(&mut store, "enc.bw", d.d_emb, d.d_h, &mut rng)?;
        let ctrl = GruIds::register(&mut store, "ctrl", d.ctrl_input(), d.d_s, &mut rng)?;
        let embed_symclass =
            store.add_matrix_glorot("embed.symclass", n_classes + 1, d.d_sym, &mut rng)?;
        let embed_actkind = store.add_matrix_glorot(
            "embed.actkind",
            crate::action::ActionKind::COUNT,
            d.d_act,
            &mut rng,
        )?;
        let slots = slot_vocabulary(&schema);
        let embed_slot =
            store.add_matrix_glorot("embed.slot", slots.len() + 1, d.slot_embed, &mut rng)?;
        let embed_linkop =
            store.add_matrix_glorot("embed.linkop", LINK_OP_COUNT, d.op_embed, &mut rng)?;
        let ctx = DenseIds::register(
            &mut store,
            "ctx",
            d.d_inl() + d.d_s,
            d.d_ctx,
            &mut rng,
        )?;

        let mut virt = BTreeMap::new();
        let mut score_new = BTreeMap::new();
        let mut score_assign = BTreeMap::new();
        for class in schema.classes() {
            let c = &class.name;
            virt.insert(
                c.clone(),
                DenseIds::register(&mut store, &format!("virt.{c}"), d.d_ctx, d.d_obj, &mut rng)?,
            );
            score_new.insert(
                c.clone(),
                MlpScalarIds::register(
                    &mut store,
                    &format!("score_new.{c}"),
                    d.d_obj + d.d_ctx + ANALYZER_DIM,
                    d.mlp_hidden,
                    &mut rng,
                )?,
            );
            score_assign.insert(
                c.clone(),
                MlpScalarIds::register(
                    &mut store,
                    &format!("score_assign.{c}"),
                    d.d_obj + d.d_ctx + ANALYZER_DIM + MATCH_FEAT_DIM,
                    d.mlp_hidden,
                    &mut rng,
                )?,
            );
        }
        let score_none = MlpScalarIds::register(
            &mut store,
            "score_none",
            d.d_ctx + ANALYZER_DIM,
            d.mlp_hidden,
            &mut rng,
        )?;
        let obj_update = DenseIds::register(
            &mut store,
            "obj_update",
            d.d_obj + d.d_ctx,
            d.d_obj,
            &mut rng,
        )?;
        let update_x = MlpScalarIds::register(
            &mut store,
            "update_x",
            d.d_obj + d.d_ctx + d.slot_embed,
            d.mlp_hidden,
            &mut rng,
        )?;
        let link2what = MlpScalarIds::register(
            &mut store,
            "link2what",
            d.d_obj + d.d_ctx + d.d_obj + d.op_embed + 1,
            d.mlp_hidden,
            &mut rng,
        )?;
        let mut cat_heads = BTreeMap::new();
        for class in schema.classes() {
            for p in &class.properties {
                if let PropertyKind::Category(labels) = &p.kind {
                    cat_heads.insert(
                        (class.name.clone(), p.name.clone()),
                        DenseIds::register(
                            &mut store,
                            &format!("cat.{}.{}", class.name, p.name),
                            d.d_obj + d.d_ctx,
                            labels.len(),
                            &mut rng,
                        )?,
                    );
                }
            }
        }

        let slot_index = slots
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Model {
            dims,
            vocab,
            schema,
            store,
            handles: Handles {
                embed_token,
                enc_fw,
                enc_bw,
                ctrl,
                embed_symclass,
                embed_actkind,
                embed_slot,
                embed_linkop,
                ctx,
                virt,
                score_new,
                score_assign,
                score_none,
                obj_update,
                update_x,
                link2what,
                cat_heads,
            },
            slot_index,
        })
    }

    /// All-zero parameters: score heads emit constant 0, so candidate
    /// distributions are exactly uniform. Used to pin tests.
    pub fn new_zeroed(schema: Schema, vocab: Vocab, dims: Dims) -> Result<Self> {
        let mut m = Model::new(schema, vocab, dims, 0)?;
        for id in m.store.ids_by_name() {
            for v in m.store.value_mut(id) {
                *v = 0.0;
            }
        }
        Ok(m)
    }

    /// Row of the slot-embedding table for a slot name; the extra trailing
    /// row encodes "no slot".
    pub fn slot_row(&self, name: &str) -> Result<usize> {
        self.slot_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("unknown slot name {name:?}")))
    }

    pub fn none_slot_row(&self) -> usize {
        self.slot_index.len()
    }

    /// Row of the symbolic class embedding; the extra trailing row encodes
    /// "no entity here".
    pub fn symclass_row(&self, class: Option<&str>) -> Result<usize> {
        match class {
            None => Ok(self.schema.classes().len()),
            Some(c) => self.schema.class_position(c),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut params = Vec::new();
        for id in self.store.ids_by_name() {
            params.push(ParamWire {
                name: self.store.name(id).to_string(),
                shape: self.store.shape(id),
                values: self.store.value(id).to_vec(),
            });
        }
        let wire = CheckpointWire {
            format_version: CHECKPOINT_VERSION,
            dims: self.dims.clone(),
            vocab: self.vocab.tokens.clone(),
            schema: serde_json::from_str(&self.schema.to_json())?,
            params,
        };
        let text = serde_json::to_string(&wire)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let wire: CheckpointWire = serde_json::from_str(&text)?;
        if wire.format_version != CHECKPOINT_VERSION {
            return Err(Error::ConfigError(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                wire.format_version
            )));
        }
        let schema = Schema::from_json(&wire.schema.to_string())?;
        let vocab = Vocab::from_tokens(wire.vocab)?;
        // Build a fresh model for the registry layout, then overwrite every
        // parameter with the stored values.
        let mut model = Model::new(schema, vocab, wire.dims, 0)?;
        let mut seen = std::collections::BTreeSet::new();
        for p in wire.params {
            let id = model.store.id(&p.name)?;
            if !seen.insert(p.name.clone()) {
                return Err(Error::ConfigError(format!("duplicate parameter {}", p.name)));
            }
            if model.store.shape(id) != p.shape {
                return Err(Error::ShapeError(format!(
                    "parameter {} has shape {:?} but checkpoint stores {:?}",
                    p.name,
                    model.store.shape(id),
                    p.shape
                )));
            }
            if p.values.len() != p.shape.len() {
                return Err(Error::ShapeError(format!(
                    "parameter {} carries {} values for shape {:?}",
                    p.name,
                    p.values.len(),
                    p.shape
                )));
            }
            model.store.value_mut(id).copy_from_slice(&p.values);
        }
        if seen.len() != model.store.ids_by_name().len() {
            return Err(Error::ConfigError(format!(
                "checkpoint stores {} parameters but the model needs {}",
                seen.len(),
                model.store.ids_by_name().len()
            )));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamWire {
    name: String,
    shape: Shape,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointWire {
    format_version: u32,
    dims: Dims,
    vocab: Vec<String>,
    schema: serde_json::Value,
    params: Vec<ParamWire>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::{dynamic_schema, report_schema};

    fn tiny_vocab() -> Vocab {
        Vocab::from_tokens(vec![
            UNK_TOKEN.into(),
            ".".into(),
            "John".into(),
            "moved".into(),
        ])
        .unwrap()
    }

    #[test]
    fn vocab_build_sorts_and_reserves_unknown() {
        let rec = EpisodeRecord {
            tokens: vec!["b".into(), "a".into(), "b".into()],
            tags: vec![],
            sentences: 1,
            snapshots: vec![Default::default()],
            world: "dynamic".into(),
        };
        let v = Vocab::build(&[rec]);
        assert_eq!(v.tokens(), &["<unk>", "a", "b"]);
        assert_eq!(v.id("a"), 1);
        assert_eq!(v.id("zzz"), 0);
    }

    #[test]
    fn registry_covers_both_schemas() {
        for schema in [dynamic_schema(), report_schema()] {
            let m = Model::new(schema.clone(), tiny_vocab(), Dims::default(), 1).unwrap();
            assert_eq!(m.handles.virt.len(), 3);
            assert_eq!(m.handles.score_new.len(), 3);
            assert_eq!(m.handles.score_assign.len(), 3);
            let n_cat = schema
                .classes()
                .iter()
                .flat_map(|c| c.properties.iter())
                .filter(|p| matches!(p.kind, PropertyKind::Category(_)))
                .count();
            assert_eq!(m.handles.cat_heads.len(), n_cat);
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::new(dynamic_schema(), tiny_vocab(), Dims::default(), 5).unwrap();
        let b = Model::new(dynamic_schema(), tiny_vocab(), Dims::default(), 5).unwrap();
        for id in a.store.ids_by_name() {
            let other = b.store.id(a.store.name(id)).unwrap();
            assert_eq!(a.store.value(id), b.store.value(other));
        }
        let c = Model::new(dynamic_schema(), tiny_vocab(), Dims::default(), 6).unwrap();
        let id = a.store.id("embed.token").unwrap();
        let idc = c.store.id("embed.token").unwrap();
        assert_ne!(a.store.value(id), c.store.value(idc));
    }

    #[test]
    fn checkpoint_roundtrips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = Model::new(report_schema(), tiny_vocab(), Dims::default(), 9).unwrap();
        m.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        for id in m.store.ids_by_name() {
            let lid = loaded.store.id(m.store.name(id)).unwrap();
            assert_eq!(m.store.value(id), loaded.store.value(lid), "{}", m.store.name(id));
        }
        assert_eq!(loaded.vocab, m.vocab);
        assert_eq!(loaded.dims, m.dims);
        // saving again produces identical bytes
        let path2 = dir.path().join("model2.json");
        loaded.save(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = Model::new(dynamic_schema(), tiny_vocab(), Dims::default(), 9).unwrap();
        m.save(&path).unwrap();
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        v["format_version"] = serde_json::json!(99);
        std::fs::write(&path, v.to_string()).unwrap();
        assert!(Model::load(&path).is_err());
    }

    #[test]
    fn slot_rows_are_stable_and_cover_links_and_props() {
        let m = Model::new(dynamic_schema(), tiny_vocab(), Dims::default(), 1).unwrap();
        let mut rows: Vec<usize> = ["Name", "carry", "locate"]
            .iter()
            .map(|s| m.slot_row(s).unwrap())
            .collect();
        rows.sort();
        assert_eq!(rows, vec![0, 1, 2]);
        assert_eq!(m.none_slot_row(), 3);
        assert!(m.slot_row("bogus").is_err());
    }
}
