//! Layer helpers over the tape: affine maps, a two-gate GRU cell, and the
//! scalar-output MLP used for action scoring. Parameter handles are resolved
//! once at model build (or checkpoint load) time; the apply functions are
//! string-free.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::store::{ParamId, ParameterStore};
use crate::nn::tape::{NodeId, Tape};

/// Weight + bias of one affine map `y = W x + b`.
#[derive(Debug, Clone, Copy)]
pub struct DenseIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl DenseIds {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add_matrix_glorot(&format!("{name}.w"), out_dim, in_dim, rng)?,
            b: store.add_vector(&format!("{name}.b"), out_dim)?,
        })
    }

    /// All-zero weights; handy to pin score functions at uniform in tests.
    pub fn register_zeros(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add_matrix(&format!("{name}.w"), out_dim, in_dim)?,
            b: store.add_vector(&format!("{name}.b"), out_dim)?,
        })
    }

    pub fn resolve(store: &ParameterStore, name: &str) -> Result<Self> {
        Ok(Self {
            w: store.id(&format!("{name}.w"))?,
            b: store.id(&format!("{name}.b"))?,
        })
    }
}

pub fn dense(tape: &mut Tape, store: &ParameterStore, ids: DenseIds, x: NodeId) -> Result<NodeId> {
    let w = tape.param(store, ids.w);
    let b = tape.param(store, ids.b);
    let wx = tape.matvec(w, x)?;
    tape.add(wx, b)
}

/// Parameters of one GRU cell (update gate z, reset gate r, candidate n).
#[derive(Debug, Clone, Copy)]
pub struct GruIds {
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wn: ParamId,
    pub un: ParamId,
    pub bn: ParamId,
}

impl GruIds {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        x_dim: usize,
        h_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            wz: store.add_matrix_glorot(&format!("{name}.wz"), h_dim, x_dim, rng)?,
            uz: store.add_matrix_glorot(&format!("{name}.uz"), h_dim, h_dim, rng)?,
            bz: store.add_vector(&format!("{name}.bz"), h_dim)?,
            wr: store.add_matrix_glorot(&format!("{name}.wr"), h_dim, x_dim, rng)?,
            ur: store.add_matrix_glorot(&format!("{name}.ur"), h_dim, h_dim, rng)?,
            br: store.add_vector(&format!("{name}.br"), h_dim)?,
            wn: store.add_matrix_glorot(&format!("{name}.wn"), h_dim, x_dim, rng)?,
            un: store.add_matrix_glorot(&format!("{name}.un"), h_dim, h_dim, rng)?,
            bn: store.add_vector(&format!("{name}.bn"), h_dim)?,
        })
    }

    pub fn register_zeros(
        store: &mut ParameterStore,
        name: &str,
        x_dim: usize,
        h_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            wz: store.add_matrix(&format!("{name}.wz"), h_dim, x_dim)?,
            uz: store.add_matrix(&format!("{name}.uz"), h_dim, h_dim)?,
            bz: store.add_vector(&format!("{name}.bz"), h_dim)?,
            wr: store.add_matrix(&format!("{name}.wr"), h_dim, x_dim)?,
            ur: store.add_matrix(&format!("{name}.ur"), h_dim, h_dim)?,
            br: store.add_vector(&format!("{name}.br"), h_dim)?,
            wn: store.add_matrix(&format!("{name}.wn"), h_dim, x_dim)?,
            un: store.add_matrix(&format!("{name}.un"), h_dim, h_dim)?,
            bn: store.add_vector(&format!("{name}.bn"), h_dim)?,
        })
    }

    pub fn resolve(store: &ParameterStore, name: &str) -> Result<Self> {
        Ok(Self {
            wz: store.id(&format!("{name}.wz"))?,
            uz: store.id(&format!("{name}.uz"))?,
            bz: store.id(&format!("{name}.bz"))?,
            wr: store.id(&format!("{name}.wr"))?,
            ur: store.id(&format!("{name}.ur"))?,
            br: store.id(&format!("{name}.br"))?,
            wn: store.id(&format!("{name}.wn"))?,
            un: store.id(&format!("{name}.un"))?,
            bn: store.id(&format!("{name}.bn"))?,
        })
    }
}

/// One GRU step: z and r are sigmoid gates, the candidate is tanh, and the
/// new state is `(1 - z) * h + z * n`, written as `h + z * (n - h)`.
pub fn gru_step(
    tape: &mut Tape,
    store: &ParameterStore,
    ids: GruIds,
    x: NodeId,
    h: NodeId,
) -> Result<NodeId> {
    let wz = tape.param(store, ids.wz);
    let uz = tape.param(store, ids.uz);
    let bz = tape.param(store, ids.bz);
    let wr = tape.param(store, ids.wr);
    let ur = tape.param(store, ids.ur);
    let br = tape.param(store, ids.br);
    let wn = tape.param(store, ids.wn);
    let un = tape.param(store, ids.un);
    let bn = tape.param(store, ids.bn);

    let zx = tape.matvec(wz, x)?;
    let zh = tape.matvec(uz, h)?;
    let zs = tape.add(zx, zh)?;
    let zs = tape.add(zs, bz)?;
    let z = tape.sigmoid(zs);

    let rx = tape.matvec(wr, x)?;
    let rh = tape.matvec(ur, h)?;
    let rs = tape.add(rx, rh)?;
    let rs = tape.add(rs, br)?;
    let r = tape.sigmoid(rs);

    let rh = tape.mul(r, h)?;
    let nx = tape.matvec(wn, x)?;
    let nh = tape.matvec(un, rh)?;
    let ns = tape.add(nx, nh)?;
    let ns = tape.add(ns, bn)?;
    let n = tape.tanh(ns);

    let diff = tape.sub(n, h)?;
    let gated = tape.mul(z, diff)?;
    tape.add(h, gated)
}

/// Scalar-output MLP with one tanh hidden layer: `v . tanh(W x + b) + c`.
#[derive(Debug, Clone, Copy)]
pub struct MlpScalarIds {
    pub hidden: DenseIds,
    pub out: DenseIds,
}

impl MlpScalarIds {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            hidden: DenseIds::register(store, &format!("{name}.h"), in_dim, hidden_dim, rng)?,
            out: DenseIds::register(store, &format!("{name}.o"), hidden_dim, 1, rng)?,
        })
    }

    pub fn register_zeros(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            hidden: DenseIds::register_zeros(store, &format!("{name}.h"), in_dim, hidden_dim)?,
            out: DenseIds::register_zeros(store, &format!("{name}.o"), hidden_dim, 1)?,
        })
    }

    pub fn resolve(store: &ParameterStore, name: &str) -> Result<Self> {
        Ok(Self {
            hidden: DenseIds::resolve(store, &format!("{name}.h"))?,
            out: DenseIds::resolve(store, &format!("{name}.o"))?,
        })
    }
}

pub fn mlp_scalar(
    tape: &mut Tape,
    store: &ParameterStore,
    ids: MlpScalarIds,
    x: NodeId,
) -> Result<NodeId> {
    let h = dense(tape, store, ids.hidden, x)?;
    let h = tape.tanh(h);
    dense(tape, store, ids.out, h)
}

/// Concatenate tape nodes with a trailing block of plain feature values.
pub fn concat_features(tape: &mut Tape, nodes: &[NodeId], features: &[f64]) -> Result<NodeId> {
    if features.is_empty() {
        return tape.concat(nodes);
    }
    let f = tape.constant(features.to_vec());
    let mut parts = nodes.to_vec();
    parts.push(f);
    tape.concat(&parts)
}
