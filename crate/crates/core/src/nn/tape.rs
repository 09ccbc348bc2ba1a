//! Eager computation tape with reverse-mode gradients.
//!
//! Forward values are computed at op-construction time and stored per node;
//! `backward` walks the op list in reverse and accumulates gradients for
//! every parameter leaf into the `ParameterStore`. The tape is meant to live
//! for one episode (or one loss evaluation) and be dropped or reset.

use crate::error::{Error, Result};
use crate::nn::store::{ParamId, ParameterStore, Shape};
use std::collections::BTreeMap;

/// Scores are clamped to this magnitude before exponentiation so softmax can
/// never overflow; at the score scales this engine produces the clamp is
/// inactive in practice.
pub(crate) const SCORE_CLIP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    MatVec { m: NodeId, v: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    Concat { parts: Vec<NodeId> },
    Row { m: NodeId, row: usize },
    SoftmaxClip { x: NodeId },
    NegLogPick { p: NodeId, idx: usize },
    Scale { x: NodeId, k: f64 },
    SumMany { parts: Vec<NodeId> },
    SumElems { x: NodeId },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
    shape: Shape,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: BTreeMap<usize, NodeId>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop all recorded nodes so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.param_nodes.clear();
        self.consumed = false;
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        if v.len() != 1 {
            return Err(Error::ShapeError(format!(
                "expected scalar node, got length {}",
                v.len()
            )));
        }
        Ok(v[0])
    }

    fn push(&mut self, op: Op, value: Vec<f64>, shape: Shape) -> NodeId {
        debug_assert_eq!(shape.len(), value.len());
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value, shape });
        id
    }

    /// Bind a parameter as a leaf node. Repeated binds of the same parameter
    /// return the same node, so its gradient accumulates in one place.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id.index()) {
            return n;
        }
        let value = store.value(id).to_vec();
        let shape = store.shape(id);
        let n = self.push(Op::Leaf { param: Some(id) }, value, shape);
        self.param_nodes.insert(id.index(), n);
        n
    }

    /// Constant vector; no gradient flows into it.
    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        let shape = Shape::Vector(value.len());
        self.push(Op::Leaf { param: None }, value, shape)
    }

    pub fn zeros(&mut self, n: usize) -> NodeId {
        self.constant(vec![0.0; n])
    }

    /// Matrix-vector product. `m` must be a matrix leaf, `v` a vector.
    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (r, c) = match self.shape(m) {
            Shape::Matrix(r, c) => (r, c),
            Shape::Vector(_) => {
                return Err(Error::ShapeError("matvec: lhs is not a matrix".into()))
            }
        };
        let vlen = self.value(v).len();
        if vlen != c {
            return Err(Error::ShapeError(format!(
                "matvec: matrix is {r}x{c} but vector has length {vlen}"
            )));
        }
        let mut out = vec![0.0; r];
        {
            let mv = &self.nodes[m.0].value;
            let vv = &self.nodes[v.0].value;
            for (i, o) in out.iter_mut().enumerate() {
                let row = &mv[i * c..(i + 1) * c];
                let mut acc = 0.0;
                for (a, b) in row.iter().zip(vv.iter()) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        Ok(self.push(Op::MatVec { m, v }, out, Shape::Vector(r)))
    }

    fn zip_op(&mut self, a: NodeId, b: NodeId, name: &str) -> Result<usize> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(Error::ShapeError(format!(
                "{name}: length mismatch {la} vs {lb}"
            )));
        }
        Ok(la)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let n = self.zip_op(a, b, "add")?;
        let out: Vec<f64> = (0..n)
            .map(|i| self.nodes[a.0].value[i] + self.nodes[b.0].value[i])
            .collect();
        Ok(self.push(Op::Add { a, b }, out, Shape::Vector(n)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let n = self.zip_op(a, b, "sub")?;
        let out: Vec<f64> = (0..n)
            .map(|i| self.nodes[a.0].value[i] - self.nodes[b.0].value[i])
            .collect();
        Ok(self.push(Op::Sub { a, b }, out, Shape::Vector(n)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let n = self.zip_op(a, b, "mul")?;
        let out: Vec<f64> = (0..n)
            .map(|i| self.nodes[a.0].value[i] * self.nodes[b.0].value[i])
            .collect();
        Ok(self.push(Op::Mul { a, b }, out, Shape::Vector(n)))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        let shape = Shape::Vector(out.len());
        self.push(Op::Tanh { x }, out, shape)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = Shape::Vector(out.len());
        self.push(Op::Sigmoid { x }, out, shape)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::ShapeError("concat of zero parts".into()));
        }
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let shape = Shape::Vector(out.len());
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
            },
            out,
            shape,
        ))
    }

    /// Row lookup into a matrix leaf (embedding read).
    pub fn row(&mut self, m: NodeId, row: usize) -> Result<NodeId> {
        let (r, c) = match self.shape(m) {
            Shape::Matrix(r, c) => (r, c),
            Shape::Vector(_) => return Err(Error::ShapeError("row: not a matrix".into())),
        };
        if row >= r {
            return Err(Error::IndexError(format!(
                "row {row} out of range for {r}x{c} matrix"
            )));
        }
        let out = self.nodes[m.0].value[row * c..(row + 1) * c].to_vec();
        Ok(self.push(Op::Row { m, row }, out, Shape::Vector(c)))
    }

    /// Numerically safe softmax with score clipping. Every output is > 0.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = &self.nodes[x.0].value;
        if xs.is_empty() {
            return Err(Error::ShapeError("softmax over empty vector".into()));
        }
        let clipped: Vec<f64> = xs.iter().map(|v| v.clamp(-SCORE_CLIP, SCORE_CLIP)).collect();
        let max = clipped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = clipped.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let out: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let shape = Shape::Vector(out.len());
        Ok(self.push(Op::SoftmaxClip { x }, out, shape))
    }

    /// Scalar node holding `-ln(p[idx])`.
    pub fn neg_log_pick(&mut self, p: NodeId, idx: usize) -> Result<NodeId> {
        let pv = &self.nodes[p.0].value;
        if idx >= pv.len() {
            return Err(Error::IndexError(format!(
                "nll target {idx} out of range for {} outcomes",
                pv.len()
            )));
        }
        let out = vec![-pv[idx].ln()];
        Ok(self.push(Op::NegLogPick { p, idx }, out, Shape::Vector(1)))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v * k).collect();
        let shape = Shape::Vector(out.len());
        self.push(Op::Scale { x, k }, out, shape)
    }

    /// Elementwise sum of same-length nodes (used to fold scalar loss terms).
    pub fn sum_many(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::ShapeError("sum of zero parts".into()));
        }
        let n = self.value(parts[0]).len();
        let mut out = vec![0.0; n];
        for p in parts {
            let pv = &self.nodes[p.0].value;
            if pv.len() != n {
                return Err(Error::ShapeError("sum_many: length mismatch".into()));
            }
            for (o, v) in out.iter_mut().zip(pv.iter()) {
                *o += v;
            }
        }
        Ok(self.push(
            Op::SumMany {
                parts: parts.to_vec(),
            },
            out,
            Shape::Vector(n),
        ))
    }

    /// Reduce a vector to the scalar sum of its elements.
    pub fn sum_elems(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.iter().sum();
        self.push(Op::SumElems { x }, vec![s], Shape::Vector(1))
    }

    /// Reverse pass from a scalar loss node. Parameter gradients accumulate
    /// into the store (on top of whatever is already there, so batches can
    /// sum losses across tapes). A second backward without `reset` is an
    /// error because the node list would be replayed on stale state.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParameterStore) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeError(
                "backward already ran on this tape; reset it first".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeError("backward root must be scalar".into()));
        }
        self.consumed = true;

        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        grads[loss.0][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            if grads[i].iter().all(|g| *g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            match &self.nodes[i].op {
                Op::Leaf { param } => {
                    if let Some(pid) = param {
                        let dst = store.grad_mut(*pid);
                        for (d, s) in dst.iter_mut().zip(g.iter()) {
                            *d += s;
                        }
                    }
                }
                Op::MatVec { m, v } => {
                    let (m, v) = (*m, *v);
                    let c = self.nodes[v.0].value.len();
                    for (i_row, gi) in g.iter().enumerate() {
                        if *gi == 0.0 {
                            continue;
                        }
                        for j in 0..c {
                            grads[m.0][i_row * c + j] += gi * self.nodes[v.0].value[j];
                            grads[v.0][j] += gi * self.nodes[m.0].value[i_row * c + j];
                        }
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    for (j, gj) in g.iter().enumerate() {
                        grads[a.0][j] += gj;
                        grads[b.0][j] += gj;
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    for (j, gj) in g.iter().enumerate() {
                        grads[a.0][j] += gj;
                        grads[b.0][j] -= gj;
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    for (j, gj) in g.iter().enumerate() {
                        grads[a.0][j] += gj * self.nodes[b.0].value[j];
                        grads[b.0][j] += gj * self.nodes[a.0].value[j];
                    }
                }
                Op::Tanh { x } => {
                    let x = *x;
                    for (j, gj) in g.iter().enumerate() {
                        let y = self.nodes[i].value[j];
                        grads[x.0][j] += gj * (1.0 - y * y);
                    }
                }
                Op::Sigmoid { x } => {
                    let x = *x;
                    for (j, gj) in g.iter().enumerate() {
                        let y = self.nodes[i].value[j];
                        grads[x.0][j] += gj * y * (1.0 - y);
                    }
                }
                Op::Concat { parts } => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        for j in 0..n {
                            grads[p.0][j] += g[off + j];
                        }
                        off += n;
                    }
                }
                Op::Row { m, row } => {
                    let (m, row) = (*m, *row);
                    let c = g.len();
                    for (j, gj) in g.iter().enumerate() {
                        grads[m.0][row * c + j] += gj;
                    }
                }
                Op::SoftmaxClip { x } => {
                    let x = *x;
                    let y = &self.nodes[i].value;
                    let dot: f64 = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                    for j in 0..g.len() {
                        let pass = self.nodes[x.0].value[j].abs() < SCORE_CLIP;
                        if pass {
                            grads[x.0][j] += y[j] * (g[j] - dot);
                        }
                    }
                }
                Op::NegLogPick { p, idx } => {
                    let (p, idx) = (*p, *idx);
                    grads[p.0][idx] += -g[0] / self.nodes[p.0].value[idx];
                }
                Op::Scale { x, k } => {
                    let (x, k) = (*x, *k);
                    for (j, gj) in g.iter().enumerate() {
                        grads[x.0][j] += gj * k;
                    }
                }
                Op::SumMany { parts } => {
                    let parts = parts.clone();
                    for p in parts {
                        for (j, gj) in g.iter().enumerate() {
                            grads[p.0][j] += gj;
                        }
                    }
                }
                Op::SumElems { x } => {
                    let x = *x;
                    for gx in grads[x.0].iter_mut() {
                        *gx += g[0];
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_matches_direct_computation() {
        let mut t = Tape::new();
        let x = t.constant(vec![1.0, 2.0, 3.0]);
        let s = t.softmax(x).unwrap();
        // independent straight-line evaluation
        let (e1, e2, e3) = (1.0f64.exp(), 2.0f64.exp(), 3.0f64.exp());
        let z = e1 + e2 + e3;
        let got = t.value(s);
        assert!((got[0] - e1 / z).abs() < 1e-12);
        assert!((got[1] - e2 / z).abs() < 1e-12);
        assert!((got[2] - e3 / z).abs() < 1e-12);
        // frozen reference values
        assert!((got[0] - 0.0900).abs() < 1e-4);
        assert!((got[1] - 0.2447).abs() < 1e-4);
        assert!((got[2] - 0.6652).abs() < 1e-4);
    }

    #[test]
    fn softmax_uniform_on_equal_scores() {
        let mut t = Tape::new();
        let x = t.constant(vec![0.0, 0.0]);
        let s = t.softmax(x).unwrap();
        assert_eq!(t.value(s), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_survives_huge_scores() {
        let mut t = Tape::new();
        let x = t.constant(vec![1e9, -1e9, 0.0]);
        let s = t.softmax(x).unwrap();
        let v = t.value(s);
        assert!(v.iter().all(|p| p.is_finite() && *p > 0.0));
        let sum: f64 = v.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nll_of_uniform_binary_is_ln2() {
        let mut t = Tape::new();
        let p = t.constant(vec![0.5, 0.5]);
        let l = t.neg_log_pick(p, 0).unwrap();
        assert!((t.scalar(l).unwrap() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_target_out_of_range_is_error() {
        let mut t = Tape::new();
        let p = t.constant(vec![1.0]);
        assert!(matches!(t.neg_log_pick(p, 3), Err(Error::IndexError(_))));
    }

    #[test]
    fn backward_through_sum_gives_ones_and_untouched_params_zero() {
        let mut store = ParameterStore::new();
        let w = store.add_vector_from("w", vec![1.0, 2.0, 3.0]).unwrap();
        let unused = store.add_vector_from("u", vec![4.0]).unwrap();
        let mut t = Tape::new();
        let wn = t.param(&store, w);
        let total = t.sum_elems(wn);
        assert_eq!(t.scalar(total).unwrap(), 6.0);
        t.backward(total, &mut store).unwrap();
        assert_eq!(store.grad(w), &[1.0, 1.0, 1.0]);
        assert_eq!(store.grad(unused), &[0.0]);
    }

    #[test]
    fn double_backward_is_tape_error() {
        let mut store = ParameterStore::new();
        let w = store.add_vector_from("w", vec![2.0]).unwrap();
        let mut t = Tape::new();
        let wn = t.param(&store, w);
        t.backward(wn, &mut store).unwrap();
        assert!(matches!(
            t.backward(wn, &mut store),
            Err(Error::TapeError(_))
        ));
        t.reset();
        let wn = t.param(&store, w);
        assert!(t.backward(wn, &mut store).is_ok());
    }

    #[test]
    fn param_nodes_are_cached() {
        let mut store = ParameterStore::new();
        let w = store.add_vector_from("w", vec![1.0]).unwrap();
        let mut t = Tape::new();
        let a = t.param(&store, w);
        let b = t.param(&store, w);
        assert_eq!(a, b);
    }
}
