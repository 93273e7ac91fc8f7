//! Tape-based reverse-mode autodiff over a closed op vocabulary.
//!
//! Nodes are appended in execution order, so the node vector is already a
//! topological order and the backward pass is a single reverse sweep.
//! Gradients are only materialised for nodes that depend on a parameter
//! leaf; frozen weights are registered as constants and cost nothing in the
//! backward pass.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    HadamardMask(NodeId, Tensor),
    Scale(NodeId, f64),
    Softmax(NodeId),
    LayerNorm { x: NodeId, inv_std: Vec<f64> },
    Gelu(NodeId),
    SliceCols { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    GatherRows { table: NodeId, ids: Vec<usize> },
    Mse(NodeId, NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(Op::Leaf, value, true)
    }

    /// A leaf that never receives gradients (inputs, frozen weights).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(Op::Leaf, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[NodeId]) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::contract(format!(
                "non-finite output from {}",
                op_name(&op)
            )));
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::contract(format!("node {} not in this graph", id.0)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = tensor::matmul(self.value(a), self.value(b))?;
        self.push(Op::MatMul(a, b), v, &[a, b])
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = tensor::matmul_nt(self.value(a), self.value(b))?;
        self.push(Op::MatMulNt(a, b), v, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = self.value(a).add(self.value(b))?;
        self.push(Op::Add(a, b), v, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = self.value(a).sub(self.value(b))?;
        self.push(Op::Sub(a, b), v, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = self.value(a).mul(self.value(b))?;
        self.push(Op::Mul(a, b), v, &[a, b])
    }

    /// Element-wise product with a constant mask (`x ⊙ mask`).
    pub fn hadamard_mask(&mut self, x: NodeId, mask: &Tensor) -> Result<NodeId> {
        self.check(x)?;
        let v = self.value(x).mul(mask)?;
        self.push(Op::HadamardMask(x, mask.clone()), v, &[x])
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> Result<NodeId> {
        self.check(x)?;
        let v = self.value(x).scale(s);
        self.push(Op::Scale(x, s), v, &[x])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let v = tensor::softmax_rows(self.value(x));
        self.push(Op::Softmax(x), v, &[x])
    }

    /// Row-wise layer norm without affine parameters.
    pub fn layer_norm(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = xv.data().to_vec();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for row in out.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let v = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(Op::LayerNorm { x, inv_std }, v, &[x])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let v = self
            .value(x)
            .map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()));
        self.push(Op::Gelu(x), v, &[x])
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.check(x)?;
        let v = self.value(x).slice_cols(start, len)?;
        self.push(Op::SliceCols { x, start }, v, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        for &p in parts {
            self.check(p)?;
        }
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&vals)?;
        self.push(Op::ConcatCols(parts.to_vec()), v, parts)
    }

    /// Embedding lookup: rows `ids` of `table`.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        self.check(table)?;
        let t = self.value(table);
        if ids.is_empty() {
            return Err(Error::contract("gather_rows needs at least one id"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Range(format!(
                "row {bad} outside table of {} rows",
                t.rows()
            )));
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::matrix(ids.len(), c, data)?;
        self.push(
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            v,
            &[table],
        )
    }

    /// Mean squared error, a scalar node.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        av.check_same(bv, "mse")?;
        let n = av.numel() as f64;
        let s = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        self.push(Op::Mse(a, b), Tensor::scalar(s), &[a, b])
    }

    /// `softmax(q·kᵀ·scale)·v` built from primitive ops.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, scale: f64) -> Result<NodeId> {
        let s = self.matmul_nt(q, k)?;
        let s = self.scale(s, scale)?;
        let p = self.softmax(s)?;
        self.matmul(p, v)
    }

    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.check(loss)?;
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor>], id: NodeId) -> &'a mut Tensor {
        let shape = self.nodes[id.0].value.shape();
        grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], id: NodeId, delta: &Tensor| {
            if self.wants(id) {
                self.slot(grads, id).add_assign(delta);
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    tensor::matmul_nt_acc(g, &self.nodes[b.0].value, self.slot(grads, *a));
                }
                if self.wants(*b) {
                    tensor::matmul_tn_acc(&self.nodes[a.0].value, g, self.slot(grads, *b));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.wants(*a) {
                    tensor::matmul_acc(g, &self.nodes[b.0].value, self.slot(grads, *a));
                }
                if self.wants(*b) {
                    tensor::matmul_tn_acc(g, &self.nodes[a.0].value, self.slot(grads, *b));
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, g);
                acc(grads, *b, g);
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g);
                if self.wants(*b) {
                    acc(grads, *b, &g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = g
                        .mul(&self.nodes[b.0].value)
                        .expect("shapes checked on forward");
                    acc(grads, *a, &d);
                }
                if self.wants(*b) {
                    let d = g
                        .mul(&self.nodes[a.0].value)
                        .expect("shapes checked on forward");
                    acc(grads, *b, &d);
                }
            }
            Op::HadamardMask(x, mask) => {
                acc(grads, *x, &g.mul(mask).expect("shapes checked on forward"));
            }
            Op::Scale(x, s) => acc(grads, *x, &g.scale(*s)),
            Op::Softmax(x) => {
                let y = &node.value;
                let c = if y.shape().len() == 1 {
                    y.numel()
                } else {
                    y.cols()
                };
                let mut d = vec![0.0; y.numel()];
                for ((dr, yr), gr) in d
                    .chunks_mut(c)
                    .zip(y.data().chunks(c))
                    .zip(g.data().chunks(c))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(
                    grads,
                    *x,
                    &Tensor::new(y.shape().to_vec(), d).expect("same shape"),
                );
            }
            Op::LayerNorm { x, inv_std } => {
                let y = &node.value;
                let c = y.cols();
                let mut d = vec![0.0; y.numel()];
                for (r, ((dr, yr), gr)) in d
                    .chunks_mut(c)
                    .zip(y.data().chunks(c))
                    .zip(g.data().chunks(c))
                    .enumerate()
                {
                    let mean_g = gr.iter().sum::<f64>() / c as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dr[j] = inv_std[r] * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                acc(
                    grads,
                    *x,
                    &Tensor::new(y.shape().to_vec(), d).expect("same shape"),
                );
            }
            Op::Gelu(x) => {
                let xv = &self.nodes[x.0].value;
                let d: Vec<f64> = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &g)| {
                        let u = GELU_C * (x + GELU_K * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                        g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })
                    .collect();
                acc(
                    grads,
                    *x,
                    &Tensor::new(xv.shape().to_vec(), d).expect("same shape"),
                );
            }
            Op::SliceCols { x, start } => {
                if self.wants(*x) {
                    let dst = self.slot(grads, *x);
                    let full = dst.cols();
                    let len = g.cols();
                    for r in 0..g.rows() {
                        let row = &mut dst.data_mut()[r * full + start..r * full + start + len];
                        for (a, b) in row.iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.cols();
                    if self.wants(p) {
                        let piece = g.slice_cols(offset, w).expect("widths recorded on forward");
                        acc(grads, p, &piece);
                    }
                    offset += w;
                }
            }
            Op::GatherRows { table, ids } => {
                if self.wants(*table) {
                    let dst = self.slot(grads, *table);
                    let c = dst.cols();
                    for (r, &i) in ids.iter().enumerate() {
                        for (a, b) in dst.data_mut()[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let k = 2.0 * g.item() / av.numel() as f64;
                let d = av
                    .zip_map(bv, "mse", |x, y| k * (x - y))
                    .expect("same shape");
                if self.wants(*b) {
                    acc(grads, *b, &d.scale(-1.0));
                }
                acc(grads, *a, &d);
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::MatMulNt(..) => "matmul_nt",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::HadamardMask(..) => "hadamard_mask",
        Op::Scale(..) => "scale",
        Op::Softmax(..) => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Gelu(..) => "gelu",
        Op::SliceCols { .. } => "slice_cols",
        Op::ConcatCols(..) => "concat_cols",
        Op::GatherRows { .. } => "gather_rows",
        Op::Mse(..) => "mse",
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// ∂loss/∂node; zeros when the node did not influence the loss.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let zero = g.constant(Tensor::zeros(&[2]));
        // mse(x, 0) = Σx²/2, so scale by 2 to get Σx².
        let m = g.mse(x, zero).unwrap();
        let loss = g.scale(m, 2.0).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).data(), &[2.0, -4.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut g = Graph::new();
        let p = g.param(Tensor::ones(&[3]));
        let c = g.constant(Tensor::scalar(4.0));
        let loss = g.scale(c, 2.0).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(p), Tensor::zeros(&[3]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let p = g.param(Tensor::ones(&[2, 2]));
        assert!(matches!(g.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn hadamard_mask_identity_and_zero() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_rows(&[&[1.0, -2.0], &[3.0, 0.5]]));
        let same = g.hadamard_mask(z, &Tensor::ones(&[2, 2])).unwrap();
        assert_eq!(g.value(same), g.value(z));
        let zero = g.hadamard_mask(z, &Tensor::zeros(&[2, 2])).unwrap();
        assert_eq!(g.value(zero), &Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn mse_of_identical_is_zero() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[&[1.5, 2.0]]));
        let b = g.constant(Tensor::from_rows(&[&[1.5, 2.0]]));
        let m = g.mse(a, b).unwrap();
        assert_eq!(g.value(m).item(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_shape_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 2]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.add(a, b), Err(Error::Shape { .. })));
        assert!(matches!(g.mse(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn frozen_inputs_get_no_gradient() {
        let mut g = Graph::new();
        let w = g.constant(Tensor::identity(2));
        let x = g.param(Tensor::from_rows(&[&[1.0, 2.0]]));
        let y = g.matmul(x, w).unwrap();
        let t = g.constant(Tensor::zeros(&[1, 2]));
        let loss = g.mse(y, t).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(w).is_none());
        assert_eq!(grads.wrt(x).data(), &[1.0, 2.0]);
    }
}
