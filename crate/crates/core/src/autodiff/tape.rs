//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] is built fresh for every sequence: the forward pass appends
//! nodes in evaluation order, so the node list is already a topological
//! order and [`Tape::backward`] is a single reverse sweep. Parameter values
//! are copied onto the tape on first use; their gradients are flushed into
//! a [`GradBuffer`] at the end of the sweep.

use std::collections::HashMap;

use super::params::{GradBuffer, ParameterStore, SlotId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(SlotId),
    /// Row gather from a parameter table. `flatten` yields a vector for a single row.
    ParamRows {
        slot: SlotId,
        rows: Vec<usize>,
    },
    MatMul(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Log(NodeId),
    Relu(NodeId),
    Square(NodeId),
    Affine { x: NodeId, scale: f64 },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    Sum(NodeId),
    Select { x: NodeId, indices: Vec<usize> },
    RepeatRows { x: NodeId },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<SlotId, NodeId>,
    track: bool,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            track: true,
        }
    }

    /// A tape that computes values only; `backward` on it yields no gradients.
    pub fn forward_only(store: &'s ParameterStore) -> Self {
        Self {
            track: false,
            ..Self::new(store)
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let op = if self.track { op } else { Op::Constant };
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// The whole parameter tensor. Repeated calls return the same node.
    pub fn param(&mut self, slot: SlotId) -> NodeId {
        if let Some(&id) = self.param_nodes.get(&slot) {
            return id;
        }
        let value = self.store.value(slot).clone();
        let id = self.push(value, Op::Param(slot));
        self.param_nodes.insert(slot, id);
        id
    }

    /// One row of a parameter table as a vector.
    pub fn param_row(&mut self, slot: SlotId, row: usize) -> Result<NodeId> {
        let table = self.store.value(slot);
        let (rows, _) = table.dims2();
        if row >= rows {
            return Err(Error::Shape {
                op: "param_row",
                left: table.shape().to_vec(),
                right: vec![row],
            });
        }
        let value = Tensor::vector(table.row(row).to_vec());
        Ok(self.push(value, Op::ParamRows { slot, rows: vec![row] }))
    }

    // ---- binary ops -------------------------------------------------------

    /// Matrix product. Vectors act as a row on the left and a column on the right.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2();
        let (kb, n) = match bv.shape() {
            [len] => (*len, 1),
            [r, c] => (*r, *c),
            _ => (0, 0),
        };
        if k != kb || av.shape().len() > 2 || bv.shape().len() > 2 || (av.shape().len() == 1 && bv.shape().len() == 1) {
            return Err(Error::Shape {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (a_vals, b_vals) = (av.values(), bv.values());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = a_vals[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let b_row = &b_vals[p * n..(p + 1) * n];
                for (o, w) in out_row.iter_mut().zip(b_row) {
                    *o += x * w;
                }
            }
        }
        let shape = match (av.shape().len(), bv.shape().len()) {
            (1, _) => vec![n],
            (_, 1) => vec![m],
            _ => vec![m, n],
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Concatenation along the last axis (vectors, or matrices with equal row counts).
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = self.value(parts[0]).shape().to_vec();
        let rank = first.len();
        let rows = if rank == 2 { first[0] } else { 1 };
        let mut cols = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let ok = s.len() == rank && (rank == 1 || s[0] == rows);
            if !ok || rank > 2 {
                return Err(Error::Shape {
                    op: "concat",
                    left: first,
                    right: s.to_vec(),
                });
            }
            cols += s[rank - 1];
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let shape = if rank == 1 { vec![cols] } else { vec![rows, cols] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    fn broadcast_check(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let ok = sb == [1] || sa == sb || (sa.len() == 2 && sb.len() == 1 && sb[0] == sa[1]);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            })
        }
    }

    fn zip_broadcast(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b).values());
        let n = bv.len();
        let values = av.values().iter().enumerate().map(|(i, &x)| f(x, bv[i % n])).collect();
        Tensor::new(av.shape().to_vec(), values).expect("shape preserved")
    }

    /// `a + b`, where `b` may be a scalar or a row vector broadcast over `a`'s rows.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.broadcast_check("add", a, b)?;
        let v = self.zip_broadcast(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.broadcast_check("sub", a, b)?;
        let v = self.zip_broadcast(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.broadcast_check("elementwise_mul", a, b)?;
        let v = self.zip_broadcast(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.broadcast_check("div", a, b)?;
        let v = self.zip_broadcast(a, b, |x, y| x / y);
        Ok(self.push(v, Op::Div(a, b)))
    }

    // ---- unary ops --------------------------------------------------------

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::ln);
        self.push(v, Op::Log(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|z| z.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|z| z * z);
        self.push(v, Op::Square(x))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let v = self.value(x).map(|z| scale * z + shift);
        self.push(v, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: NodeId, scale: f64) -> NodeId {
        self.affine(x, scale, 0.0)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        self.affine(x, -1.0, 1.0)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(x).map(|z| z.clamp(lo, hi));
        self.push(v, Op::Clamp { x, lo, hi })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).values().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    /// Gather entries of a vector.
    pub fn select(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let v = self.value(x);
        if v.shape().len() != 1 || indices.iter().any(|&i| i >= v.len()) {
            return Err(Error::Shape {
                op: "select",
                left: v.shape().to_vec(),
                right: indices.to_vec(),
            });
        }
        let out = Tensor::vector(indices.iter().map(|&i| v.values()[i]).collect());
        Ok(self.push(
            out,
            Op::Select {
                x,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Stack `n` copies of a vector into an `[n, len]` matrix.
    pub fn repeat_rows(&mut self, x: NodeId, n: usize) -> Result<NodeId> {
        let v = self.value(x);
        if v.shape().len() != 1 {
            return Err(Error::Shape {
                op: "repeat_rows",
                left: v.shape().to_vec(),
                right: vec![n],
            });
        }
        let len = v.len();
        let values = v.values().repeat(n);
        let out = Tensor::matrix(n, len, values)?;
        Ok(self.push(out, Op::RepeatRows { x }))
    }

    // ---- reverse sweep ----------------------------------------------------

    /// Propagates d(loss)/d(node) back to every parameter reachable from
    /// `loss`, adding the results into `grads`.
    pub fn backward(&self, loss: NodeId, grads: &mut GradBuffer) -> Result<()> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::new(loss_value.shape().to_vec(), vec![1.0])?);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let y = node.value.values();
            let gv = g.values();
            match &node.op {
                Op::Constant => {}
                Op::Param(slot) => {
                    grads.slot_mut(*slot, node.value.shape()).add_assign(&g);
                }
                Op::ParamRows { slot, rows } => {
                    let shape = self.store.value(*slot).shape().to_vec();
                    let table = grads.slot_mut(*slot, &shape);
                    let cols = gv.len() / rows.len();
                    for (k, &r) in rows.iter().enumerate() {
                        for (t, s) in table.row_mut(r).iter_mut().zip(&gv[k * cols..(k + 1) * cols]) {
                            *t += s;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = av.dims2();
                    let n = gv.len() / m;
                    let (a_vals, b_vals) = (av.values(), bv.values());
                    {
                        let da = self.adj_mut(&mut adj, *a);
                        for r in 0..m {
                            let g_row = &gv[r * n..(r + 1) * n];
                            for p in 0..k {
                                let b_row = &b_vals[p * n..(p + 1) * n];
                                da[r * k + p] += dot(g_row, b_row);
                            }
                        }
                    }
                    let db = self.adj_mut(&mut adj, *b);
                    for r in 0..m {
                        let g_row = &gv[r * n..(r + 1) * n];
                        for p in 0..k {
                            let x = a_vals[r * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (d, gj) in db[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                                *d += x * gj;
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let (rows, cols) = node.value.dims2();
                    let mut offset = 0;
                    for &p in parts {
                        let (_, pc) = self.value(p).dims2();
                        let dp = self.adj_mut(&mut adj, p);
                        for r in 0..rows {
                            let src = &gv[r * cols + offset..r * cols + offset + pc];
                            for (d, s) in dp[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        offset += pc;
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    add_into(self.adj_mut(&mut adj, *a), gv);
                    let db = self.adj_mut(&mut adj, *b);
                    let n = db.len();
                    for (j, gj) in gv.iter().enumerate() {
                        db[j % n] += sign * gj;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).values(), self.value(*b).values());
                    let n = bv.len();
                    {
                        let da = self.adj_mut(&mut adj, *a);
                        for (j, gj) in gv.iter().enumerate() {
                            da[j] += gj * bv[j % n];
                        }
                    }
                    let db = self.adj_mut(&mut adj, *b);
                    for (j, gj) in gv.iter().enumerate() {
                        db[j % n] += gj * av[j];
                    }
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b).values();
                    let n = bv.len();
                    {
                        let da = self.adj_mut(&mut adj, *a);
                        for (j, gj) in gv.iter().enumerate() {
                            da[j] += gj / bv[j % n];
                        }
                    }
                    let db = self.adj_mut(&mut adj, *b);
                    for (j, gj) in gv.iter().enumerate() {
                        db[j % n] -= gj * y[j] / bv[j % n];
                    }
                }
                Op::Sigmoid(x) => {
                    let dx = self.adj_mut(&mut adj, *x);
                    for j in 0..gv.len() {
                        dx[j] += gv[j] * y[j] * (1.0 - y[j]);
                    }
                }
                Op::Tanh(x) => {
                    let dx = self.adj_mut(&mut adj, *x);
                    for j in 0..gv.len() {
                        dx[j] += gv[j] * (1.0 - y[j] * y[j]);
                    }
                }
                Op::Log(x) => {
                    let xv = self.value(*x).values();
                    let dx = self.adj_mut(&mut adj, *x);
                    for j in 0..gv.len() {
                        dx[j] += gv[j] / xv[j];
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).values();
                    let dx = self.adj_mut(&mut adj, *x);
                    for j in 0..gv.len() {
                        if xv[j] > 0.0 {
                            dx[j] += gv[j];
                        }
                    }
                }
                Op::Square(x) => {
                    let xv = self.value(*x).values();
                    let dx = self.adj_mut(&mut adj, *x);
                    for j in 0..gv.len() {
                        dx[j] += 2.0 * xv[j] * gv[j];
                    }
                }
                Op::Affine { x, scale } => {
                    let dx = self.adj_mut(&mut adj, *x);
                    for j in 0..gv.len() {
                        dx[j] += scale * gv[j];
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = self.value(*x).values();
                    let dx = self.adj_mut(&mut adj, *x);
                    for j in 0..gv.len() {
                        if xv[j] >= *lo && xv[j] <= *hi {
                            dx[j] += gv[j];
                        }
                    }
                }
                Op::Sum(x) => {
                    let dx = self.adj_mut(&mut adj, *x);
                    dx.iter_mut().for_each(|d| *d += gv[0]);
                }
                Op::Select { x, indices } => {
                    let dx = self.adj_mut(&mut adj, *x);
                    for (k, &idx) in indices.iter().enumerate() {
                        dx[idx] += gv[k];
                    }
                }
                Op::RepeatRows { x } => {
                    let dx = self.adj_mut(&mut adj, *x);
                    let len = dx.len();
                    for (j, gj) in gv.iter().enumerate() {
                        dx[j % len] += gj;
                    }
                }
            }
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient after backward pass".into()));
        }
        Ok(())
    }

    fn adj_mut<'a>(&self, adj: &'a mut [Option<Tensor>], id: NodeId) -> &'a mut [f64] {
        adj[id.0]
            .get_or_insert_with(|| Tensor::zeros(self.nodes[id.0].value.shape()))
            .values_mut()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
