//! Tape-based reverse-mode automatic differentiation over [`Array`]s.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s. Trainable
//! weights live in a [`ParamStore`] and enter a trace through
//! [`Tape::param`]; calling [`Tape::backward`] on a scalar output yields
//! the exact reverse-mode derivative for every parameter the trace reached.
//!
//! ```
//! use radgraph::autodiff::{ParamStore, Tape};
//! use radgraph::tensor::Array;
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", Array::new(vec![3], vec![1.0, -2.0, 0.5]));
//! let tape = Tape::new(&store);
//! let x = tape.param(w);
//! let loss = x.mul(x).sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::tensor::{gemm, Array};

/// Lower clamp on the per-row variance used by [`Var::layer_norm`].
pub const LAYER_NORM_MIN_VARIANCE: f64 = 1e-9;

/// Marks an output slot of [`Var::gather`] that reads as zero.
pub const GATHER_ZERO: usize = usize::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable arrays with their gradient accumulators.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Array>>,
    grads: Vec<Array>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.values.len());
        self.grads.push(Array::zeros(value.shape()));
        self.values.push(Arc::new(value));
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn grad(&self, id: ParamId) -> &Array {
        &self.grads[id.0]
    }

    /// Total number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Adds `scale * grads` into the gradient accumulators.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (id, g) in grads.iter() {
            let acc = self.grads[id.0].data_mut();
            for (a, b) in acc.iter_mut().zip(g.data()) {
                *a += scale * b;
            }
        }
    }

    fn shared(&self, id: ParamId) -> Arc<Array> {
        Arc::clone(&self.values[id.0])
    }
}

/// Parameter gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: usize, b: usize, trans_b: bool },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Affine { a: usize, scale: f64 },
    Concat { parts: Vec<usize> },
    Gather { a: usize, index: Arc<Vec<usize>> },
    Reshape { a: usize },
    Softmax { a: usize },
    LogSoftmax { a: usize },
    Log { a: usize },
    Exp { a: usize },
    Relu { a: usize },
    Powf { a: usize, p: f64 },
    LayerNorm { a: usize, inv_std: Vec<f64>, clamped: Vec<bool> },
    Sum { a: usize },
    Mean { a: usize },
}

struct Node {
    value: Arc<Array>,
    op: Op,
}

/// Records a computation over [`Var`]s for reverse-mode differentiation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: RefCell<Vec<Node>>,
    param_nodes: RefCell<Vec<Option<usize>>>,
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'a> {
    tape: &'a Tape<'a>,
    id: usize,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: RefCell::new(Vec::new()),
            param_nodes: RefCell::new(vec![None; params.len()]),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array, op: Op) -> usize {
        self.push_shared(Arc::new(value), op)
    }

    fn push_shared(&self, value: Arc<Array>, op: Op) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        nodes.len() - 1
    }

    /// A non-trainable input.
    pub fn constant<'a>(&'a self, value: Array) -> Var<'a> {
        let id = self.push(value, Op::Leaf);
        Var { tape: self, id }
    }

    pub fn scalar<'a>(&'a self, value: f64) -> Var<'a> {
        self.constant(Array::scalar(value))
    }

    /// The trace node for a parameter; repeated calls return the same node.
    pub fn param<'a>(&'a self, id: ParamId) -> Var<'a> {
        if let Some(node) = self.param_nodes.borrow()[id.0] {
            return Var { tape: self, id: node };
        }
        let node = self.push_shared(self.params.shared(id), Op::Param(id));
        self.param_nodes.borrow_mut()[id.0] = Some(node);
        Var { tape: self, id: node }
    }

    /// Concatenates along the last axis. All parts share leading rows.
    pub fn concat<'a>(&'a self, parts: &[Var<'a>]) -> Var<'a> {
        assert!(!parts.is_empty(), "concat of nothing");
        let nodes = self.nodes.borrow();
        let rows = nodes[parts[0].id].value.rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let v = &nodes[p.id].value;
                assert_eq!(v.rows(), rows, "concat row mismatch");
                v.cols()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let v = nodes[p.id].value.data();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&v[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut shape = nodes[parts[0].id].value.shape().to_vec();
        if shape.is_empty() {
            shape.push(total);
        } else {
            *shape.last_mut().unwrap() = total;
        }
        drop(nodes);
        let id = self.push(
            Array::new(shape, data),
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
            },
        );
        Var { tape: self, id }
    }

    /// Reverse-mode sweep from a scalar output.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AutodiffError> {
        let nodes = self.nodes.borrow();
        let out = &nodes[loss.id].value;
        if out.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Array::full(out.shape(), 1.0));
        let mut param_grads: Vec<Option<Array>> = vec![None; self.params.len()];

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let val = |i: usize| -> &Array { &nodes[i].value };
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => param_grads[p.0] = Some(g),
                Op::MatMul { a, b, trans_b } => {
                    let av = val(*a);
                    let bv = val(*b);
                    let m = av.rows();
                    let k = av.cols();
                    let n = g.cols();
                    let mut da = vec![0.0; m * k];
                    // dA = G · op(B)^T
                    gemm(m, n, k, g.data(), false, bv.data(), !trans_b, &mut da, false);
                    let mut db = vec![0.0; k * n];
                    if *trans_b {
                        // B is [n, k]: dB = G^T · A
                        gemm(n, m, k, g.data(), true, av.data(), false, &mut db, false);
                    } else {
                        // dB = A^T · G
                        gemm(k, m, n, av.data(), true, g.data(), false, &mut db, false);
                    }
                    accumulate(&mut grads, *a, Array::new(av.shape().to_vec(), da));
                    accumulate(&mut grads, *b, Array::new(bv.shape().to_vec(), db));
                }
                Op::Add { a, b } => {
                    let bl = val(*b).len();
                    let db = reduce_broadcast(&g, bl, val(*b).shape());
                    accumulate(&mut grads, *b, db);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul { a, b } => {
                    let av = val(*a);
                    let bv = val(*b);
                    let bl = bv.len();
                    let mut da = g.clone();
                    let mut db = vec![0.0; bl];
                    if bl > 0 {
                        for chunk in da.data_mut().chunks_exact_mut(bl) {
                            chunk.iter_mut().zip(bv.data()).for_each(|(x, y)| *x *= y);
                        }
                        for (gc, ac) in g.data().chunks_exact(bl).zip(av.data().chunks_exact(bl)) {
                            for ((d, gi), ai) in db.iter_mut().zip(gc).zip(ac) {
                                *d += gi * ai;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, Array::new(bv.shape().to_vec(), db));
                }
                Op::Affine { a, scale } => {
                    let mut da = g;
                    da.scale_assign(*scale);
                    accumulate(&mut grads, *a, da);
                }
                Op::Concat { parts } => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pv = val(p);
                        let w = pv.cols();
                        let mut dp = vec![0.0; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w].copy_from_slice(
                                &g.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        offset += w;
                        accumulate(&mut grads, p, Array::new(pv.shape().to_vec(), dp));
                    }
                }
                Op::Gather { a, index } => {
                    let av = val(*a);
                    let mut da = vec![0.0; av.len()];
                    for (&gi, &src) in g.data().iter().zip(index.iter()) {
                        if src != GATHER_ZERO {
                            da[src] += gi;
                        }
                    }
                    accumulate(&mut grads, *a, Array::new(av.shape().to_vec(), da));
                }
                Op::Reshape { a } => {
                    let shape = val(*a).shape().to_vec();
                    accumulate(&mut grads, *a, g.reshaped(shape));
                }
                Op::Softmax { a } => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut da = g.clone();
                    if c > 0 {
                        for (dr, yr) in da.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                            let dot: f64 = dr.iter().zip(yr).map(|(g, y)| g * y).sum();
                            for (d, &yi) in dr.iter_mut().zip(yr) {
                                *d = yi * (*d - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LogSoftmax { a } => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut da = g.clone();
                    if c > 0 {
                        for (dr, yr) in da.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                            let total: f64 = dr.iter().sum();
                            for (d, &yi) in dr.iter_mut().zip(yr) {
                                *d -= yi.exp() * total;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Log { a } => {
                    let mut da = g;
                    for (d, &x) in da.data_mut().iter_mut().zip(val(*a).data()) {
                        *d /= x;
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Exp { a } => {
                    let mut da = g;
                    for (d, &y) in da.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= y;
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Relu { a } => {
                    let mut da = g;
                    for (d, &x) in da.data_mut().iter_mut().zip(val(*a).data()) {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Powf { a, p } => {
                    let mut da = g;
                    for (d, &x) in da.data_mut().iter_mut().zip(val(*a).data()) {
                        *d *= if *p == 0.0 { 0.0 } else { p * x.powf(p - 1.0) };
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNorm { a, inv_std, clamped } => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut da = g.clone();
                    if c > 0 {
                        let n = c as f64;
                        for (r, (dr, yr)) in
                            da.data_mut().chunks_mut(c).zip(y.data().chunks(c)).enumerate()
                        {
                            let mean_g = dr.iter().sum::<f64>() / n;
                            let mean_gy = if clamped[r] {
                                0.0
                            } else {
                                dr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / n
                            };
                            for (d, &yi) in dr.iter_mut().zip(yr) {
                                *d = inv_std[r] * (*d - mean_g - yi * mean_gy);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Sum { a } => {
                    let av = val(*a);
                    accumulate(&mut grads, *a, Array::full(av.shape(), g.item()));
                }
                Op::Mean { a } => {
                    let av = val(*a);
                    let n = av.len().max(1) as f64;
                    accumulate(&mut grads, *a, Array::full(av.shape(), g.item() / n));
                }
            }
        }
        Ok(Gradients { grads: param_grads })
    }
}

fn accumulate(grads: &mut [Option<Array>], id: usize, g: Array) {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn reduce_broadcast(g: &Array, len: usize, shape: &[usize]) -> Array {
    if g.len() == len {
        return g.clone().reshaped(shape.to_vec());
    }
    let mut out = vec![0.0; len];
    if len > 0 {
        for chunk in g.data().chunks_exact(len) {
            out.iter_mut().zip(chunk).for_each(|(o, x)| *o += x);
        }
    }
    Array::new(shape.to_vec(), out)
}

fn check_broadcast(a: &Array, b: &Array, what: &str) {
    let ok = a.shape() == b.shape()
        || b.len() == 1
        || (b.shape().len() <= a.shape().len() && a.shape().ends_with(b.shape()));
    assert!(
        ok,
        "{what}: cannot broadcast {:?} onto {:?}",
        b.shape(),
        a.shape()
    );
}

impl<'a> Var<'a> {
    pub fn tape(&self) -> &'a Tape<'a> {
        self.tape
    }

    pub fn value(&self) -> Arc<Array> {
        Arc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.rows()
    }

    pub fn cols(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.cols()
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    fn unary(self, value: Array, op: Op) -> Var<'a> {
        let id = self.tape.push(value, op);
        Var { tape: self.tape, id }
    }

    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(self, other: Var<'a>) -> Var<'a> {
        self.matmul_impl(other, false)
    }

    /// `[m, k] · [n, k]^T -> [m, n]`.
    pub fn matmul_t(self, other: Var<'a>) -> Var<'a> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(self, other: Var<'a>, trans_b: bool) -> Var<'a> {
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id].value;
        let b = &nodes[other.id].value;
        assert_eq!(a.shape().len(), 2, "matmul lhs must be 2-D, got {:?}", a.shape());
        assert_eq!(b.shape().len(), 2, "matmul rhs must be 2-D, got {:?}", b.shape());
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (kb, n) = if trans_b {
            (b.shape()[1], b.shape()[0])
        } else {
            (b.shape()[0], b.shape()[1])
        };
        assert_eq!(k, kb, "matmul inner dims {:?} x {:?}", a.shape(), b.shape());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), trans_b, &mut out, false);
        drop(nodes);
        self.unary(
            Array::new(vec![m, n], out),
            Op::MatMul {
                a: self.id,
                b: other.id,
                trans_b,
            },
        )
    }

    /// Elementwise sum; `other` may be a shape suffix of `self` (row broadcast).
    pub fn add(self, other: Var<'a>) -> Var<'a> {
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id].value;
        let b = &nodes[other.id].value;
        check_broadcast(a, b, "add");
        let bl = b.len();
        let mut out = (**a).clone();
        if bl > 0 {
            for chunk in out.data_mut().chunks_exact_mut(bl) {
                chunk.iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
            }
        }
        drop(nodes);
        self.unary(out, Op::Add { a: self.id, b: other.id })
    }

    pub fn sub(self, other: Var<'a>) -> Var<'a> {
        self.add(other.scale(-1.0))
    }

    /// Elementwise product with the same broadcasting rule as [`Var::add`].
    pub fn mul(self, other: Var<'a>) -> Var<'a> {
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id].value;
        let b = &nodes[other.id].value;
        check_broadcast(a, b, "mul");
        let bl = b.len();
        let mut out = (**a).clone();
        if bl > 0 {
            for chunk in out.data_mut().chunks_exact_mut(bl) {
                chunk.iter_mut().zip(b.data()).for_each(|(x, y)| *x *= y);
            }
        }
        drop(nodes);
        self.unary(out, Op::Mul { a: self.id, b: other.id })
    }

    pub fn scale(self, s: f64) -> Var<'a> {
        self.affine(s, 0.0)
    }

    /// `self * scale + shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Var<'a> {
        let out = self.value().map(|x| x * scale + shift);
        self.unary(out, Op::Affine { a: self.id, scale })
    }

    /// Flat-index gather: `out[k] = self[index[k]]`, or zero where
    /// `index[k] == GATHER_ZERO`.
    pub fn gather(self, index: Vec<usize>, shape: Vec<usize>) -> Var<'a> {
        let src = self.value();
        assert_eq!(shape.iter().product::<usize>(), index.len(), "gather shape");
        let data = index
            .iter()
            .map(|&i| if i == GATHER_ZERO { 0.0 } else { src.data()[i] })
            .collect();
        self.unary(
            Array::new(shape, data),
            Op::Gather {
                a: self.id,
                index: Arc::new(index),
            },
        )
    }

    /// Picks rows of a 2-D value (embedding lookup).
    pub fn select_rows(self, rows: &[usize]) -> Var<'a> {
        let c = self.cols();
        let mut index = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            index.extend(r * c..(r + 1) * c);
        }
        self.gather(index, vec![rows.len(), c])
    }

    /// Columns `start..end` of a 2-D value.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'a> {
        let (r, c) = (self.rows(), self.cols());
        assert!(start <= end && end <= c, "slice {start}..{end} of {c} columns");
        let mut index = Vec::with_capacity(r * (end - start));
        for row in 0..r {
            index.extend(row * c + start..row * c + end);
        }
        self.gather(index, vec![r, end - start])
    }

    pub fn transpose(self) -> Var<'a> {
        let (r, c) = (self.rows(), self.cols());
        let mut index = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                index.push(i * c + j);
            }
        }
        self.gather(index, vec![c, r])
    }

    pub fn reshape(self, shape: Vec<usize>) -> Var<'a> {
        let out = (*self.value()).clone().reshaped(shape);
        self.unary(out, Op::Reshape { a: self.id })
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'a> {
        let out = self.value().softmax_rows();
        self.unary(out, Op::Softmax { a: self.id })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(self) -> Var<'a> {
        let mut out = (*self.value()).clone();
        let c = out.cols();
        if c > 0 {
            for row in out.data_mut().chunks_mut(c) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|x| *x -= lse);
            }
        }
        self.unary(out, Op::LogSoftmax { a: self.id })
    }

    pub fn ln(self) -> Var<'a> {
        let out = self.value().map(f64::ln);
        self.unary(out, Op::Log { a: self.id })
    }

    pub fn exp(self) -> Var<'a> {
        let out = self.value().map(f64::exp);
        self.unary(out, Op::Exp { a: self.id })
    }

    pub fn relu(self) -> Var<'a> {
        let out = self.value().map(|x| x.max(0.0));
        self.unary(out, Op::Relu { a: self.id })
    }

    /// `x^p` for non-negative inputs.
    pub fn powf(self, p: f64) -> Var<'a> {
        let out = self.value().map(|x| if p == 0.0 { 1.0 } else { x.powf(p) });
        self.unary(out, Op::Powf { a: self.id, p })
    }

    /// Normalizes each row to zero mean and unit variance (no affine terms).
    pub fn layer_norm(self) -> Var<'a> {
        let mut out = (*self.value()).clone();
        let c = out.cols();
        let rows = out.rows();
        let mut inv_std = Vec::with_capacity(rows);
        let mut clamped = Vec::with_capacity(rows);
        if c > 0 {
            let n = c as f64;
            for row in out.data_mut().chunks_mut(c) {
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                let is_clamped = var < LAYER_NORM_MIN_VARIANCE;
                let s = 1.0 / var.max(LAYER_NORM_MIN_VARIANCE).sqrt();
                row.iter_mut().for_each(|x| *x = (*x - mean) * s);
                inv_std.push(s);
                clamped.push(is_clamped);
            }
        }
        self.unary(
            out,
            Op::LayerNorm {
                a: self.id,
                inv_std,
                clamped,
            },
        )
    }

    pub fn sum(self) -> Var<'a> {
        let s = self.value().data().iter().sum();
        self.unary(Array::scalar(s), Op::Sum { a: self.id })
    }

    /// Mean of all entries; the mean of an empty array is zero.
    pub fn mean(self) -> Var<'a> {
        let v = self.value();
        let m = if v.is_empty() {
            0.0
        } else {
            v.data().iter().sum::<f64>() / v.len() as f64
        };
        self.unary(Array::scalar(m), Op::Mean { a: self.id })
    }
}

/// Evaluates `f` on a fresh tape and returns the scalar value with its
/// parameter gradients.
pub fn value_and_grad<F>(store: &ParamStore, f: F) -> Result<(f64, Gradients), AutodiffError>
where
    F: for<'a> FnOnce(&'a Tape<'a>) -> Var<'a>,
{
    let tape = Tape::new(store);
    let loss = f(&tape);
    let value = loss.value();
    if value.len() != 1 {
        return Err(AutodiffError::NonScalarLoss(value.shape().to_vec()));
    }
    let grads = tape.backward(loss)?;
    Ok((value.item(), grads))
}

/// Evaluates `f` without a backward pass.
pub fn value_only<F>(store: &ParamStore, f: F) -> f64
where
    F: for<'a> FnOnce(&'a Tape<'a>) -> Var<'a>,
{
    let tape = Tape::new(store);
    f(&tape).item()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Array)]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values
            .iter()
            .map(|(n, v)| s.add(*n, v.clone()))
            .collect();
        (s, ids)
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let s = ParamStore::new();
        let t = Tape::new(&s);
        let y = t.constant(Array::zeros(&[1, 3])).softmax().value();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_matmul() {
        let s = ParamStore::new();
        let t = Tape::new(&s);
        let x = Array::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]);
        let y = t.constant(Array::identity(3)).matmul(t.constant(x.clone()));
        assert_eq!(*y.value(), x);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let s = ParamStore::new();
        let t = Tape::new(&s);
        let y = t.constant(Array::full(&[2, 5], 3.7)).layer_norm().value();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let (s, ids) = store_with(&[("w", Array::new(vec![4], vec![1., -2., 3., 0.5]))]);
        let t = Tape::new(&s);
        let loss = t.param(ids[0]).sum();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(ids[0]).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn square_gradient_is_two_w() {
        let w = Array::new(vec![2, 2], vec![0.3, -1.2, 2.0, 0.0]);
        let (s, ids) = store_with(&[("w", w.clone())]);
        let t = Tape::new(&s);
        let p = t.param(ids[0]);
        let g = t.backward(p.mul(p).sum()).unwrap();
        assert_eq!(*g.get(ids[0]).unwrap(), w.map(|x| 2.0 * x));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let (s, ids) = store_with(&[("w", Array::zeros(&[3]))]);
        let t = Tape::new(&s);
        let err = t.backward(t.param(ids[0])).unwrap_err();
        assert_eq!(err, AutodiffError::NonScalarLoss(vec![3]));
    }

    #[test]
    fn repeated_accumulation_adds_up() {
        let (mut s, ids) = store_with(&[("w", Array::new(vec![2], vec![1.0, 2.0]))]);
        for _ in 0..2 {
            let (_, g) = value_and_grad(&s, |t| {
                let p = t.param(ids[0]);
                p.mul(p).sum()
            })
            .unwrap();
            s.accumulate(&g, 1.0);
        }
        assert_eq!(s.grad(ids[0]).data(), &[4.0, 8.0]);
        s.zero_grad();
        assert_eq!(s.grad(ids[0]).data(), &[0.0, 0.0]);
    }

    #[test]
    fn param_nodes_are_shared() {
        let (s, ids) = store_with(&[("w", Array::new(vec![1], vec![3.0]))]);
        let t = Tape::new(&s);
        let a = t.param(ids[0]);
        let b = t.param(ids[0]);
        assert_eq!(a.id, b.id);
        let g = t.backward(a.mul(b).sum()).unwrap();
        assert_eq!(g.get(ids[0]).unwrap().data(), &[6.0]);
    }

    #[test]
    fn gather_zero_slots_and_transpose() {
        let s = ParamStore::new();
        let t = Tape::new(&s);
        let x = t.constant(Array::new(vec![2, 2], vec![1., 2., 3., 4.]));
        let g = x.gather(vec![3, GATHER_ZERO, 0], vec![3]).value();
        assert_eq!(g.data(), &[4.0, 0.0, 1.0]);
        assert_eq!(x.transpose().value().data(), &[1., 3., 2., 4.]);
        assert_eq!(x.slice_cols(1, 2).value().data(), &[2., 4.]);
        assert_eq!(x.select_rows(&[1, 1]).value().data(), &[3., 4., 3., 4.]);
    }

    #[test]
    fn empty_arrays_flow_through() {
        let (s, ids) = store_with(&[("w", Array::full(&[3, 2], 0.5))]);
        let t = Tape::new(&s);
        let x = t.constant(Array::zeros(&[0, 3]));
        let y = x.matmul(t.param(ids[0])).softmax().layer_norm();
        assert_eq!(y.shape(), vec![0, 2]);
        let loss = y.sum().add(t.param(ids[0]).sum());
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(ids[0]).unwrap().data(), &[1.0; 6]);
    }
}
