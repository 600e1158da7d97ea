//! Parameterized layers built on the autodiff primitives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var, GATHER_ZERO};
use crate::tensor::Array;

pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Array {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Array::new(shape.to_vec(), data)
}

/// `y = x W (+ b)` with Xavier-uniform `W` of shape `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, &[inputs, outputs], bound));
        let bias = store.add(format!("{name}.bias"), Array::zeros(&[outputs]));
        Self {
            weight,
            bias: Some(bias),
        }
    }

    pub fn without_bias(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, &[inputs, outputs], bound));
        Self { weight, bias: None }
    }

    pub fn forward<'a>(&self, t: &'a Tape<'a>, x: Var<'a>) -> Var<'a> {
        let y = x.matmul(t.param(self.weight));
        match self.bias {
            Some(b) => y.add(t.param(b)),
            None => y,
        }
    }
}

/// Row normalization with learned gain and offset.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Array::full(&[dim], 1.0)),
            offset: store.add(format!("{name}.offset"), Array::zeros(&[dim])),
        }
    }

    pub fn forward<'a>(&self, t: &'a Tape<'a>, x: Var<'a>) -> Var<'a> {
        x.layer_norm().mul(t.param(self.gain)).add(t.param(self.offset))
    }
}

/// Two linear layers with a rectifier in between.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            inner: Linear::new(store, &format!("{name}.inner"), inputs, hidden, rng),
            outer: Linear::new(store, &format!("{name}.outer"), hidden, outputs, rng),
        }
    }

    pub fn forward<'a>(&self, t: &'a Tape<'a>, x: Var<'a>) -> Var<'a> {
        self.outer.forward(t, self.inner.forward(t, x).relu())
    }
}

/// Scaled dot-product attention with several heads.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

pub struct AttentionOutput<'a> {
    pub output: Var<'a>,
    /// One `[queries, keys]` row-stochastic matrix per head.
    pub weights: Vec<Var<'a>>,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng),
            heads,
        }
    }

    /// `bias`, when given, holds one additive `[queries, keys]` score
    /// matrix per head.
    pub fn forward<'a>(
        &self,
        t: &'a Tape<'a>,
        queries: Var<'a>,
        keys: Var<'a>,
        values: Var<'a>,
        bias: Option<&[Var<'a>]>,
    ) -> AttentionOutput<'a> {
        let q = self.query.forward(t, queries);
        let k = self.key.forward(t, keys);
        let v = self.value.forward(t, values);
        let dim = q.cols();
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = if self.heads == 1 { q } else { q.slice_cols(lo, hi) };
            let kh = if self.heads == 1 { k } else { k.slice_cols(lo, hi) };
            let vh = if self.heads == 1 { v } else { v.slice_cols(lo, hi) };
            let mut scores = qh.matmul_t(kh).scale(scale);
            if let Some(b) = bias {
                scores = scores.add(b[h]);
            }
            let w = scores.softmax();
            outs.push(w.matmul(vh));
            weights.push(w);
        }
        let joined = if outs.len() == 1 { outs[0] } else { t.concat(&outs) };
        AttentionOutput {
            output: self.output.forward(t, joined),
            weights,
        }
    }
}

/// Ordered pairs `(i, j)`, `i != j`, of `k` nodes in row-major order.
pub fn ordered_pairs(k: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(k * k.saturating_sub(1));
    for i in 0..k {
        for j in 0..k {
            if i != j {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Position of `(i, j)` in [`ordered_pairs`].
pub fn pair_index(k: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < k && j < k);
    i * (k - 1) + if j < i { j } else { j - 1 }
}

/// Gather indices that scatter a per-edge column `h` of an `[E, H]` value
/// into a dense `[k, k]` matrix with zeros on the diagonal.
pub fn dense_edge_index(k: usize, heads: usize, h: usize) -> Vec<usize> {
    let mut index = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            index.push(if i == j {
                GATHER_ZERO
            } else {
                pair_index(k, i, j) * heads + h
            });
        }
    }
    index
}
