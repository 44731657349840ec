//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the tape is
//! already a topological order and `backward` walks it in reverse. Values
//! are never mutated after being recorded; gradients flowing into a node from
//! several consumers are summed.

use std::collections::HashMap;

use crate::error::{shape_err, NnError, Result};
use crate::kernels::{gemm, Layout};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, shared_b: bool },
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    TransposeLast2(Var),
    Reshape(Var),
    ConcatLast(Vec<Var>),
    SliceLast { a: Var, start: usize },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Relu(Var),
    Sqrt(Var),
    ClampMin(Var, f64),
    SplitHeads(Var, usize),
    MergeHeads(Var, usize),
    BroadcastBatch(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients of the tracked leaves of a graph.
#[derive(Debug)]
pub struct Gradients {
    leaves: HashMap<Var, Vec<f64>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of a tracked leaf; `None` if the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(&v).map(Vec::as_slice)
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// Adds every parameter gradient into the matching `grad` buffer.
    pub fn accumulate_into(&self, params: &mut ParamSet) {
        for &(id, v) in &self.params {
            if let Some(g) = self.leaves.get(&v) {
                for (acc, x) in params.get_mut(id).grad.iter_mut().zip(g) {
                    *acc += x;
                }
            }
        }
    }
}

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("{op}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn split_last2(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    let lead: usize = shape[..r - 2].iter().product();
    (lead, shape[r - 2], shape[r - 1])
}

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

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Untracked input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Tracked leaf not tied to a parameter set.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Tracked leaf holding a copy of a parameter; repeated requests for the
    /// same parameter return the same variable.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: params.get(id).value.clone(),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Which side of its kink every `relu` and `clamp_min` input lies on.
    /// The graph's output is smooth in its inputs while this stays fixed.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) => pattern.extend(self.value(a).data().iter().map(|&x| x > 0.0)),
                Op::ClampMin(a, lo) => pattern.extend(self.value(a).data().iter().map(|&x| x > lo)),
                _ => {}
            }
        }
        pattern
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `a @ b`. With a 2-D `b` (`k × n`), every trailing `m × k` block of `a`
    /// is multiplied by the same `b`. Otherwise `a` and `b` must share their
    /// leading dimensions and are multiplied block by block.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return shape_err(format!("matmul needs matrices, got {sa:?} @ {sb:?}"));
        }
        let (lead_a, m, k) = split_last2(&sa);
        let (lead_b, kb, n) = split_last2(&sb);
        if k != kb {
            return shape_err(format!("matmul inner dims {sa:?} @ {sb:?}"));
        }
        let shared_b = sb.len() == 2;
        if !shared_b && sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return shape_err(format!("batched matmul leading dims {sa:?} @ {sb:?}"));
        }
        let batch = lead_a;
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        if shared_b {
            gemm(batch * m, k, n, ad, Layout::row_major(k), bd, Layout::row_major(n), &mut out, false);
        } else {
            debug_assert_eq!(lead_a, lead_b);
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &ad[i * m * k..],
                    Layout::row_major(k),
                    &bd[i * k * n..],
                    Layout::row_major(n),
                    &mut out[i * m * n..],
                    false,
                );
            }
        }
        let mut shape = sa.clone();
        *shape.last_mut().expect("rank ≥ 2") = n;
        let t = Tensor::with_shape(shape, out);
        Ok(self.push(t, Op::MatMul { a, b, batch, m, k, n, shared_b }, &[a, b]))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::with_shape(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "div", |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b), &[a, b]))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s (bias, position table).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return shape_err(format!("add_broadcast: {sb:?} is not a suffix of {sa:?}"));
        }
        let w = tb.len().max(1);
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb.data()[i % w])
            .collect();
        let t = Tensor::with_shape(sa.to_vec(), data);
        Ok(self.push(t, Op::AddBroadcast(a, b), &[a, b]))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::with_shape(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.map(a, |x| x * s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.map(a, |x| x + c);
        self.push(t, Op::AddScalar(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.map(a, gelu);
        self.push(t, Op::Gelu(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::sqrt);
        self.push(t, Op::Sqrt(a), &[a])
    }

    /// `max(a, lo)`; the gradient is passed only where `a > lo`.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let t = self.map(a, |x| x.max(lo));
        self.push(t, Op::ClampMin(a, lo), &[a])
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.ndim() < 2 {
            return shape_err(format!("transpose_last2 on {:?}", ta.shape()));
        }
        let (lead, m, n) = split_last2(ta.shape());
        let mut data = vec![0.0; ta.len()];
        for b in 0..lead {
            let src = &ta.data()[b * m * n..(b + 1) * m * n];
            let dst = &mut data[b * m * n..(b + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
        let mut shape = ta.shape().to_vec();
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        let t = Tensor::with_shape(shape, data);
        Ok(self.push(t, Op::TransposeLast2(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if shape.iter().product::<usize>() != ta.len() {
            return shape_err(format!("reshape {:?} → {shape:?}", ta.shape()));
        }
        let t = Tensor::with_shape(shape.to_vec(), ta.data().to_vec());
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::ShapeMismatch("concat_last of nothing".into()))?;
        let lead_shape = self.shape(*first)[..self.shape(*first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != *lead_shape {
                return shape_err(format!("concat_last: {s:?} vs leading {lead_shape:?}"));
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead_shape.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead_shape;
        shape.push(total);
        let t = Tensor::with_shape(shape, data);
        Ok(self.push(t, Op::ConcatLast(parts.to_vec()), parts))
    }

    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let w = ta.last_dim();
        if ta.ndim() == 0 || start + len > w {
            return shape_err(format!("slice_last [{start}, {}) of {:?}", start + len, ta.shape()));
        }
        let rows = ta.len() / w;
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&ta.data()[r * w + start..r * w + start + len]);
        }
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().expect("rank ≥ 1") = len;
        let t = Tensor::with_shape(shape, data);
        Ok(self.push(t, Op::SliceLast { a, start }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(t, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor::scalar(ta.data().iter().sum::<f64>() / ta.len() as f64);
        self.push(t, Op::Mean(a), &[a])
    }

    /// Sums out the last dimension.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.ndim() == 0 {
            return shape_err("sum_last of a scalar");
        }
        let w = ta.last_dim();
        let data = ta.data().chunks(w).map(|c| c.iter().sum()).collect();
        let shape = ta.shape()[..ta.ndim() - 1].to_vec();
        let t = Tensor::with_shape(shape, data);
        Ok(self.push(t, Op::SumLast(a), &[a]))
    }

    /// Row-wise softmax over the last dimension, shifted by the row maximum.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.ndim() == 0 {
            return shape_err("softmax of a scalar");
        }
        let w = ta.last_dim();
        let mut data = Vec::with_capacity(ta.len());
        for row in ta.data().chunks(w) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut total = 0.0;
            for &x in row {
                let e = (x - max).exp();
                total += e;
                data.push(e);
            }
            for y in &mut data[start..] {
                *y /= total;
            }
        }
        let t = Tensor::with_shape(ta.shape().to_vec(), data);
        Ok(self.push(t, Op::Softmax(a), &[a]))
    }

    /// Normalizes each last-dimension row to zero mean and unit variance
    /// (biased, `eps = 1e-5`), then applies `gain ∘ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let w = tx.last_dim();
        if tg.shape() != [w] || tb.shape() != [w] {
            return shape_err(format!(
                "layer_norm: input {:?}, gain {:?}, bias {:?}",
                tx.shape(),
                tg.shape(),
                tb.shape()
            ));
        }
        let rows = tx.len() / w;
        let mut xhat = Vec::with_capacity(tx.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.data().chunks(w) {
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * tg.data()[j] + tb.data()[j]);
            }
        }
        let t = Tensor::with_shape(tx.shape().to_vec(), out);
        Ok(self.push(t, Op::LayerNorm { x, gain, bias, xhat, inv_std }, &[x, gain, bias]))
    }

    /// `[B, T, H·E] → [B, H, T, E]`.
    pub fn split_heads(&mut self, a: Var, heads: usize) -> Result<Var> {
        let ta = self.value(a);
        let s = ta.shape();
        if s.len() != 3 || heads == 0 || !s[2].is_multiple_of(heads) {
            return shape_err(format!("split_heads({heads}) of {s:?}"));
        }
        let (b, t, e) = (s[0], s[1], s[2] / heads);
        let mut data = vec![0.0; ta.len()];
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let src = ((bi * t + ti) * heads + h) * e;
                    let dst = ((bi * heads + h) * t + ti) * e;
                    data[dst..dst + e].copy_from_slice(&ta.data()[src..src + e]);
                }
            }
        }
        let out = Tensor::with_shape(vec![b, heads, t, e], data);
        Ok(self.push(out, Op::SplitHeads(a, heads), &[a]))
    }

    /// `[B, H, T, E] → [B, T, H·E]`.
    pub fn merge_heads(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let s = ta.shape();
        if s.len() != 4 {
            return shape_err(format!("merge_heads of {s:?}"));
        }
        let (b, heads, t, e) = (s[0], s[1], s[2], s[3]);
        let mut data = vec![0.0; ta.len()];
        for bi in 0..b {
            for h in 0..heads {
                for ti in 0..t {
                    let src = ((bi * heads + h) * t + ti) * e;
                    let dst = ((bi * t + ti) * heads + h) * e;
                    data[dst..dst + e].copy_from_slice(&ta.data()[src..src + e]);
                }
            }
        }
        let out = Tensor::with_shape(vec![b, t, heads * e], data);
        Ok(self.push(out, Op::MergeHeads(a, heads), &[a]))
    }

    /// Stacks `batch` copies of `a` along a new leading dimension.
    pub fn broadcast_batch(&mut self, a: Var, batch: usize) -> Var {
        let ta = self.value(a);
        let mut shape = vec![batch];
        shape.extend_from_slice(ta.shape());
        let mut data = Vec::with_capacity(batch * ta.len());
        for _ in 0..batch {
            data.extend_from_slice(ta.data());
        }
        let t = Tensor::with_shape(shape, data);
        self.push(t, Op::BroadcastBatch(a), &[a])
    }

    /// Gradients of the scalar `out` with respect to every tracked leaf it
    /// depends on. Consumes the tape.
    pub fn backward(self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return shape_err(format!("backward from non-scalar {:?}", self.shape(out)));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(out.0 + 1, || None);
        grads[out.0] = Some(vec![1.0]);

        let mut leaves = HashMap::new();
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaves.insert(Var(i), g);
                continue;
            }
            backprop(&nodes, i, &g, &mut grads);
        }

        let params = self
            .param_vars
            .iter()
            .map(|(&id, &v)| (id, v))
            .collect::<Vec<_>>();
        Ok(Gradients { leaves, params })
    }
}

/// Adds `f`'s contribution into the gradient slot of `p`, allocating it on
/// first use. Untracked parents are skipped.
fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], p: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[p.0].requires_grad {
        return;
    }
    let slot = grads[p.0].get_or_insert_with(|| vec![0.0; nodes[p.0].value.len()]);
    f(slot);
}

fn backprop(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul { a, b, batch, m, k, n, shared_b } => {
            let (ad, bd) = (val(a), val(b));
            // dA = dC · Bᵀ
            accumulate(nodes, grads, a, |ga| {
                if shared_b {
                    gemm(batch * m, n, k, g, Layout::row_major(n), bd, Layout::transposed(n), ga, true);
                } else {
                    for t in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &g[t * m * n..],
                            Layout::row_major(n),
                            &bd[t * k * n..],
                            Layout::transposed(n),
                            &mut ga[t * m * k..],
                            true,
                        );
                    }
                }
            });
            // dB = Aᵀ · dC
            accumulate(nodes, grads, b, |gb| {
                if shared_b {
                    gemm(k, batch * m, n, ad, Layout::transposed(k), g, Layout::row_major(n), gb, true);
                } else {
                    for t in 0..batch {
                        gemm(
                            k,
                            m,
                            n,
                            &ad[t * m * k..],
                            Layout::transposed(k),
                            &g[t * m * n..],
                            Layout::row_major(n),
                            &mut gb[t * k * n..],
                            true,
                        );
                    }
                }
            });
        }
        &Op::Add(a, b) => {
            accumulate(nodes, grads, a, |ga| add_into(ga, g));
            accumulate(nodes, grads, b, |gb| add_into(gb, g));
        }
        &Op::AddBroadcast(a, b) => {
            accumulate(nodes, grads, a, |ga| add_into(ga, g));
            accumulate(nodes, grads, b, |gb| {
                let w = gb.len();
                for chunk in g.chunks(w) {
                    add_into(gb, chunk);
                }
            });
        }
        &Op::Sub(a, b) => {
            accumulate(nodes, grads, a, |ga| add_into(ga, g));
            accumulate(nodes, grads, b, |gb| {
                for (x, y) in gb.iter_mut().zip(g) {
                    *x -= y;
                }
            });
        }
        &Op::Mul(a, b) => {
            let (ad, bd) = (val(a), val(b));
            accumulate(nodes, grads, a, |ga| {
                for ((x, gi), bi) in ga.iter_mut().zip(g).zip(bd) {
                    *x += gi * bi;
                }
            });
            accumulate(nodes, grads, b, |gb| {
                for ((x, gi), ai) in gb.iter_mut().zip(g).zip(ad) {
                    *x += gi * ai;
                }
            });
        }
        &Op::Div(a, b) => {
            let (ad, bd) = (val(a), val(b));
            accumulate(nodes, grads, a, |ga| {
                for ((x, gi), bi) in ga.iter_mut().zip(g).zip(bd) {
                    *x += gi / bi;
                }
            });
            accumulate(nodes, grads, b, |gb| {
                for (((x, gi), ai), bi) in gb.iter_mut().zip(g).zip(ad).zip(bd) {
                    *x -= gi * ai / (bi * bi);
                }
            });
        }
        &Op::Scale(a, s) => accumulate(nodes, grads, a, |ga| {
            for (x, gi) in ga.iter_mut().zip(g) {
                *x += s * gi;
            }
        }),
        &Op::AddScalar(a) | &Op::Reshape(a) => accumulate(nodes, grads, a, |ga| add_into(ga, g)),
        &Op::TransposeLast2(a) => {
            let (lead, m, n) = split_last2(nodes[a.0].value.shape());
            accumulate(nodes, grads, a, |ga| {
                for t in 0..lead {
                    let off = t * m * n;
                    for r in 0..m {
                        for c in 0..n {
                            ga[off + r * n + c] += g[off + c * m + r];
                        }
                    }
                }
            });
        }
        Op::ConcatLast(parts) => {
            let total = node.value.last_dim();
            let rows = node.value.len() / total.max(1);
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p.0].value.last_dim();
                accumulate(nodes, grads, p, |gp| {
                    for r in 0..rows {
                        add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w]);
                    }
                });
                offset += w;
            }
        }
        &Op::SliceLast { a, start } => {
            let w = nodes[a.0].value.last_dim();
            let len = node.value.last_dim();
            let rows = node.value.len() / len.max(1);
            accumulate(nodes, grads, a, |ga| {
                for r in 0..rows {
                    add_into(&mut ga[r * w + start..r * w + start + len], &g[r * len..(r + 1) * len]);
                }
            });
        }
        &Op::Sum(a) => accumulate(nodes, grads, a, |ga| ga.iter_mut().for_each(|x| *x += g[0])),
        &Op::Mean(a) => {
            let s = g[0] / nodes[a.0].value.len() as f64;
            accumulate(nodes, grads, a, |ga| ga.iter_mut().for_each(|x| *x += s));
        }
        &Op::SumLast(a) => {
            let w = nodes[a.0].value.last_dim();
            accumulate(nodes, grads, a, |ga| {
                for (chunk, gi) in ga.chunks_mut(w).zip(g) {
                    chunk.iter_mut().for_each(|x| *x += gi);
                }
            });
        }
        &Op::Softmax(a) => {
            let y = node.value.data();
            let w = node.value.last_dim();
            accumulate(nodes, grads, a, |ga| {
                for ((gar, yr), gr) in ga.chunks_mut(w).zip(y.chunks(w)).zip(g.chunks(w)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((x, yi), gi) in gar.iter_mut().zip(yr).zip(gr) {
                        *x += yi * (gi - dot);
                    }
                }
            });
        }
        Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
            let w = node.value.last_dim();
            let gd = val(*gain);
            accumulate(nodes, grads, *gain, |gg| {
                for (gr, hr) in g.chunks(w).zip(xhat.chunks(w)) {
                    for ((acc, gi), hi) in gg.iter_mut().zip(gr).zip(hr) {
                        *acc += gi * hi;
                    }
                }
            });
            accumulate(nodes, grads, *bias, |gb| {
                for gr in g.chunks(w) {
                    add_into(gb, gr);
                }
            });
            accumulate(nodes, grads, *x, |gx| {
                let mut dh = vec![0.0; w];
                for (((gxr, gr), hr), &is) in gx.chunks_mut(w).zip(g.chunks(w)).zip(xhat.chunks(w)).zip(inv_std) {
                    for j in 0..w {
                        dh[j] = gr[j] * gd[j];
                    }
                    let mean_dh = dh.iter().sum::<f64>() / w as f64;
                    let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / w as f64;
                    for j in 0..w {
                        gxr[j] += is * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                    }
                }
            });
        }
        &Op::Gelu(a) => {
            let ad = val(a);
            accumulate(nodes, grads, a, |ga| {
                for ((x, gi), xi) in ga.iter_mut().zip(g).zip(ad) {
                    *x += gi * gelu_grad(*xi);
                }
            });
        }
        &Op::Relu(a) => {
            let ad = val(a);
            accumulate(nodes, grads, a, |ga| {
                for ((x, gi), xi) in ga.iter_mut().zip(g).zip(ad) {
                    if *xi > 0.0 {
                        *x += gi;
                    }
                }
            });
        }
        &Op::ClampMin(a, lo) => {
            let ad = val(a);
            accumulate(nodes, grads, a, |ga| {
                for ((x, gi), xi) in ga.iter_mut().zip(g).zip(ad) {
                    if *xi > lo {
                        *x += gi;
                    }
                }
            });
        }
        &Op::Sqrt(a) => {
            let y = node.value.data();
            accumulate(nodes, grads, a, |ga| {
                for ((x, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    *x += gi / (2.0 * yi);
                }
            });
        }
        &Op::SplitHeads(a, heads) => {
            let s = node.value.shape();
            let (b, t, e) = (s[0], s[2], s[3]);
            accumulate(nodes, grads, a, |ga| {
                for bi in 0..b {
                    for ti in 0..t {
                        for h in 0..heads {
                            let src = ((bi * heads + h) * t + ti) * e;
                            let dst = ((bi * t + ti) * heads + h) * e;
                            add_into(&mut ga[dst..dst + e], &g[src..src + e]);
                        }
                    }
                }
            });
        }
        &Op::MergeHeads(a, heads) => {
            let s = nodes[a.0].value.shape();
            let (b, t, e) = (s[0], s[2], s[3]);
            accumulate(nodes, grads, a, |ga| {
                for bi in 0..b {
                    for h in 0..heads {
                        for ti in 0..t {
                            let src = ((bi * t + ti) * heads + h) * e;
                            let dst = ((bi * heads + h) * t + ti) * e;
                            add_into(&mut ga[dst..dst + e], &g[src..src + e]);
                        }
                    }
                }
            });
        }
        &Op::BroadcastBatch(a) => accumulate(nodes, grads, a, |ga| {
            let w = ga.len();
            for chunk in g.chunks(w) {
                add_into(ga, chunk);
            }
        }),
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (x, y) in acc.iter_mut().zip(g) {
        *x += y;
    }
}
