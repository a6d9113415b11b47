//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass. Values
//! are computed eagerly; [`Graph::backward`] then walks the tape in reverse and
//! returns a [`Gradients`] set that can be folded into a [`ParamStore`].
//! Parameters are borrowed from the store rather than copied onto the tape.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::tensor::{matmul, AttentionMask, Scalar, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_COEF: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Gelu(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize },
    Embedding { table: Var, ids: Vec<u32> },
    SplitHeads { x: Var, heads: usize },
    MergeHeads(Var),
    Attention { q: Var, k: Var, v: Var },
    CrossEntropy { logits: Var, targets: Vec<u32>, ignore: u32, count: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    NchwToSeq(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Dropout { x: Var, keep: Vec<bool>, scale: f64 },
}

struct Node<T> {
    shape: Vec<usize>,
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Vec<T>>,
    op: Op,
    needs_grad: bool,
    /// Forward-pass scratch kept for the backward pass.
    aux: Vec<T>,
}

/// Gradients produced by one backward pass.
pub struct Gradients<T: Scalar> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf or intermediate node.
    pub fn wrt(&self, var: Var) -> Option<&[T]> {
        self.nodes.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient per parameter, summed over every use on the tape.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.params.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    track_params: bool,
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// A graph that records parameter gradients.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self { params, nodes: Vec::new(), track_params: true }
    }

    /// A graph for inference: parameters are read but never differentiated.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Self { params, nodes: Vec::new(), track_params: false }
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(data), _) => data,
            (None, Op::Param(id)) => self.params.value(*id).data(),
            _ => unreachable!("node without value"),
        }
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape")
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value: Some(value), op, needs_grad, aux: Vec::new() });
        Var(self.nodes.len() - 1)
    }

    fn push_aux(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op, needs_grad: bool, aux: Vec<T>) -> Var {
        let v = self.push(shape, value, op, needs_grad);
        self.nodes[v.0].aux = aux;
        v
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; never differentiated.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Input, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let shape = self.params.value(id).shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: None,
            op: Op::Param(id),
            needs_grad: self.track_params,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!("add: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out: Vec<T> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), ng))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s shape.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(format!("add_broadcast: {sa:?} vs {sb:?}")));
        }
        let inner = self.value(b).len();
        let vb = self.value(b);
        let out: Vec<T> = self
            .value(a)
            .chunks(inner.max(1))
            .flat_map(|row| row.iter().zip(vb).map(|(&x, &y)| x + y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddBroadcast(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!("mul: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out: Vec<T> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let st = T::from_f64(s);
        let out: Vec<T> = self.value(a).iter().map(|&x| x * st).collect();
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, s), ng)
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul: {sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::ZERO; m * n];
        matmul(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    /// `x · w + b` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let k = *sx.last().ok_or_else(|| Error::shape("linear: scalar input"))?;
        if sw.len() != 2 || sw[0] != k {
            return Err(Error::shape(format!("linear: input {sx:?} with weight {sw:?}")));
        }
        let n = sw[1];
        if let Some(b) = b {
            if self.shape(b) != [n] {
                return Err(Error::shape(format!("linear: bias {:?} for {n} outputs", self.shape(b))));
            }
        }
        let m = self.value(x).len() / k.max(1);
        let mut out = vec![T::ZERO; m * n];
        if let Some(b) = b {
            let bv = self.value(b);
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bv);
            }
        }
        matmul(m, k, n, self.value(x), false, self.value(w), false, &mut out, b.is_some());
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(shape, out, Op::Linear { x, w, b }, ng))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let c = T::from_f64(SQRT_2_OVER_PI);
        let k = T::from_f64(GELU_COEF);
        let half = T::from_f64(0.5);
        let out: Vec<T> = self
            .value(a)
            .iter()
            .map(|&x| half * x * (T::ONE + (c * (x + k * x * x * x)).tanh()))
            .collect();
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, Op::Gelu(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<T> = self.value(a).iter().map(|&x| if x > T::ZERO { x } else { T::ZERO }).collect();
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, Op::Relu(a), ng)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = *self.shape(a).last().ok_or_else(|| Error::shape("softmax: scalar input"))?;
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        let ng = self.ng(a);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Softmax(a), ng))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let n = *self.shape(x).last().ok_or_else(|| Error::shape("layer_norm: scalar input"))?;
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(Error::shape("layer_norm: affine parameters must match the last axis"));
        }
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let rows = xv.len() / n;
        let mut out = vec![T::ZERO; xv.len()];
        // aux: per row (mean, rstd)
        let mut aux = Vec::with_capacity(rows * 2);
        let inv_n = T::from_f64(1.0 / n as f64);
        let eps = T::from_f64(LAYER_NORM_EPS);
        for (row, o) in xv.chunks(n).zip(out.chunks_mut(n)) {
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean *= inv_n;
            let mut var = T::ZERO;
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_n;
            let rstd = T::ONE / (var + eps).sqrt();
            for i in 0..n {
                o[i] = (row[i] - mean) * rstd * g[i] + b[i];
            }
            aux.push(mean);
            aux.push(rstd);
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push_aux(self.shape(x).to_vec(), out, Op::LayerNorm { x, gamma, beta }, ng, aux))
    }

    /// Normalizes each sample of `[B, C, H, W]` over groups of `C / groups`
    /// channels and all pixels, then applies a per-channel affine map.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || groups == 0 || s[1] % groups != 0 {
            return Err(Error::shape(format!("group_norm: {s:?} in {groups} groups")));
        }
        if self.shape(gamma) != [s[1]] || self.shape(beta) != [s[1]] {
            return Err(Error::shape("group_norm: affine parameters must match the channel axis"));
        }
        let (c, hw) = (s[1], s[2] * s[3]);
        let n = c / groups * hw;
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let mut out = vec![T::ZERO; xv.len()];
        let mut aux = Vec::with_capacity(xv.len() / n * 2);
        let inv_n = T::from_f64(1.0 / n as f64);
        let eps = T::from_f64(LAYER_NORM_EPS);
        for (k, (chunk, o)) in xv.chunks(n).zip(out.chunks_mut(n)).enumerate() {
            let mut mean = T::ZERO;
            for &v in chunk {
                mean += v;
            }
            mean *= inv_n;
            let mut var = T::ZERO;
            for &v in chunk {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_n;
            let rstd = T::ONE / (var + eps).sqrt();
            let c0 = (k % groups) * (c / groups);
            for (i, (ov, &v)) in o.iter_mut().zip(chunk).enumerate() {
                let ch = c0 + i / hw;
                *ov = (v - mean) * rstd * g[ch] + b[ch];
            }
            aux.push(mean);
            aux.push(rstd);
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push_aux(s, out, Op::GroupNorm { x, gamma, beta, groups }, ng, aux))
    }

    /// Row lookup: `table[ids[i]]`, output `[ids.len(), dim]`.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::shape("embedding: table must be [vocab, dim]"));
        }
        let (vocab, dim) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= vocab) {
            return Err(Error::shape(format!("embedding: id {bad} outside vocabulary of {vocab}")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&tv[i as usize * dim..(i as usize + 1) * dim]);
        }
        let ng = self.ng(table);
        Ok(self.push(vec![ids.len(), dim], out, Op::Embedding { table, ids: ids.to_vec() }, ng))
    }

    /// `[B, T, H*D] -> [B, H, T, D]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || s[2] % heads != 0 {
            return Err(Error::shape(format!("split_heads: {s:?} into {heads} heads")));
        }
        let (b, t, e) = (s[0], s[1], s[2]);
        let d = e / heads;
        let xv = self.value(x);
        let mut out = vec![T::ZERO; xv.len()];
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let src = (bi * t + ti) * e + h * d;
                    let dst = ((bi * heads + h) * t + ti) * d;
                    out[dst..dst + d].copy_from_slice(&xv[src..src + d]);
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(vec![b, heads, t, d], out, Op::SplitHeads { x, heads }, ng))
    }

    /// `[B, H, T, D] -> [B, T, H*D]`.
    pub fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape(format!("merge_heads: {s:?}")));
        }
        let (b, heads, t, d) = (s[0], s[1], s[2], s[3]);
        let xv = self.value(x);
        let mut out = vec![T::ZERO; xv.len()];
        permute_heads(xv, &mut out, b, heads, t, d, false);
        let ng = self.ng(x);
        Ok(self.push(vec![b, t, heads * d], out, Op::MergeHeads(x), ng))
    }

    /// Scaled dot-product attention over `[B, H, T, D]` operands.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Option<Arc<AttentionMask>>) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if sq.len() != 4 || sk.len() != 4 || sv.len() != 4 {
            return Err(Error::shape("attention: operands must be [B, H, T, D]"));
        }
        if sq[0] != sk[0] || sq[1] != sk[1] || sq[3] != sk[3] || sk != sv {
            return Err(Error::shape(format!("attention: q {sq:?}, k {sk:?}, v {sv:?}")));
        }
        let (b, h, tq, d) = (sq[0], sq[1], sq[2], sq[3]);
        let tk = sk[2];
        if d == 0 {
            return Err(Error::shape("attention: head dimension must be positive"));
        }
        if let Some(m) = &mask {
            if m.queries != tq || m.keys != tk || (m.batch != 1 && m.batch != b) {
                return Err(Error::shape(format!(
                    "attention: mask [{}, {}, {}] for batch {b}, {tq} queries, {tk} keys",
                    m.batch, m.queries, m.keys
                )));
            }
        }
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let scale = T::from_f64(1.0 / (d as f64).sqrt());
        let mut probs = vec![T::ZERO; b * h * tq * tk];
        let mut out = vec![T::ZERO; b * h * tq * d];
        for bi in 0..b {
            for hi in 0..h {
                let bh = bi * h + hi;
                let qs = &qv[bh * tq * d..(bh + 1) * tq * d];
                let ks = &kv[bh * tk * d..(bh + 1) * tk * d];
                let vs = &vv[bh * tk * d..(bh + 1) * tk * d];
                let p = &mut probs[bh * tq * tk..(bh + 1) * tq * tk];
                matmul(tq, d, tk, qs, false, ks, true, p, false);
                for i in 0..tq {
                    let row = &mut p[i * tk..(i + 1) * tk];
                    row.iter_mut().for_each(|x| *x *= scale);
                    if let Some(m) = &mask {
                        let allowed = m.row(bi, i);
                        if !allowed.iter().any(|&a| a) {
                            row.iter_mut().for_each(|x| *x = T::ZERO);
                            continue;
                        }
                        for (x, &a) in row.iter_mut().zip(allowed) {
                            if !a {
                                *x = T::neg_infinity();
                            }
                        }
                    }
                    softmax_in_place(row);
                }
                matmul(tq, tk, d, p, false, vs, false, &mut out[bh * tq * d..(bh + 1) * tq * d], false);
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push_aux(vec![b, h, tq, d], out, Op::Attention { q, k, v }, ng, probs))
    }

    /// Post-softmax attention weights of an attention node, `[B, H, Tq, Tk]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match self.nodes[v.0].op {
            Op::Attention { .. } => Some(&self.nodes[v.0].aux),
            _ => None,
        }
    }

    /// Mean token cross-entropy of `logits [N, V]` against `targets`; rows
    /// whose target equals `ignore` are skipped.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], ignore: u32) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(Error::shape(format!(
                "cross_entropy: logits {s:?} with {} targets",
                targets.len()
            )));
        }
        let vocab = s[1];
        let count = targets.iter().filter(|&&t| t != ignore).count();
        if count == 0 {
            return Err(Error::invalid("cross_entropy: every target is ignored"));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t != ignore && t as usize >= vocab) {
            return Err(Error::invalid(format!("cross_entropy: target {bad} outside vocabulary of {vocab}")));
        }
        let mut probs = self.value(logits).to_vec();
        let mut total = 0.0f64;
        for (row, &t) in probs.chunks_mut(vocab).zip(targets) {
            if t == ignore {
                continue;
            }
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut sum = T::ZERO;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            let inv = T::ONE / sum;
            row.iter_mut().for_each(|x| *x *= inv);
            let p = row[t as usize].to_f64();
            total -= if p.is_nan() { p } else { p.max(f64::MIN_POSITIVE).ln() };
        }
        let loss = T::from_f64(total / count as f64);
        let ng = self.ng(logits);
        Ok(self.push_aux(
            vec![],
            vec![loss],
            Op::CrossEntropy { logits, targets: targets.to_vec(), ignore, count },
            ng,
            probs,
        ))
    }

    /// 2D convolution. `x` is `[B, C, H, W]`, `w` is `[Co, C, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || stride == 0 {
            return Err(Error::shape(format!("conv2d: input {sx:?} with kernel {sw:?}")));
        }
        let geo = ConvGeometry::new(&sx, &sw, stride, pad)?;
        if let Some(b) = b {
            if self.shape(b) != [geo.co] {
                return Err(Error::shape("conv2d: bias must match output channels"));
            }
        }
        let (xv, wv) = (self.value(x), self.value(w));
        let bv = b.map(|b| self.value(b));
        let px = geo.out_pixels();
        let n = geo.batch * px;
        let mut cols = vec![T::ZERO; geo.col_rows() * n];
        for bi in 0..geo.batch {
            geo.im2col(&xv[bi * geo.in_image()..(bi + 1) * geo.in_image()], &mut cols, n, bi * px);
        }
        let mut flat = vec![T::ZERO; geo.co * n];
        matmul(geo.co, geo.col_rows(), n, wv, false, &cols, false, &mut flat, false);
        let mut out = vec![T::ZERO; geo.batch * geo.co * px];
        for bi in 0..geo.batch {
            for c in 0..geo.co {
                let bias = bv.map_or(T::ZERO, |bv| bv[c]);
                let src = &flat[c * n + bi * px..c * n + (bi + 1) * px];
                for (o, &v) in out[(bi * geo.co + c) * px..(bi * geo.co + c + 1) * px].iter_mut().zip(src) {
                    *o = v + bias;
                }
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(
            vec![geo.batch, geo.co, geo.ho, geo.wo],
            out,
            Op::Conv2d { x, w, b, stride, pad },
            ng,
        ))
    }

    /// `[B, C, H, W] -> [B, H*W, C]`, row-major over the spatial grid.
    pub fn nchw_to_seq(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape(format!("nchw_to_seq: {s:?}")));
        }
        let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
        let xv = self.value(x);
        let mut out = vec![T::ZERO; xv.len()];
        for bi in 0..b {
            for ci in 0..c {
                for p in 0..hw {
                    out[(bi * hw + p) * c + ci] = xv[(bi * c + ci) * hw + p];
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(vec![b, hw, c], out, Op::NchwToSeq(x), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::shape(format!("reshape: {:?} to {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut s = T::ZERO;
        for &v in self.value(x) {
            s += v;
        }
        let ng = self.ng(x);
        self.push(vec![], vec![s], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let mut s = T::ZERO;
        for &v in self.value(x) {
            s += v;
        }
        let ng = self.ng(x);
        self.push(vec![], vec![s / T::from_f64(n as f64)], Op::Mean(x), ng)
    }

    /// Inverted dropout; the identity when `rate == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let scale = 1.0 / (1.0 - rate);
        let keep: Vec<bool> = (0..self.value(x).len()).map(|_| rng.gen::<f64>() >= rate).collect();
        let st = T::from_f64(scale);
        let out: Vec<T> = self
            .value(x)
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { v * st } else { T::ZERO })
            .collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, Op::Dropout { x, keep, scale }, ng)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.nodes[loss.0].shape.is_empty() {
            return Err(Error::shape(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::ONE]);
        let mut param_grads: Vec<Option<Vec<T>>> = vec![None; self.params.len()];

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Input => {}
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Param(id) => {
                    accumulate(&mut param_grads[id.0], &g);
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, |ga| add_into(ga, &g));
                    self.acc(&mut grads, *b, |gb| add_into(gb, &g));
                }
                Op::AddBroadcast(a, b) => {
                    self.acc(&mut grads, *a, |ga| add_into(ga, &g));
                    self.acc(&mut grads, *b, |gb| {
                        let n = gb.len().max(1);
                        for chunk in g.chunks(n) {
                            add_into(gb, chunk);
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    self.acc(&mut grads, *a, |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * vb[i];
                        }
                    });
                    self.acc(&mut grads, *b, |gb| {
                        for i in 0..gb.len() {
                            gb[i] += g[i] * va[i];
                        }
                    });
                }
                Op::Scale(a, s) => {
                    let st = T::from_f64(*s);
                    self.acc(&mut grads, *a, |ga| {
                        for (x, &y) in ga.iter_mut().zip(&g) {
                            *x += y * st;
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let n = self.shape(*b)[1];
                    let (va, vb) = (self.value(*a), self.value(*b));
                    self.acc(&mut grads, *a, |ga| matmul(m, n, k, &g, false, vb, true, ga, true));
                    self.acc(&mut grads, *b, |gb| matmul(k, m, n, va, true, &g, false, gb, true));
                }
                Op::Linear { x, w, b } => {
                    let k = self.shape(*w)[0];
                    let n = self.shape(*w)[1];
                    let m = g.len() / n;
                    let (vx, vw) = (self.value(*x), self.value(*w));
                    self.acc(&mut grads, *x, |gx| matmul(m, n, k, &g, false, vw, true, gx, true));
                    self.acc(&mut grads, *w, |gw| matmul(k, m, n, vx, true, &g, false, gw, true));
                    if let Some(b) = b {
                        self.acc(&mut grads, *b, |gb| {
                            for row in g.chunks(n) {
                                add_into(gb, row);
                            }
                        });
                    }
                }
                Op::Gelu(a) => {
                    let va = self.value(*a);
                    let c = T::from_f64(SQRT_2_OVER_PI);
                    let k = T::from_f64(GELU_COEF);
                    let k3 = T::from_f64(3.0 * GELU_COEF);
                    let half = T::from_f64(0.5);
                    self.acc(&mut grads, *a, |ga| {
                        for i in 0..ga.len() {
                            let x = va[i];
                            let t = (c * (x + k * x * x * x)).tanh();
                            let d = half * (T::ONE + t) + half * x * (T::ONE - t * t) * c * (T::ONE + k3 * x * x);
                            ga[i] += g[i] * d;
                        }
                    });
                }
                Op::Relu(a) => {
                    let va = self.value(*a);
                    self.acc(&mut grads, *a, |ga| {
                        for i in 0..ga.len() {
                            if va[i] > T::ZERO {
                                ga[i] += g[i];
                            }
                        }
                    });
                }
                Op::Softmax(a) => {
                    let y = node.value.as_deref().unwrap();
                    let n = *node.shape.last().unwrap();
                    self.acc(&mut grads, *a, |ga| {
                        for ((gy, yy), gx) in g.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                            let mut dot = T::ZERO;
                            for i in 0..n {
                                dot += gy[i] * yy[i];
                            }
                            for i in 0..n {
                                gx[i] += yy[i] * (gy[i] - dot);
                            }
                        }
                    });
                }
                Op::GroupNorm { x, gamma, beta, groups } => {
                    let groups = *groups;
                    let (c, hw) = (node.shape[1], node.shape[2] * node.shape[3]);
                    let cg = c / groups;
                    let n = cg * hw;
                    let (vx, vg) = (self.value(*x), self.value(*gamma));
                    let aux = &node.aux;
                    let inv_n = T::from_f64(1.0 / n as f64);
                    let ch = |k: usize, i: usize| (k % groups) * cg + i / hw;
                    self.acc(&mut grads, *gamma, |gg| {
                        for (k, (chunk, gr)) in vx.chunks(n).zip(g.chunks(n)).enumerate() {
                            let (mean, rstd) = (aux[2 * k], aux[2 * k + 1]);
                            for i in 0..n {
                                gg[ch(k, i)] += gr[i] * (chunk[i] - mean) * rstd;
                            }
                        }
                    });
                    self.acc(&mut grads, *beta, |gb| {
                        for (k, gr) in g.chunks(n).enumerate() {
                            for i in 0..n {
                                gb[ch(k, i)] += gr[i];
                            }
                        }
                    });
                    self.acc(&mut grads, *x, |gx| {
                        for (k, ((chunk, gr), gxr)) in vx.chunks(n).zip(g.chunks(n)).zip(gx.chunks_mut(n)).enumerate() {
                            let (mean, rstd) = (aux[2 * k], aux[2 * k + 1]);
                            let mut sum_dy = T::ZERO;
                            let mut sum_dy_xhat = T::ZERO;
                            for i in 0..n {
                                let dy = gr[i] * vg[ch(k, i)];
                                sum_dy += dy;
                                sum_dy_xhat += dy * (chunk[i] - mean) * rstd;
                            }
                            for i in 0..n {
                                let dy = gr[i] * vg[ch(k, i)];
                                let xhat = (chunk[i] - mean) * rstd;
                                gxr[i] += rstd * (dy - inv_n * sum_dy - xhat * inv_n * sum_dy_xhat);
                            }
                        }
                    });
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let n = *node.shape.last().unwrap();
                    let (vx, vg) = (self.value(*x), self.value(*gamma));
                    let aux = &node.aux;
                    let inv_n = T::from_f64(1.0 / n as f64);
                    self.acc(&mut grads, *gamma, |gg| {
                        for (r, (row, gr)) in vx.chunks(n).zip(g.chunks(n)).enumerate() {
                            let (mean, rstd) = (aux[2 * r], aux[2 * r + 1]);
                            for i in 0..n {
                                gg[i] += gr[i] * (row[i] - mean) * rstd;
                            }
                        }
                    });
                    self.acc(&mut grads, *beta, |gb| {
                        for gr in g.chunks(n) {
                            add_into(gb, gr);
                        }
                    });
                    self.acc(&mut grads, *x, |gx| {
                        for (r, ((row, gr), gxr)) in vx.chunks(n).zip(g.chunks(n)).zip(gx.chunks_mut(n)).enumerate() {
                            let (mean, rstd) = (aux[2 * r], aux[2 * r + 1]);
                            let mut sum_dy = T::ZERO;
                            let mut sum_dy_xhat = T::ZERO;
                            for i in 0..n {
                                let dy = gr[i] * vg[i];
                                let xhat = (row[i] - mean) * rstd;
                                sum_dy += dy;
                                sum_dy_xhat += dy * xhat;
                            }
                            for i in 0..n {
                                let dy = gr[i] * vg[i];
                                let xhat = (row[i] - mean) * rstd;
                                gxr[i] += rstd * (dy - inv_n * sum_dy - xhat * inv_n * sum_dy_xhat);
                            }
                        }
                    });
                }
                Op::Embedding { table, ids } => {
                    let dim = self.shape(*table)[1];
                    self.acc(&mut grads, *table, |gt| {
                        for (row, &i) in g.chunks(dim).zip(ids) {
                            add_into(&mut gt[i as usize * dim..(i as usize + 1) * dim], row);
                        }
                    });
                }
                Op::SplitHeads { x, heads } => {
                    let s = &node.shape;
                    let (b, t, d) = (s[0], s[2], s[3]);
                    let heads = *heads;
                    self.acc(&mut grads, *x, |gx| {
                        let mut tmp = vec![T::ZERO; gx.len()];
                        permute_heads(&g, &mut tmp, b, heads, t, d, false);
                        add_into(gx, &tmp);
                    });
                }
                Op::MergeHeads(x) => {
                    let s = self.shape(*x);
                    let (b, heads, t, d) = (s[0], s[1], s[2], s[3]);
                    self.acc(&mut grads, *x, |gx| {
                        let mut tmp = vec![T::ZERO; gx.len()];
                        permute_heads(&g, &mut tmp, b, heads, t, d, true);
                        add_into(gx, &tmp);
                    });
                }
                Op::Attention { q, k, v } => {
                    self.attention_backward(&mut grads, node, &g, *q, *k, *v);
                }
                Op::CrossEntropy { logits, targets, ignore, count } => {
                    let vocab = self.shape(*logits)[1];
                    let probs = &node.aux;
                    let scale = g[0] / T::from_f64(*count as f64);
                    self.acc(&mut grads, *logits, |gl| {
                        for (r, &t) in targets.iter().enumerate() {
                            if t == *ignore {
                                continue;
                            }
                            let row = &mut gl[r * vocab..(r + 1) * vocab];
                            let p = &probs[r * vocab..(r + 1) * vocab];
                            for i in 0..vocab {
                                row[i] += p[i] * scale;
                            }
                            row[t as usize] -= scale;
                        }
                    });
                }
                Op::Conv2d { x, w, b, stride, pad } => {
                    let geo = ConvGeometry::new(self.shape(*x), self.shape(*w), *stride, *pad)?;
                    self.conv_backward(&mut grads, &g, &geo, *x, *w, *b);
                }
                Op::NchwToSeq(x) => {
                    let s = self.shape(*x);
                    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
                    self.acc(&mut grads, *x, |gx| {
                        for bi in 0..b {
                            for ci in 0..c {
                                for p in 0..hw {
                                    gx[(bi * c + ci) * hw + p] += g[(bi * hw + p) * c + ci];
                                }
                            }
                        }
                    });
                }
                Op::Reshape(x) => {
                    self.acc(&mut grads, *x, |gx| add_into(gx, &g));
                }
                Op::Sum(x) => {
                    self.acc(&mut grads, *x, |gx| gx.iter_mut().for_each(|v| *v += g[0]));
                }
                Op::Mean(x) => {
                    let n = T::from_f64(self.value(*x).len().max(1) as f64);
                    self.acc(&mut grads, *x, |gx| gx.iter_mut().for_each(|v| *v += g[0] / n));
                }
                Op::Dropout { x, keep, scale } => {
                    let st = T::from_f64(*scale);
                    self.acc(&mut grads, *x, |gx| {
                        for i in 0..gx.len() {
                            if keep[i] {
                                gx[i] += g[i] * st;
                            }
                        }
                    });
                }
            }
        }

        let params = param_grads
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| g.map(|g| (ParamId(i), g)))
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let len = self.nodes[v.0].shape.iter().product();
        let buf = grads[v.0].get_or_insert_with(|| vec![T::ZERO; len]);
        f(buf);
    }

    fn attention_backward(&self, grads: &mut [Option<Vec<T>>], node: &Node<T>, g: &[T], q: Var, k: Var, v: Var) {
        let (b, h, tq, d) = (node.shape[0], node.shape[1], node.shape[2], node.shape[3]);
        let tk = self.shape(k)[2];
        let probs = &node.aux;
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let scale = T::from_f64(1.0 / (d as f64).sqrt());
        let mut dq = vec![T::ZERO; qv.len()];
        let mut dk = vec![T::ZERO; kv.len()];
        let mut dv = vec![T::ZERO; vv.len()];
        let mut dp = vec![T::ZERO; tq * tk];
        for bh in 0..b * h {
            let p = &probs[bh * tq * tk..(bh + 1) * tq * tk];
            let go = &g[bh * tq * d..(bh + 1) * tq * d];
            let qs = &qv[bh * tq * d..(bh + 1) * tq * d];
            let ks = &kv[bh * tk * d..(bh + 1) * tk * d];
            let vs = &vv[bh * tk * d..(bh + 1) * tk * d];
            // dV = Pᵀ dO
            matmul(tk, tq, d, p, true, go, false, &mut dv[bh * tk * d..(bh + 1) * tk * d], false);
            // dP = dO Vᵀ
            matmul(tq, d, tk, go, false, vs, true, &mut dp, false);
            // dS = P ⊙ (dP − rowsum(dP ⊙ P)), then fold in the 1/√d scale
            for i in 0..tq {
                let pr = &p[i * tk..(i + 1) * tk];
                let dr = &mut dp[i * tk..(i + 1) * tk];
                let mut dot = T::ZERO;
                for j in 0..tk {
                    dot += pr[j] * dr[j];
                }
                for j in 0..tk {
                    dr[j] = pr[j] * (dr[j] - dot) * scale;
                }
            }
            matmul(tq, tk, d, &dp, false, ks, false, &mut dq[bh * tq * d..(bh + 1) * tq * d], false);
            matmul(tk, tq, d, &dp, true, qs, false, &mut dk[bh * tk * d..(bh + 1) * tk * d], false);
        }
        self.acc(grads, q, |gq| add_into(gq, &dq));
        self.acc(grads, k, |gk| add_into(gk, &dk));
        self.acc(grads, v, |gv| add_into(gv, &dv));
    }

    fn conv_backward(&self, grads: &mut [Option<Vec<T>>], g: &[T], geo: &ConvGeometry, x: Var, w: Var, b: Option<Var>) {
        let (xv, wv) = (self.value(x), self.value(w));
        let px = geo.out_pixels();
        if let Some(b) = b {
            self.acc(grads, b, |gb| {
                for bi in 0..geo.batch {
                    for c in 0..geo.co {
                        let row = &g[(bi * geo.co + c) * px..(bi * geo.co + c + 1) * px];
                        let mut s = T::ZERO;
                        for &v in row {
                            s += v;
                        }
                        gb[c] += s;
                    }
                }
            });
        }
        let need_x = self.nodes[x.0].needs_grad;
        let need_w = self.nodes[w.0].needs_grad;
        let n = geo.batch * px;
        let mut gflat = vec![T::ZERO; geo.co * n];
        for bi in 0..geo.batch {
            for c in 0..geo.co {
                gflat[c * n + bi * px..c * n + (bi + 1) * px].copy_from_slice(&g[(bi * geo.co + c) * px..(bi * geo.co + c + 1) * px]);
            }
        }
        let mut dw = vec![T::ZERO; if need_w { wv.len() } else { 0 }];
        let mut dx = vec![T::ZERO; if need_x { xv.len() } else { 0 }];
        if need_w {
            let mut cols = vec![T::ZERO; geo.col_rows() * n];
            for bi in 0..geo.batch {
                geo.im2col(&xv[bi * geo.in_image()..(bi + 1) * geo.in_image()], &mut cols, n, bi * px);
            }
            matmul(geo.co, n, geo.col_rows(), &gflat, false, &cols, true, &mut dw, false);
        }
        if need_x {
            let mut dcols = vec![T::ZERO; geo.col_rows() * n];
            matmul(geo.col_rows(), geo.co, n, wv, true, &gflat, false, &mut dcols, false);
            for bi in 0..geo.batch {
                geo.col2im(&dcols, n, bi * px, &mut dx[bi * geo.in_image()..(bi + 1) * geo.in_image()]);
            }
        }
        if need_w {
            self.acc(grads, w, |gw| add_into(gw, &dw));
        }
        if need_x {
            self.acc(grads, x, |gx| add_into(gx, &dx));
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(acc) => add_into(acc, g),
        None => *slot = Some(g.to_vec()),
    }
}

#[inline]
fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically stable in-place softmax. Entries equal to −∞ become 0.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    if !max.is_finite() {
        row.iter_mut().for_each(|x| *x = T::ZERO);
        return;
    }
    let mut sum = T::ZERO;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = T::ONE / sum;
    row.iter_mut().for_each(|x| *x *= inv);
}

/// Moves between `[B, T, H*D]` (`merged`) and `[B, H, T, D]` (`split`).
/// With `to_split == false` the source is split-layout and the destination merged.
fn permute_heads<T: Scalar>(src: &[T], dst: &mut [T], b: usize, heads: usize, t: usize, d: usize, to_split: bool) {
    let e = heads * d;
    for bi in 0..b {
        for ti in 0..t {
            for h in 0..heads {
                let merged = (bi * t + ti) * e + h * d;
                let split = ((bi * heads + h) * t + ti) * d;
                if to_split {
                    dst[split..split + d].copy_from_slice(&src[merged..merged + d]);
                } else {
                    dst[merged..merged + d].copy_from_slice(&src[split..split + d]);
                }
            }
        }
    }
}

struct ConvGeometry {
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(sx: &[usize], sw: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (batch, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape("conv2d: kernel larger than padded input"));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(Self { batch, c, h, w, co, kh, kw, ho, wo, stride, pad })
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn in_image(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Writes image `x` into columns `off..off + out_pixels` of a `[col_rows, ld]` matrix.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T], ld: usize, off: usize) {
        let px = self.out_pixels();
        for c in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * ld + off..row * ld + off + px];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[oy * self.wo + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < self.h && (ix as usize) < self.w {
                                x[(c * self.h + iy as usize) * self.w + ix as usize]
                            } else {
                                T::ZERO
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], ld: usize, off: usize, dx: &mut [T]) {
        let px = self.out_pixels();
        for c in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * ld + off..row * ld + off + px];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                dx[(c * self.h + iy as usize) * self.w + ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}
