//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every kernel application in topological order; the
//! backward pass walks the tape once in reverse. Parameters are referenced
//! from a borrowed [`ParamStore`] rather than copied into the tape, and the
//! embedding lookup produces row-sparse gradients so that large tables are
//! never materialised as dense gradient buffers.

use std::collections::{BTreeMap, HashMap};

use crate::error::{NasError, Result};
use crate::tensor::{ParamId, ParamStore, Scalar, Tensor};

/// Default epsilon inside layer normalisation.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// FLOPs charged per softmax logit (scale, max-subtract, exp, sum, divide).
pub const SOFTMAX_FLOPS_PER_ELEM: u64 = 5;
/// FLOPs charged per normalised element of a layer norm.
pub const LAYER_NORM_FLOPS_PER_ELEM: u64 = 8;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<T> {
    Owned(Vec<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Param,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MidLinear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        width: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    ConcatLast(Vec<Var>),
    ConcatMid(Vec<Var>),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    BatchedMatmul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    MaskLast {
        x: Var,
        d: usize,
    },
    MaskMid {
        x: Var,
        d: usize,
    },
    MaskRows {
        x: Var,
        keep: Vec<bool>,
    },
    TriuFlatten(Var),
    PadLast(Var),
    PadMid(Var),
    Gather {
        x: Var,
        rows: Option<Vec<usize>>,
        cols: usize,
    },
    Embedding {
        table: ParamId,
        ids: Vec<usize>,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    BceWithLogits {
        z: Var,
        labels: Vec<T>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

impl<T> Node<T> {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Gradient of one parameter.
#[derive(Clone, Debug)]
pub enum ParamGrad<T> {
    Dense(Vec<T>),
    /// Row-sparse gradient of a 2-D table: row index → row gradient.
    Rows(BTreeMap<usize, Vec<T>>),
}

pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: BTreeMap<ParamId, ParamGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. a node, `None` when it did not reach the loss.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&ParamGrad<T>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &ParamGrad<T>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn into_params(self) -> BTreeMap<ParamId, ParamGrad<T>> {
        self.params
    }
}

pub struct Graph<'p, T: Scalar> {
    store: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
    flops: u64,
}

impl<'p, T: Scalar> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grad_enabled: true,
            flops: 0,
        }
    }

    pub fn with_params(store: &'p ParamStore<T>) -> Self {
        Graph {
            store: Some(store),
            ..Self::new()
        }
    }

    /// Forward-only graph: nothing on it requires a gradient.
    pub fn no_grad(mut self) -> Self {
        self.grad_enabled = false;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// FLOPs charged so far (2 per multiply-accumulate, see module constants).
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => self.store_ref().get(*id).data(),
        }
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(&self.nodes[v.0].shape, self.value(v).to_vec()).expect("node extents")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn store_ref(&self) -> &'p ParamStore<T> {
        self.store.expect("graph has no parameter store")
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input tensor; `requires_grad` makes it a differentiable leaf.
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Value::Owned(t.into_data()),
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    /// Parameter leaf; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let shape = self.store_ref().get(id).shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Value::Param(id),
            op: Op::Param,
            requires_grad: self.grad_enabled,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// `x · w + b` for `x: [B, I]`, `w: [I, O]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(NasError::shape("linear", &xs, &ws));
        }
        let (bsz, din, dout) = (xs[0], xs[1], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(NasError::shape("linear", &ws, self.shape(b)));
            }
        }
        let xv = self.value(x);
        let wv = self.value(w);
        let mut y = vec![T::zero(); bsz * dout];
        if let Some(b) = b {
            let bv = self.value(b);
            for row in y.chunks_mut(dout.max(1)) {
                row.copy_from_slice(bv);
            }
        }
        for r in 0..bsz {
            let xr = &xv[r * din..(r + 1) * din];
            let yr = &mut y[r * dout..(r + 1) * dout];
            for (k, &xk) in xr.iter().enumerate() {
                if xk == T::zero() {
                    continue;
                }
                let wr = &wv[k * dout..(k + 1) * dout];
                for (yo, &wo) in yr.iter_mut().zip(wr) {
                    *yo += xk * wo;
                }
            }
        }
        self.flops += 2 * (bsz * din * dout) as u64;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(vec![bsz, dout], y, Op::Linear { x, w, b }, &inputs))
    }

    /// Linear map along the middle axis: `x: [B, N, E]`, `w: [N, M]`, `b: [M]` → `[B, M, E]`.
    pub fn mid_linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(NasError::shape("mid_linear", &xs, &ws));
        }
        let (bsz, nin, e) = (xs[0], xs[1], xs[2]);
        let nout = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [nout] {
                return Err(NasError::shape("mid_linear", &ws, self.shape(b)));
            }
        }
        let xv = self.value(x);
        let wv = self.value(w);
        let mut y = vec![T::zero(); bsz * nout * e];
        if let Some(b) = b {
            let bv = self.value(b);
            for r in 0..bsz {
                for m in 0..nout {
                    y[(r * nout + m) * e..(r * nout + m + 1) * e].fill(bv[m]);
                }
            }
        }
        for r in 0..bsz {
            for n in 0..nin {
                let xr = &xv[(r * nin + n) * e..(r * nin + n + 1) * e];
                if xr.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                for m in 0..nout {
                    let wnm = wv[n * nout + m];
                    let yr = &mut y[(r * nout + m) * e..(r * nout + m + 1) * e];
                    for (yo, &xi) in yr.iter_mut().zip(xr) {
                        *yo += wnm * xi;
                    }
                }
            }
        }
        self.flops += 2 * (bsz * nin * nout * e) as u64;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(vec![bsz, nout, e], y, Op::MidLinear { x, w, b }, &inputs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, y, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, y, Op::Sigmoid(x), &[x])
    }

    /// Softmax over the last axis. Positions with `key_mask[j] == false` get
    /// probability zero; a row with no valid key is all zeros.
    pub fn softmax_lastdim(&mut self, x: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| NasError::kernel("softmax", "scalar input"))?;
        if let Some(m) = key_mask {
            if m.len() != d {
                return Err(NasError::shape("softmax", &shape, &[m.len()]));
            }
        }
        let xv = self.value(x);
        let mut y = vec![T::zero(); xv.len()];
        for (xr, yr) in xv.chunks(d.max(1)).zip(y.chunks_mut(d.max(1))) {
            let valid = |j: usize| key_mask.map_or(true, |m| m[j]);
            let mut mx = T::neg_infinity();
            for (j, &v) in xr.iter().enumerate() {
                if valid(j) && v > mx {
                    mx = v;
                }
            }
            if mx == T::neg_infinity() {
                continue;
            }
            let mut s = T::zero();
            for (j, (&v, o)) in xr.iter().zip(yr.iter_mut()).enumerate() {
                if valid(j) {
                    *o = (v - mx).exp();
                    s += *o;
                }
            }
            for o in yr.iter_mut() {
                *o /= s;
            }
        }
        self.flops += SOFTMAX_FLOPS_PER_ELEM * xv.len() as u64;
        Ok(self.push(shape, y, Op::Softmax(x), &[x]))
    }

    /// Layer normalisation over the first `width` entries of the last axis with
    /// learned scale/shift; entries at or beyond `width` are emitted as zero.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, width: usize, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| NasError::kernel("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(NasError::shape("layer_norm", &shape, self.shape(gamma)));
        }
        if width == 0 || width > d {
            return Err(NasError::kernel("layer_norm", format!("width {width} outside 1..={d}")));
        }
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let rows = xv.len() / d;
        let mut y = vec![T::zero(); xv.len()];
        let mut xhat = vec![T::zero(); rows * width];
        let mut rstd = vec![T::zero(); rows];
        let wt = T::of(width as f64);
        for r in 0..rows {
            let xr = &xv[r * d..r * d + width];
            let mean = xr.iter().copied().sum::<T>() / wt;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / wt;
            let rs = T::one() / (var + T::of(eps)).sqrt();
            rstd[r] = rs;
            for j in 0..width {
                let h = (xr[j] - mean) * rs;
                xhat[r * width + j] = h;
                y[r * d + j] = gv[j] * h + bv[j];
            }
        }
        self.flops += LAYER_NORM_FLOPS_PER_ELEM * (rows * width) as u64;
        Ok(self.push(
            shape,
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                width,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Concatenate 2-D tensors along the last axis.
    pub fn concat_lastdim(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| NasError::kernel("concat_lastdim", "no inputs"))?;
        let rows = self.shape(*first)[0];
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.shape(v);
            if s.len() != 2 || s[0] != rows {
                return Err(NasError::shape("concat_lastdim", self.shape(*first), s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut y = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &w) in xs.iter().zip(&widths) {
                y.extend_from_slice(&self.value(v)[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push(vec![rows, total], y, Op::ConcatLast(xs.to_vec()), xs))
    }

    /// Concatenate 3-D tensors along the middle axis.
    pub fn concat_middim(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| NasError::kernel("concat_middim", "no inputs"))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() != 3 {
            return Err(NasError::shape("concat_middim", &s0, &[]));
        }
        let (rows, e) = (s0[0], s0[2]);
        let mut counts = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.shape(v);
            if s.len() != 3 || s[0] != rows || s[2] != e {
                return Err(NasError::shape("concat_middim", &s0, s));
            }
            counts.push(s[1]);
        }
        let total: usize = counts.iter().sum();
        let mut y = Vec::with_capacity(rows * total * e);
        for r in 0..rows {
            for (&v, &n) in xs.iter().zip(&counts) {
                y.extend_from_slice(&self.value(v)[r * n * e..(r + 1) * n * e]);
            }
        }
        Ok(self.push(vec![rows, total, e], y, Op::ConcatMid(xs.to_vec()), xs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(NasError::shape("add", self.shape(a), self.shape(b)));
        }
        let y = self.value(a).iter().zip(self.value(b)).map(|(&p, &q)| p + q).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, y, Op::Add(a, b), &[a, b]))
    }

    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(NasError::shape("elementwise_mul", self.shape(a), self.shape(b)));
        }
        let y = self.value(a).iter().zip(self.value(b)).map(|(&p, &q)| p * q).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, y, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let y = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, y, Op::Scale(x, c), &[x])
    }

    /// `a: [B, M, K]` times `b: [B, K, N]` (or `b: [B, N, K]` when `transpose_b`).
    pub fn batched_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        if as_.len() != 3 || bs.len() != 3 || as_[0] != bs[0] {
            return Err(NasError::shape("batched_matmul", &as_, &bs));
        }
        let (bsz, m, k) = (as_[0], as_[1], as_[2]);
        let (bk, n) = if transpose_b { (bs[2], bs[1]) } else { (bs[1], bs[2]) };
        if bk != k {
            return Err(NasError::shape("batched_matmul", &as_, &bs));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut y = vec![T::zero(); bsz * m * n];
        for r in 0..bsz {
            let ab = &av[r * m * k..(r + 1) * m * k];
            let bb = &bv[r * k * n..(r + 1) * k * n];
            let yb = &mut y[r * m * n..(r + 1) * m * n];
            for i in 0..m {
                let yr = &mut yb[i * n..(i + 1) * n];
                if transpose_b {
                    for (j, yo) in yr.iter_mut().enumerate() {
                        let mut s = T::zero();
                        for kk in 0..k {
                            s += ab[i * k + kk] * bb[j * k + kk];
                        }
                        *yo = s;
                    }
                } else {
                    for kk in 0..k {
                        let aik = ab[i * k + kk];
                        for (yo, &bkj) in yr.iter_mut().zip(&bb[kk * n..(kk + 1) * n]) {
                            *yo += aik * bkj;
                        }
                    }
                }
            }
        }
        self.flops += 2 * (bsz * m * k * n) as u64;
        Ok(self.push(
            vec![bsz, m, n],
            y,
            Op::BatchedMatmul { a, b, transpose_b },
            &[a, b],
        ))
    }

    /// Zero every last-axis position `>= d`.
    pub fn mask_lastdim(&mut self, x: Var, d: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let w = *shape.last().ok_or_else(|| NasError::kernel("mask", "scalar input"))?;
        if d == 0 || d > w {
            return Err(NasError::kernel("mask", format!("width {d} outside 1..={w}")));
        }
        let mut y = self.value(x).to_vec();
        for row in y.chunks_mut(w) {
            row[d..].fill(T::zero());
        }
        Ok(self.push(shape, y, Op::MaskLast { x, d }, &[x]))
    }

    /// Zero every middle-axis row `>= d` of a 3-D tensor.
    pub fn mask_middim(&mut self, x: Var, d: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(NasError::shape("mask", &shape, &[]));
        }
        let (n, e) = (shape[1], shape[2]);
        if d == 0 || d > n {
            return Err(NasError::kernel("mask", format!("rows {d} outside 1..={n}")));
        }
        let mut y = self.value(x).to_vec();
        for blk in y.chunks_mut(n * e) {
            blk[d * e..].fill(T::zero());
        }
        Ok(self.push(shape, y, Op::MaskMid { x, d }, &[x]))
    }

    /// Zero the middle-axis rows where `keep[i] == false`.
    pub fn mask_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != keep.len() {
            return Err(NasError::shape("mask_rows", &shape, &[keep.len()]));
        }
        let (n, e) = (shape[1], shape[2]);
        let mut y = self.value(x).to_vec();
        for blk in y.chunks_mut(n * e) {
            for (i, &k) in keep.iter().enumerate() {
                if !k {
                    blk[i * e..(i + 1) * e].fill(T::zero());
                }
            }
        }
        Ok(self.push(
            shape,
            y,
            Op::MaskRows {
                x,
                keep: keep.to_vec(),
            },
            &[x],
        ))
    }

    /// Zero-extend the last axis of a 2-D tensor to `width`.
    pub fn pad_lastdim(&mut self, x: Var, width: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || width < shape[1] {
            return Err(NasError::shape("pad_lastdim", &shape, &[width]));
        }
        if width == shape[1] {
            return Ok(x);
        }
        let (rows, w) = (shape[0], shape[1]);
        let xv = self.value(x);
        let mut y = vec![T::zero(); rows * width];
        for r in 0..rows {
            y[r * width..r * width + w].copy_from_slice(&xv[r * w..(r + 1) * w]);
        }
        Ok(self.push(vec![rows, width], y, Op::PadLast(x), &[x]))
    }

    /// Zero-extend the middle axis of a 3-D tensor to `rows`.
    pub fn pad_middim(&mut self, x: Var, rows: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || rows < shape[1] {
            return Err(NasError::shape("pad_middim", &shape, &[rows]));
        }
        if rows == shape[1] {
            return Ok(x);
        }
        let (bsz, n, e) = (shape[0], shape[1], shape[2]);
        let xv = self.value(x);
        let mut y = vec![T::zero(); bsz * rows * e];
        for r in 0..bsz {
            y[r * rows * e..(r * rows + n) * e].copy_from_slice(&xv[r * n * e..(r + 1) * n * e]);
        }
        Ok(self.push(vec![bsz, rows, e], y, Op::PadMid(x), &[x]))
    }

    /// Strictly-upper-triangular entries of `[B, K, K]`, row-major, as `[B, K(K-1)/2]`.
    pub fn triu_flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != shape[2] {
            return Err(NasError::shape("triu_flatten", &shape, &[]));
        }
        let (bsz, k) = (shape[0], shape[1]);
        let p = k * k.saturating_sub(1) / 2;
        let xv = self.value(x);
        let mut y = Vec::with_capacity(bsz * p);
        for r in 0..bsz {
            let blk = &xv[r * k * k..(r + 1) * k * k];
            for i in 0..k {
                y.extend_from_slice(&blk[i * k + i + 1..(i + 1) * k]);
            }
        }
        Ok(self.push(vec![bsz, p], y, Op::TriuFlatten(x), &[x]))
    }

    /// Sub-block of a 1-D or 2-D tensor: selected rows (all when `None`) and
    /// the first `cols` columns. Gradients scatter back into the source.
    pub fn gather(&mut self, x: Var, rows: Option<&[usize]>, cols: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let xv = self.value(x);
        let (out_shape, y) = match shape.len() {
            1 => {
                if rows.is_some() || cols > shape[0] {
                    return Err(NasError::shape("gather", &shape, &[cols]));
                }
                (vec![cols], xv[..cols].to_vec())
            }
            2 => {
                let (r, c) = (shape[0], shape[1]);
                if cols > c {
                    return Err(NasError::shape("gather", &shape, &[cols]));
                }
                let idx: Vec<usize> = match rows {
                    Some(ix) => {
                        if ix.iter().any(|&i| i >= r) {
                            return Err(NasError::kernel("gather", "row index out of range"));
                        }
                        ix.to_vec()
                    }
                    None => (0..r).collect(),
                };
                let mut y = Vec::with_capacity(idx.len() * cols);
                for &i in &idx {
                    y.extend_from_slice(&xv[i * c..i * c + cols]);
                }
                (vec![idx.len(), cols], y)
            }
            _ => return Err(NasError::shape("gather", &shape, &[])),
        };
        Ok(self.push(
            out_shape,
            y,
            Op::Gather {
                x,
                rows: rows.map(|r| r.to_vec()),
                cols,
            },
            &[x],
        ))
    }

    /// Row lookup into a `[R, E]` table. `ids.len() == batch * fields`; output
    /// is `[batch, fields, E]`.
    pub fn embedding(&mut self, table: ParamId, ids: &[usize], batch: usize, fields: usize) -> Result<Var> {
        let t = self.store_ref().get(table);
        let ts = t.shape();
        if ts.len() != 2 || ids.len() != batch * fields {
            return Err(NasError::shape("embedding", ts, &[batch, fields]));
        }
        let (rows, e) = (ts[0], ts[1]);
        let mut y = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            if i >= rows {
                return Err(NasError::kernel("embedding", format!("id {i} >= {rows} rows")));
            }
            y.extend_from_slice(&t.data()[i * e..(i + 1) * e]);
        }
        let v = self.push(
            vec![batch, fields, e],
            y,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[],
        );
        self.nodes[v.0].requires_grad = self.grad_enabled;
        Ok(v)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.nodes[x.0].len() {
            return Err(NasError::shape("reshape", self.shape(x), shape));
        }
        let y = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), y, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum::<T>();
        self.push(vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().copied().sum::<T>() / T::of(v.len() as f64);
        self.push(vec![1], vec![s], Op::Mean(x), &[x])
    }

    /// Mean binary cross-entropy of logits `z` (`[B]` or `[B, 1]`) against 0/1 labels.
    pub fn bce_with_logits(&mut self, z: Var, labels: &[T]) -> Result<Var> {
        let zv = self.value(z);
        if zv.len() != labels.len() || zv.is_empty() {
            return Err(NasError::shape("bce_with_logits", self.shape(z), &[labels.len()]));
        }
        let mut s = 0.0f64;
        for (&zi, &yi) in zv.iter().zip(labels) {
            let (zf, yf) = (zi.as_f64(), yi.as_f64());
            s += zf.max(0.0) - zf * yf + (-zf.abs()).exp().ln_1p();
        }
        let loss = T::of(s / zv.len() as f64);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::BceWithLogits {
                z,
                labels: labels.to_vec(),
            },
            &[z],
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].len() != 1 {
            return Err(NasError::kernel(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        let mut rows: BTreeMap<ParamId, BTreeMap<usize, Vec<T>>> = BTreeMap::new();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads, &mut rows);
            grads[i] = Some(g);
        }

        let mut params = BTreeMap::new();
        for (&id, &v) in &self.param_vars {
            if let Some(g) = &grads[v.0] {
                params.insert(id, ParamGrad::Dense(g.clone()));
            }
        }
        for (id, r) in rows {
            match params.get_mut(&id) {
                Some(ParamGrad::Dense(d)) => {
                    let e = self.store_ref().get(id).shape()[1];
                    for (row, gr) in r {
                        for (dst, &src) in d[row * e..(row + 1) * e].iter_mut().zip(&gr) {
                            *dst += src;
                        }
                    }
                }
                _ => {
                    params.insert(id, ParamGrad::Rows(r));
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn backward_node(
        &self,
        i: usize,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        rows: &mut BTreeMap<ParamId, BTreeMap<usize, Vec<T>>>,
    ) {
        let node = &self.nodes[i];
        let out = self.value(Var(i));
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (bsz, din) = (xs[0], xs[1]);
                let dout = node.shape[1];
                let xv = self.value(*x);
                let wv = self.value(*w);
                if let Some(gx) = self.slot(grads, *x) {
                    for r in 0..bsz {
                        let gr = &g[r * dout..(r + 1) * dout];
                        for k in 0..din {
                            let wr = &wv[k * dout..(k + 1) * dout];
                            gx[r * din + k] += dot(gr, wr);
                        }
                    }
                }
                if let Some(gw) = self.slot(grads, *w) {
                    for r in 0..bsz {
                        let gr = &g[r * dout..(r + 1) * dout];
                        for k in 0..din {
                            let xk = xv[r * din + k];
                            if xk == T::zero() {
                                continue;
                            }
                            axpy(&mut gw[k * dout..(k + 1) * dout], xk, gr);
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(grads, *b) {
                        for gr in g.chunks(dout.max(1)) {
                            axpy(gb, T::one(), gr);
                        }
                    }
                }
            }
            Op::MidLinear { x, w, b } => {
                let xs = self.shape(*x);
                let (bsz, nin, e) = (xs[0], xs[1], xs[2]);
                let nout = node.shape[1];
                let xv = self.value(*x);
                let wv = self.value(*w);
                if let Some(gx) = self.slot(grads, *x) {
                    for r in 0..bsz {
                        for n in 0..nin {
                            let dst = &mut gx[(r * nin + n) * e..(r * nin + n + 1) * e];
                            for m in 0..nout {
                                let gr = &g[(r * nout + m) * e..(r * nout + m + 1) * e];
                                axpy(dst, wv[n * nout + m], gr);
                            }
                        }
                    }
                }
                if let Some(gw) = self.slot(grads, *w) {
                    for r in 0..bsz {
                        for n in 0..nin {
                            let xr = &xv[(r * nin + n) * e..(r * nin + n + 1) * e];
                            for m in 0..nout {
                                let gr = &g[(r * nout + m) * e..(r * nout + m + 1) * e];
                                gw[n * nout + m] += dot(xr, gr);
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(grads, *b) {
                        for r in 0..bsz {
                            for m in 0..nout {
                                gb[m] += g[(r * nout + m) * e..(r * nout + m + 1) * e]
                                    .iter()
                                    .copied()
                                    .sum::<T>();
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                if let Some(gx) = self.slot(grads, *x) {
                    for ((d, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        if xi > T::zero() {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((d, &gi), &yi) in gx.iter_mut().zip(g).zip(out) {
                        *d += gi * yi * (T::one() - yi);
                    }
                }
            }
            Op::Softmax(x) => {
                let d = *node.shape.last().unwrap();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((gr, yr), dst) in g.chunks(d).zip(out.chunks(d)).zip(gx.chunks_mut(d)) {
                        let s = dot(gr, yr);
                        for ((o, &gi), &yi) in dst.iter_mut().zip(gr).zip(yr) {
                            *o += yi * (gi - s);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                width,
                xhat,
                rstd,
            } => {
                let d = *node.shape.last().unwrap();
                let w = *width;
                let rows_n = node.len() / d;
                let gv = self.value(*gamma);
                let wt = T::of(w as f64);
                if let Some(gx) = self.slot(grads, *x) {
                    let mut dxhat = vec![T::zero(); w];
                    for r in 0..rows_n {
                        let gr = &g[r * d..r * d + w];
                        let hr = &xhat[r * w..(r + 1) * w];
                        for j in 0..w {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let m1 = dxhat.iter().copied().sum::<T>() / wt;
                        let m2 = dot(&dxhat, hr) / wt;
                        for j in 0..w {
                            gx[r * d + j] += rstd[r] * (dxhat[j] - m1 - hr[j] * m2);
                        }
                    }
                }
                if let Some(gg) = self.slot(grads, *gamma) {
                    for r in 0..rows_n {
                        for j in 0..w {
                            gg[j] += g[r * d + j] * xhat[r * w + j];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    for r in 0..rows_n {
                        for j in 0..w {
                            gb[j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::ConcatLast(xs) => {
                let rows_n = node.shape[0];
                let total = node.shape[1];
                let mut off = 0;
                for &v in xs {
                    let w = self.shape(v)[1];
                    if let Some(gx) = self.slot(grads, v) {
                        for r in 0..rows_n {
                            axpy(
                                &mut gx[r * w..(r + 1) * w],
                                T::one(),
                                &g[r * total + off..r * total + off + w],
                            );
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatMid(xs) => {
                let (rows_n, total, e) = (node.shape[0], node.shape[1], node.shape[2]);
                let mut off = 0;
                for &v in xs {
                    let n = self.shape(v)[1];
                    if let Some(gx) = self.slot(grads, v) {
                        for r in 0..rows_n {
                            let src = &g[(r * total + off) * e..(r * total + off + n) * e];
                            axpy(&mut gx[r * n * e..(r + 1) * n * e], T::one(), src);
                        }
                    }
                    off += n;
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gx) = self.slot(grads, v) {
                        axpy(gx, T::one(), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((d, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.slot(grads, *x) {
                    axpy(gx, *c, g);
                }
            }
            Op::BatchedMatmul { a, b, transpose_b } => {
                let as_ = self.shape(*a);
                let (bsz, m, k) = (as_[0], as_[1], as_[2]);
                let n = node.shape[2];
                let av = self.value(*a);
                let bv = self.value(*b);
                // b element (kk, j) lives at kk*n+j, or j*k+kk when transposed.
                let bidx = |kk: usize, j: usize| if *transpose_b { j * k + kk } else { kk * n + j };
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..bsz {
                        let bb = &bv[r * k * n..(r + 1) * k * n];
                        for i in 0..m {
                            let gr = &g[(r * m + i) * n..(r * m + i + 1) * n];
                            for kk in 0..k {
                                let mut s = T::zero();
                                for (j, &gij) in gr.iter().enumerate() {
                                    s += gij * bb[bidx(kk, j)];
                                }
                                ga[(r * m + i) * k + kk] += s;
                            }
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for r in 0..bsz {
                        let ab = &av[r * m * k..(r + 1) * m * k];
                        let gbb = &mut gb[r * k * n..(r + 1) * k * n];
                        for i in 0..m {
                            let gr = &g[(r * m + i) * n..(r * m + i + 1) * n];
                            for kk in 0..k {
                                let aik = ab[i * k + kk];
                                for (j, &gij) in gr.iter().enumerate() {
                                    gbb[bidx(kk, j)] += aik * gij;
                                }
                            }
                        }
                    }
                }
            }
            Op::MaskLast { x, d } => {
                let w = *node.shape.last().unwrap();
                if let Some(gx) = self.slot(grads, *x) {
                    for (dst, src) in gx.chunks_mut(w).zip(g.chunks(w)) {
                        axpy(&mut dst[..*d], T::one(), &src[..*d]);
                    }
                }
            }
            Op::MaskMid { x, d } => {
                let (n, e) = (node.shape[1], node.shape[2]);
                if let Some(gx) = self.slot(grads, *x) {
                    for (dst, src) in gx.chunks_mut(n * e).zip(g.chunks(n * e)) {
                        axpy(&mut dst[..d * e], T::one(), &src[..d * e]);
                    }
                }
            }
            Op::MaskRows { x, keep } => {
                let (n, e) = (node.shape[1], node.shape[2]);
                if let Some(gx) = self.slot(grads, *x) {
                    for (dst, src) in gx.chunks_mut(n * e).zip(g.chunks(n * e)) {
                        for (j, &k) in keep.iter().enumerate() {
                            if k {
                                axpy(&mut dst[j * e..(j + 1) * e], T::one(), &src[j * e..(j + 1) * e]);
                            }
                        }
                    }
                }
            }
            Op::TriuFlatten(x) => {
                let k = self.shape(*x)[1];
                let p = node.shape[1];
                if let Some(gx) = self.slot(grads, *x) {
                    for (r, gr) in g.chunks(p.max(1)).enumerate().take(node.shape[0]) {
                        let mut idx = 0;
                        for a in 0..k {
                            for b in a + 1..k {
                                gx[r * k * k + a * k + b] += gr[idx];
                                idx += 1;
                            }
                        }
                    }
                }
            }
            Op::PadLast(x) => {
                let w = self.shape(*x)[1];
                let width = node.shape[1];
                if let Some(gx) = self.slot(grads, *x) {
                    for (dst, src) in gx.chunks_mut(w).zip(g.chunks(width)) {
                        axpy(dst, T::one(), &src[..w]);
                    }
                }
            }
            Op::PadMid(x) => {
                let (n, e) = (self.shape(*x)[1], node.shape[2]);
                let rows_out = node.shape[1];
                if let Some(gx) = self.slot(grads, *x) {
                    for (dst, src) in gx.chunks_mut(n * e).zip(g.chunks(rows_out * e)) {
                        axpy(dst, T::one(), &src[..n * e]);
                    }
                }
            }
            Op::Gather { x, rows: sel, cols } => {
                let xs = self.shape(*x).to_vec();
                if let Some(gx) = self.slot(grads, *x) {
                    if xs.len() == 1 {
                        axpy(&mut gx[..*cols], T::one(), g);
                    } else {
                        let c = xs[1];
                        let all: Vec<usize>;
                        let idx: &[usize] = match sel {
                            Some(s) => s,
                            None => {
                                all = (0..xs[0]).collect();
                                &all
                            }
                        };
                        for (o, &row) in idx.iter().enumerate() {
                            axpy(
                                &mut gx[row * c..row * c + cols],
                                T::one(),
                                &g[o * cols..(o + 1) * cols],
                            );
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let e = node.shape[2];
                let entry = rows.entry(*table).or_default();
                for (o, &id) in ids.iter().enumerate() {
                    let dst = entry.entry(id).or_insert_with(|| vec![T::zero(); e]);
                    axpy(dst, T::one(), &g[o * e..(o + 1) * e]);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    axpy(gx, T::one(), g);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for d in gx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].len();
                if let Some(gx) = self.slot(grads, *x) {
                    let s = g[0] / T::of(n as f64);
                    for d in gx.iter_mut() {
                        *d += s;
                    }
                }
            }
            Op::BceWithLogits { z, labels } => {
                let zv = self.value(*z);
                let n = T::of(zv.len() as f64);
                if let Some(gz) = self.slot(grads, *z) {
                    for ((d, &zi), &yi) in gz.iter_mut().zip(zv).zip(labels) {
                        *d += g[0] * (sigmoid(zi) - yi) / n;
                    }
                }
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.len()]))
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(dst: &mut [T], a: T, x: &[T]) {
    for (d, &v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}
