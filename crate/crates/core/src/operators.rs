//! The six building operators, the dimension mask and Project-Concatenate.
//!
//! Operators are pure functions of graph nodes; weights are passed in as
//! already-sliced [`Var`]s so the same code serves the supernet and
//! standalone subnets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{NasError, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OperatorKind {
    FC,
    Gating,
    Sum,
    DotProduct,
    EmbedFC,
    Attention,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 6] = [
        OperatorKind::FC,
        OperatorKind::Gating,
        OperatorKind::Sum,
        OperatorKind::DotProduct,
        OperatorKind::EmbedFC,
        OperatorKind::Attention,
    ];

    /// Dense operators emit `[B, dim]`; sparse operators emit `[B, N, dim_s]`.
    pub fn is_dense(self) -> bool {
        matches!(
            self,
            OperatorKind::FC | OperatorKind::Gating | OperatorKind::Sum | OperatorKind::DotProduct
        )
    }

    pub fn is_sparse(self) -> bool {
        !self.is_dense()
    }

    /// Short tag used in parameter names.
    pub fn tag(self) -> &'static str {
        match self {
            OperatorKind::FC => "fc",
            OperatorKind::Gating => "gating",
            OperatorKind::Sum => "sum",
            OperatorKind::DotProduct => "dp",
            OperatorKind::EmbedFC => "efc",
            OperatorKind::Attention => "attn",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for OperatorKind {
    type Err = NasError;

    fn from_str(s: &str) -> Result<Self> {
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s) || k.tag() == s)
            .ok_or_else(|| NasError::InvalidArgument(format!("unknown operator {s}")))
    }
}

/// Dot-Product interaction settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DotProductConfig {
    pub balanced: bool,
    /// Rows kept by the balancing projection; `⌈√(2·dim_d)⌉` when balanced.
    pub projection_target: usize,
}

impl DotProductConfig {
    pub fn new(balanced: bool, dim_d: usize) -> Self {
        DotProductConfig {
            balanced,
            projection_target: balanced_rows(dim_d),
        }
    }
}

/// `⌈√(2·dim_d)⌉`, exact in integers.
pub fn balanced_rows(dim_d: usize) -> usize {
    let target = 2 * dim_d;
    let mut t = (target as f64).sqrt() as usize;
    while t * t < target {
        t += 1;
    }
    while t > 0 && (t - 1) * (t - 1) >= target {
        t -= 1;
    }
    t
}

/// Number of strictly-upper-triangular pairs among `k` rows.
pub fn num_pairs(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// Flattened index of pair `(i, j)`, `i < j < k`, in row-major strict-upper order.
pub fn pair_index(i: usize, j: usize, k: usize) -> usize {
    debug_assert!(i < j && j < k);
    i * (2 * k - i - 1) / 2 + (j - i - 1)
}

/// Weight/bias counts of one Dot-Product operator (excluding layer norm).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DotProductCounts {
    pub dense_projection: (usize, usize),
    pub balancing: (usize, usize),
    pub output: (usize, usize),
}

impl DotProductCounts {
    pub fn weights(&self) -> usize {
        self.dense_projection.0 + self.balancing.0 + self.output.0
    }

    pub fn biases(&self) -> usize {
        self.dense_projection.1 + self.balancing.1 + self.output.1
    }
}

/// Parameter counts of a Dot-Product over `dense_width` dense features (0 for
/// none) and `n_sparse` embeddings of width `dim_s`, producing `out_dim` outputs.
pub fn dot_product_counts(
    cfg: &DotProductConfig,
    dense_width: usize,
    n_sparse: usize,
    dim_s: usize,
    out_dim: usize,
) -> DotProductCounts {
    let dense_projection = if dense_width > 0 {
        (dense_width * dim_s, dim_s)
    } else {
        (0, 0)
    };
    let k = n_sparse + usize::from(dense_width > 0);
    let (balancing, rows) = if cfg.balanced {
        (
            (k * cfg.projection_target, cfg.projection_target),
            cfg.projection_target,
        )
    } else {
        ((0, 0), k)
    };
    DotProductCounts {
        dense_projection,
        balancing,
        output: (num_pairs(rows) * out_dim, out_dim),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskAxis {
    /// Dense outputs: mask the last axis.
    Last,
    /// Sparse outputs: mask the embedding-count (middle) axis.
    Middle,
}

/// `Mask(V, d)`: keep indices `< d` along `axis`, zero the rest.
pub fn apply_dim_mask<T: Scalar>(g: &mut Graph<'_, T>, v: Var, d: usize, axis: MaskAxis) -> Result<Var> {
    match axis {
        MaskAxis::Last => g.mask_lastdim(v, d),
        MaskAxis::Middle => g.mask_middim(v, d),
    }
}

/// Weight and optional bias of one linear map.
#[derive(Clone, Copy, Debug)]
pub struct Affine {
    pub w: Var,
    pub b: Option<Var>,
}

impl Affine {
    pub fn new(w: Var, b: Option<Var>) -> Self {
        Affine { w, b }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        g.linear(x, self.w, self.b)
    }

    pub fn apply_mid<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        g.mid_linear(x, self.w, self.b)
    }
}

/// `relu(X_d · W + b)`.
pub fn op_fc<T: Scalar>(g: &mut Graph<'_, T>, x: Var, fc: Affine) -> Result<Var> {
    let y = fc.apply(g, x)?;
    Ok(g.relu(y))
}

/// `sigmoid(FC(X_d1)) * X_d2`, with `X_d2` projected first when `proj` is given.
pub fn op_gating<T: Scalar>(
    g: &mut Graph<'_, T>,
    x1: Var,
    x2: Var,
    gate: Affine,
    proj: Option<Affine>,
) -> Result<Var> {
    let z = gate.apply(g, x1)?;
    let s = g.sigmoid(z);
    let v = match proj {
        Some(p) => p.apply(g, x2)?,
        None => x2,
    };
    g.elementwise_mul(s, v)
}

/// `X_d1 + X_d2`, with `X_d2` projected first when `proj` is given.
pub fn op_sum<T: Scalar>(g: &mut Graph<'_, T>, x1: Var, x2: Var, proj: Option<Affine>) -> Result<Var> {
    let v = match proj {
        Some(p) => p.apply(g, x2)?,
        None => x2,
    };
    g.add(x1, v)
}

/// Weights of a Dot-Product operator.
#[derive(Clone, Copy, Debug)]
pub struct DotProductWeights {
    /// Dense → `dim_s` projection (required when a dense input is present and
    /// its width differs from `dim_s`).
    pub dense_projection: Option<Affine>,
    /// Embedding-count projection `k → projection_target` (balanced mode).
    pub balancing: Option<Affine>,
    /// Pairwise interactions → output width.
    pub output: Affine,
}

/// Pairwise inner products of the stacked dense row and sparse embeddings,
/// followed by the output projection. Returns `[B, out]` without activation.
pub fn op_dot_product<T: Scalar>(
    g: &mut Graph<'_, T>,
    x_d: Option<Var>,
    x_s: Option<Var>,
    w: &DotProductWeights,
) -> Result<Var> {
    let mut rows = Vec::with_capacity(2);
    let mut dim_s = None;
    if let Some(xs) = x_s {
        let s = g.shape(xs);
        if s.len() != 3 {
            return Err(NasError::shape("dot_product", s, &[]));
        }
        dim_s = Some(s[2]);
    }
    if let Some(xd) = x_d {
        let xd = match w.dense_projection {
            Some(p) => p.apply(g, xd)?,
            None => xd,
        };
        let s = g.shape(xd).to_vec();
        if let Some(e) = dim_s {
            if s[1] != e {
                return Err(NasError::shape("dot_product", &s, &[e]));
            }
        }
        let row = g.reshape(xd, &[s[0], 1, s[1]])?;
        rows.push(row);
    }
    if let Some(xs) = x_s {
        rows.push(xs);
    }
    if rows.is_empty() {
        return Err(NasError::kernel("dot_product", "needs a dense or a sparse input"));
    }
    let x = if rows.len() == 1 { rows[0] } else { g.concat_middim(&rows)? };
    let x = match w.balancing {
        Some(b) => b.apply_mid(g, x)?,
        None => x,
    };
    let gram = g.batched_matmul(x, x, true)?;
    let tri = g.triu_flatten(gram)?;
    w.output.apply(g, tri)
}

/// FC along the embedding-count axis: `[B, N_in, E]` → `[B, N_out, E]`.
pub fn op_embed_fc<T: Scalar>(g: &mut Graph<'_, T>, x_s: Var, w: Affine) -> Result<Var> {
    w.apply_mid(g, x_s)
}

/// Self-attention with identical queries, keys and values:
/// `softmax(X·Xᵀ/√dim_s)·X`. Rows with `valid[i] == false` are excluded as
/// keys and zeroed as queries.
pub fn op_attention<T: Scalar>(g: &mut Graph<'_, T>, x_s: Var, valid: Option<&[bool]>) -> Result<Var> {
    let s = g.shape(x_s).to_vec();
    if s.len() != 3 {
        return Err(NasError::shape("attention", &s, &[]));
    }
    let logits = g.batched_matmul(x_s, x_s, true)?;
    let logits = g.scale(logits, T::of(1.0 / (s[2] as f64).sqrt()));
    let attn = g.softmax_lastdim(logits, valid)?;
    let y = g.batched_matmul(attn, x_s, false)?;
    match valid {
        Some(v) => g.mask_rows(y, v),
        None => Ok(y),
    }
}

/// Projects `Y_d` to `dim_s` and appends it as one extra embedding row.
pub fn project_concatenate<T: Scalar>(g: &mut Graph<'_, T>, y_d: Var, y_s: Var, proj: Affine) -> Result<Var> {
    let p = proj.apply(g, y_d)?;
    let ps = g.shape(p).to_vec();
    let row = g.reshape(p, &[ps[0], 1, ps[1]])?;
    g.concat_middim(&[y_s, row])
}
