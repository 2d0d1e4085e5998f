use super::{Genotype, SupernetConfig};

/// Active extents of one block's outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockDims {
    pub dense_width: usize,
    pub sparse_rows: usize,
    pub project_concat: bool,
}

/// Extents of every source (raw features and block outputs) for one genotype,
/// both at supernet size ("max") and as actually sampled ("active").
#[derive(Clone, Debug)]
pub struct NetworkLayout {
    pub dense_max: Vec<usize>,
    pub dense_active: Vec<usize>,
    pub sparse_max: Vec<usize>,
    /// Active row indices of each sparse source, relative to the source.
    pub sparse_active: Vec<Vec<usize>>,
    pub blocks: Vec<BlockDims>,
}

/// Input arrangement of one block. Positions are in the supernet's
/// concatenation layout (raw source first, then blocks in ascending order).
#[derive(Clone, Debug)]
pub struct InputLayout {
    pub dense_sources: Vec<usize>,
    pub sparse_sources: Vec<usize>,
    pub dense_offsets: Vec<usize>,
    pub sparse_offsets: Vec<usize>,
    pub dense_max_width: usize,
    pub sparse_max_rows: usize,
    /// Max-layout positions of the active dense inputs, in concatenation order.
    pub dense_idx: Vec<usize>,
    /// Max-layout positions of the active sparse rows, in concatenation order.
    pub sparse_idx: Vec<usize>,
    /// Validity of every max-layout sparse row.
    pub sparse_valid: Vec<bool>,
}

impl NetworkLayout {
    pub fn new(cfg: &SupernetConfig, g: &Genotype) -> Self {
        let n = g.blocks.len();
        let d = cfg.max_dense_dim();
        let s = cfg.max_sparse_rows();
        let slot = usize::from(cfg.allow_project_concat);
        let mut dense_max = vec![cfg.num_dense_features];
        let mut dense_active = vec![cfg.num_dense_features];
        let mut sparse_max = vec![cfg.num_sparse_features()];
        let mut sparse_active = vec![(0..cfg.num_sparse_features()).collect::<Vec<_>>()];
        let mut blocks = Vec::with_capacity(n);
        for b in &g.blocks {
            let dims = BlockDims {
                dense_width: b.dense_width(),
                sparse_rows: b.sparse_rows(),
                project_concat: b.project_concat,
            };
            dense_max.push(d);
            dense_active.push(dims.dense_width);
            sparse_max.push(s + slot);
            let mut rows: Vec<usize> = (0..dims.sparse_rows).collect();
            if b.project_concat {
                rows.push(s);
            }
            sparse_active.push(rows);
            blocks.push(dims);
        }
        NetworkLayout {
            dense_max,
            dense_active,
            sparse_max,
            sparse_active,
            blocks,
        }
    }

    /// Layout of block `k`'s (1-based) inputs.
    pub fn input(&self, g: &Genotype, k: usize) -> InputLayout {
        let b = g.block(k);
        let mut dense_offsets = Vec::with_capacity(k);
        let mut sparse_offsets = Vec::with_capacity(k);
        let (mut dw, mut sr) = (0, 0);
        for src in 0..k {
            dense_offsets.push(dw);
            sparse_offsets.push(sr);
            dw += self.dense_max[src];
            sr += self.sparse_max[src];
        }
        let mut dense_idx = Vec::new();
        for &src in &b.dense_conns {
            dense_idx.extend((0..self.dense_active[src]).map(|j| dense_offsets[src] + j));
        }
        let mut sparse_idx = Vec::new();
        let mut sparse_valid = vec![false; sr];
        for &src in &b.sparse_conns {
            for &r in &self.sparse_active[src] {
                let p = sparse_offsets[src] + r;
                sparse_idx.push(p);
                sparse_valid[p] = true;
            }
        }
        InputLayout {
            dense_sources: b.dense_conns.clone(),
            sparse_sources: b.sparse_conns.clone(),
            dense_offsets,
            sparse_offsets,
            dense_max_width: dw,
            sparse_max_rows: sr,
            dense_idx,
            sparse_idx,
            sparse_valid,
        }
    }

    /// Active dense width reaching the logit head.
    pub fn head_width(&self) -> usize {
        *self.dense_active.last().unwrap_or(&0)
    }
}

/// Max-layout dense input width of block `k` (1-based).
pub fn max_dense_input(cfg: &SupernetConfig, k: usize) -> usize {
    cfg.num_dense_features + (k - 1) * cfg.max_dense_dim()
}

/// Max-layout sparse input rows of block `k` (1-based).
pub fn max_sparse_input(cfg: &SupernetConfig, k: usize) -> usize {
    cfg.num_sparse_features() + (k - 1) * (cfg.max_sparse_rows() + usize::from(cfg.allow_project_concat))
}
