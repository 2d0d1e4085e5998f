//! Supernet configuration, genotypes and their validation.
//!
//! Source numbering inside a genotype: `0` is the raw feature input, `k` is
//! the output of block `k` (blocks are numbered from 1). Block `k` may read
//! from any source `< k`.

mod cardinality;
mod cost;
mod layout;

pub use cardinality::{cardinality, enumerate_genotypes, CountingConvention};
pub use cost::{flop_count, param_count, AuditEntry, FlopReport, ParamReport};
pub use layout::{max_dense_input, max_sparse_input, BlockDims, InputLayout, NetworkLayout};

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{NasError, Result};
use crate::operators::{DotProductConfig, OperatorKind};

pub const GENOTYPE_VERSION: u32 = 1;

/// The search space `S = (C, D, O)` plus the raw-feature description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupernetConfig {
    pub num_blocks: usize,
    pub dense_ops: Vec<OperatorKind>,
    pub sparse_ops: Vec<OperatorKind>,
    pub dense_dims: Vec<usize>,
    pub sparse_dims: Vec<usize>,
    pub num_dense_features: usize,
    pub vocab_sizes: Vec<usize>,
    pub embedding_dim: usize,
    #[serde(default = "default_true")]
    pub balanced_dot_product: bool,
    #[serde(default = "default_true")]
    pub allow_project_concat: bool,
    #[serde(default = "default_true")]
    pub layer_norm: bool,
}

fn default_true() -> bool {
    true
}

impl SupernetConfig {
    /// `nasrec_small` (FC, Dot-Product / EmbedFC) or `nasrec_full` (all six),
    /// both with 7 blocks and Criteo-shaped raw features.
    pub fn preset(name: &str) -> Result<Self> {
        let (dense_ops, sparse_ops) = match name {
            "nasrec_small" | "small" => (
                vec![OperatorKind::FC, OperatorKind::DotProduct],
                vec![OperatorKind::EmbedFC],
            ),
            "nasrec_full" | "full" => (
                vec![
                    OperatorKind::FC,
                    OperatorKind::Gating,
                    OperatorKind::Sum,
                    OperatorKind::DotProduct,
                ],
                vec![OperatorKind::EmbedFC, OperatorKind::Attention],
            ),
            other => return Err(NasError::InvalidConfig(format!("unknown preset {other}"))),
        };
        Ok(SupernetConfig {
            num_blocks: 7,
            dense_ops,
            sparse_ops,
            dense_dims: vec![32, 64, 128, 256, 512],
            sparse_dims: vec![16, 32, 64],
            num_dense_features: 13,
            vocab_sizes: vec![100_000; 26],
            embedding_dim: 16,
            balanced_dot_product: true,
            allow_project_concat: true,
            layer_norm: true,
        })
    }

    /// Widest dense output, `dim_d`.
    pub fn max_dense_dim(&self) -> usize {
        self.dense_dims.iter().copied().max().unwrap_or(0)
    }

    /// Most sparse output rows, `N_s`.
    pub fn max_sparse_rows(&self) -> usize {
        self.sparse_dims.iter().copied().max().unwrap_or(0)
    }

    pub fn num_sparse_features(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn dot_product(&self) -> DotProductConfig {
        DotProductConfig::new(self.balanced_dot_product, self.max_dense_dim())
    }

    /// Rows of each embedding table under an optional cap.
    pub fn embedding_rows(&self, cap: Option<usize>) -> Vec<usize> {
        self.vocab_sizes
            .iter()
            .map(|&v| cap.map_or(v, |c| v.min(c)).max(1))
            .collect()
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(NasError::InvalidConfig(m));
        if self.num_blocks == 0 {
            return bad("num_blocks must be at least 1".into());
        }
        if self.dense_ops.is_empty() || self.sparse_ops.is_empty() {
            return bad("both operator menus must be nonempty".into());
        }
        if let Some(k) = self.dense_ops.iter().find(|k| !k.is_dense()) {
            return bad(format!("{k} is not a dense operator"));
        }
        if let Some(k) = self.sparse_ops.iter().find(|k| !k.is_sparse()) {
            return bad(format!("{k} is not a sparse operator"));
        }
        let uniq = |v: &[OperatorKind]| v.iter().collect::<BTreeSet<_>>().len() == v.len();
        if !uniq(&self.dense_ops) || !uniq(&self.sparse_ops) {
            return bad("operator menus must not repeat".into());
        }
        for (name, dims) in [("dense_dims", &self.dense_dims), ("sparse_dims", &self.sparse_dims)] {
            if dims.is_empty() || dims.contains(&0) {
                return bad(format!("{name} must be nonempty and positive"));
            }
            if dims.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("{name} must be strictly increasing"));
            }
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if self.num_dense_features == 0 || self.vocab_sizes.is_empty() {
            return bad("need at least one dense and one categorical feature".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpChoice {
    pub kind: OperatorKind,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockGenotype {
    pub dense_ops: Vec<OpChoice>,
    pub sparse_ops: Vec<OpChoice>,
    pub dense_conns: Vec<usize>,
    pub sparse_conns: Vec<usize>,
    pub project_concat: bool,
}

impl BlockGenotype {
    /// Active dense output width (widest sampled dense operator).
    pub fn dense_width(&self) -> usize {
        self.dense_ops.iter().map(|o| o.dim).max().unwrap_or(0)
    }

    /// Active sparse output rows before Project-Concatenate.
    pub fn sparse_rows(&self) -> usize {
        self.sparse_ops.iter().map(|o| o.dim).max().unwrap_or(0)
    }

    pub fn has_op(&self, kind: OperatorKind) -> bool {
        self.dense_ops.iter().chain(&self.sparse_ops).any(|o| o.kind == kind)
    }

    fn canonicalize(&mut self) {
        self.dense_ops.sort();
        self.sparse_ops.sort();
        self.dense_conns.sort_unstable();
        self.sparse_conns.sort_unstable();
    }
}

/// One subnet of the supernet.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Genotype {
    pub version: u32,
    pub num_blocks: usize,
    pub blocks: Vec<BlockGenotype>,
}

impl Genotype {
    pub fn new(mut blocks: Vec<BlockGenotype>) -> Self {
        for b in &mut blocks {
            b.canonicalize();
        }
        Genotype {
            version: GENOTYPE_VERSION,
            num_blocks: blocks.len(),
            blocks,
        }
    }

    /// The whole supernet: every operator at its widest, every connection.
    pub fn full(cfg: &SupernetConfig) -> Self {
        let dmax = cfg.max_dense_dim();
        let smax = cfg.max_sparse_rows();
        let blocks = (1..=cfg.num_blocks)
            .map(|k| BlockGenotype {
                dense_ops: cfg.dense_ops.iter().map(|&kind| OpChoice { kind, dim: dmax }).collect(),
                sparse_ops: cfg.sparse_ops.iter().map(|&kind| OpChoice { kind, dim: smax }).collect(),
                dense_conns: (0..k).collect(),
                sparse_conns: (0..k).collect(),
                project_concat: cfg.allow_project_concat,
            })
            .collect();
        Genotype::new(blocks)
    }

    /// 1-based block access.
    pub fn block(&self, k: usize) -> &BlockGenotype {
        &self.blocks[k - 1]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut BlockGenotype {
        &mut self.blocks[k - 1]
    }

    pub fn canonicalize(&mut self) {
        for b in &mut self.blocks {
            b.canonicalize();
        }
        self.num_blocks = self.blocks.len();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("genotype serialises")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("genotype serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn count_ops(&self, kind: OperatorKind) -> usize {
        self.blocks
            .iter()
            .flat_map(|b| b.dense_ops.iter().chain(&b.sparse_ops))
            .filter(|o| o.kind == kind)
            .count()
    }

    /// Violations against `cfg`, empty when valid.
    pub fn validate(&self, cfg: &SupernetConfig) -> Vec<Violation> {
        validate(self, cfg)
    }

    pub fn ensure_valid(&self, cfg: &SupernetConfig) -> Result<()> {
        let v = validate(self, cfg);
        if v.is_empty() {
            Ok(())
        } else {
            let msg = v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ");
            Err(NasError::InvalidGenotype(msg))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    UnsupportedVersion,
    BlockCount,
    NonemptyBranch,
    OperatorNotAllowed,
    DuplicateOperator,
    DimNotInMenu,
    NonemptyConnections,
    ForwardConnection,
    DuplicateConnection,
    ProjectConcatDisallowed,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        let name = s.as_ref().and_then(|v| v.as_str()).unwrap_or("unknown");
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based block index, `None` for genotype-level rules.
    pub block: Option<usize>,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.block {
            Some(b) => write!(f, "block {b}: {} ({})", self.rule, self.detail),
            None => write!(f, "{} ({})", self.rule, self.detail),
        }
    }
}

pub fn validate(g: &Genotype, cfg: &SupernetConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |block: Option<usize>, rule: Rule, detail: String| {
        out.push(Violation { block, rule, detail });
    };
    if g.version != GENOTYPE_VERSION {
        push(None, Rule::UnsupportedVersion, format!("version {}", g.version));
    }
    if g.num_blocks != g.blocks.len() || g.blocks.len() != cfg.num_blocks {
        push(
            None,
            Rule::BlockCount,
            format!(
                "num_blocks {} with {} blocks, config expects {}",
                g.num_blocks,
                g.blocks.len(),
                cfg.num_blocks
            ),
        );
    }
    for (i, b) in g.blocks.iter().enumerate() {
        let k = i + 1;
        let branches = [
            ("dense", &b.dense_ops, &cfg.dense_ops, &cfg.dense_dims),
            ("sparse", &b.sparse_ops, &cfg.sparse_ops, &cfg.sparse_dims),
        ];
        for (name, ops, menu, dims) in branches {
            if ops.is_empty() {
                push(Some(k), Rule::NonemptyBranch, format!("empty {name} branch"));
            }
            let mut seen = BTreeSet::new();
            for o in ops {
                if !menu.contains(&o.kind) {
                    push(Some(k), Rule::OperatorNotAllowed, format!("{} in {name} branch", o.kind));
                }
                if !seen.insert(o.kind) {
                    push(Some(k), Rule::DuplicateOperator, format!("{} repeated", o.kind));
                }
                if !dims.contains(&o.dim) {
                    push(Some(k), Rule::DimNotInMenu, format!("{} dim {}", o.kind, o.dim));
                }
            }
        }
        for (name, conns) in [("dense", &b.dense_conns), ("sparse", &b.sparse_conns)] {
            if conns.is_empty() {
                push(Some(k), Rule::NonemptyConnections, format!("no {name} inputs"));
            }
            let mut seen = BTreeSet::new();
            for &c in conns.iter() {
                if c >= k {
                    push(Some(k), Rule::ForwardConnection, format!("{name} input from source {c}"));
                }
                if !seen.insert(c) {
                    push(Some(k), Rule::DuplicateConnection, format!("{name} source {c} repeated"));
                }
            }
        }
        if b.project_concat && !cfg.allow_project_concat {
            push(Some(k), Rule::ProjectConcatDisallowed, "flag set".into());
        }
    }
    out
}
