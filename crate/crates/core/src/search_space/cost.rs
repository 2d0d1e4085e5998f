//! Analytic parameter and FLOP accounting for a standalone subnet.
//!
//! Conventions: one multiply-accumulate is 2 FLOPs, bias adds and
//! elementwise activations are free, a softmax costs 5 FLOPs per logit and a
//! layer norm 8 FLOPs per normalised element.

use serde::Serialize;

use super::{Genotype, NetworkLayout, SupernetConfig};
use crate::autodiff::{LAYER_NORM_FLOPS_PER_ELEM, SOFTMAX_FLOPS_PER_ELEM};
use crate::error::Result;
use crate::operators::{num_pairs, OperatorKind};

/// One layer of the audit trail.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub layer: String,
    pub weights: u64,
    pub biases: u64,
    pub norm: u64,
    pub embedding: u64,
    /// FLOPs for one example.
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub weights_without_bias: u64,
    pub biases: u64,
    pub weights_with_bias: u64,
    /// Layer-norm scale and shift.
    pub norm_params: u64,
    pub embedding_weights: u64,
    pub total: u64,
    pub audit: Vec<AuditEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub batch: u64,
    pub total: u64,
    pub audit: Vec<AuditEntry>,
}

fn entry(layer: String) -> AuditEntry {
    AuditEntry {
        layer,
        ..Default::default()
    }
}

fn linear(layer: String, fan_in: usize, fan_out: usize) -> AuditEntry {
    let (i, o) = (fan_in as u64, fan_out as u64);
    AuditEntry {
        weights: i * o,
        biases: o,
        flops: 2 * i * o,
        ..entry(layer)
    }
}

fn audit(g: &Genotype, cfg: &SupernetConfig, cap: Option<usize>) -> Result<Vec<AuditEntry>> {
    g.ensure_valid(cfg)?;
    let lay = NetworkLayout::new(cfg, g);
    let e = cfg.embedding_dim;
    let eu = e as u64;
    let dp = cfg.dot_product();
    let mut out = Vec::new();
    let rows: u64 = cfg.embedding_rows(cap).iter().map(|&r| r as u64).sum();
    out.push(AuditEntry {
        embedding: rows * eu,
        ..entry("embeddings".into())
    });
    for k in 1..=g.num_blocks {
        let b = g.block(k);
        let w_in: usize = b.dense_conns.iter().map(|&s| lay.dense_active[s]).sum();
        let r_in: usize = b.sparse_conns.iter().map(|&s| lay.sparse_active[s].len()).sum();
        for op in &b.dense_ops {
            let p = format!("b{k}.{}", op.kind.tag());
            let d = op.dim;
            match op.kind {
                OperatorKind::FC => out.push(linear(format!("{p}.fc"), w_in, d)),
                OperatorKind::Gating => {
                    out.push(linear(format!("{p}.gate"), w_in, d));
                    out.push(linear(format!("{p}.proj"), w_in, d));
                }
                OperatorKind::Sum => {
                    out.push(linear(format!("{p}.out"), w_in, d));
                    out.push(linear(format!("{p}.proj"), w_in, d));
                }
                OperatorKind::DotProduct => {
                    out.push(linear(format!("{p}.dproj"), w_in, e));
                    let k_rows = 1 + r_in;
                    let rows = if dp.balanced {
                        let t = dp.projection_target;
                        let mut bal = linear(format!("{p}.bal"), k_rows, t);
                        bal.flops = 2 * (k_rows * t) as u64 * eu;
                        out.push(bal);
                        t
                    } else {
                        k_rows
                    };
                    out.push(AuditEntry {
                        flops: 2 * (rows * rows) as u64 * eu,
                        ..entry(format!("{p}.gram"))
                    });
                    out.push(linear(format!("{p}.out"), num_pairs(rows), d));
                }
                _ => unreachable!("validated dense operator"),
            }
            if cfg.layer_norm {
                out.push(AuditEntry {
                    norm: 2 * d as u64,
                    flops: LAYER_NORM_FLOPS_PER_ELEM * d as u64,
                    ..entry(format!("{p}.ln"))
                });
            }
        }
        for op in &b.sparse_ops {
            let p = format!("b{k}.{}", op.kind.tag());
            let d = op.dim;
            if op.kind == OperatorKind::Attention {
                let n = r_in as u64;
                out.push(AuditEntry {
                    flops: 2 * (2 * n * n * eu) + SOFTMAX_FLOPS_PER_ELEM * n * n,
                    ..entry(format!("{p}.attend"))
                });
            }
            let mut proj = linear(format!("{p}.proj"), r_in, d);
            proj.flops *= eu;
            out.push(proj);
            if cfg.layer_norm {
                out.push(AuditEntry {
                    norm: 2 * eu,
                    flops: LAYER_NORM_FLOPS_PER_ELEM * d as u64 * eu,
                    ..entry(format!("{p}.ln"))
                });
            }
        }
        if b.project_concat {
            out.push(linear(format!("b{k}.pc"), b.dense_width(), e));
        }
    }
    out.push(linear("head".into(), lay.head_width(), 1));
    Ok(out)
}

/// Parameters of the standalone subnet `g`, embedding tables capped at `cap` rows.
pub fn param_count(g: &Genotype, cfg: &SupernetConfig, cap: Option<usize>) -> Result<ParamReport> {
    let audit = audit(g, cfg, cap)?;
    let sum = |f: fn(&AuditEntry) -> u64| audit.iter().map(f).sum::<u64>();
    let weights_without_bias = sum(|a| a.weights);
    let biases = sum(|a| a.biases);
    let norm_params = sum(|a| a.norm);
    let embedding_weights = sum(|a| a.embedding);
    Ok(ParamReport {
        weights_without_bias,
        biases,
        weights_with_bias: weights_without_bias + biases,
        norm_params,
        embedding_weights,
        total: weights_without_bias + biases + norm_params + embedding_weights,
        audit,
    })
}

/// Forward FLOPs of the standalone subnet `g` for `batch` examples.
pub fn flop_count(g: &Genotype, cfg: &SupernetConfig, batch: usize) -> Result<FlopReport> {
    let audit = audit(g, cfg, None)?;
    let per_example: u64 = audit.iter().map(|a| a.flops).sum();
    Ok(FlopReport {
        batch: batch as u64,
        total: per_example * batch as u64,
        audit,
    })
}
