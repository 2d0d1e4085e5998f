use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use super::{BlockGenotype, Genotype, OpChoice, SupernetConfig};
use crate::operators::OperatorKind;

/// How dimension choices enter the architecture count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountingConvention {
    /// Every sampled operator picks its own width (the genotype's native form):
    /// `(1+|D|)^{|O|} - 1` operator/width combinations per branch.
    PerOperatorDims,
    /// One width per branch shared by its operators: `(2^{|O|} - 1)·|D|`.
    PerBranchDims,
}

fn branch_choices(num_ops: usize, num_dims: usize, conv: CountingConvention) -> BigUint {
    match conv {
        CountingConvention::PerOperatorDims => {
            BigUint::from(1 + num_dims).pow(num_ops as u32) - BigUint::from(1u32)
        }
        CountingConvention::PerBranchDims => {
            (BigUint::from(2u32).pow(num_ops as u32) - BigUint::from(1u32)) * BigUint::from(num_dims)
        }
    }
}

/// Exact number of distinct subnets: per block, operator/width choices in each
/// branch × nonempty dense and sparse connection subsets × Project-Concatenate flag.
pub fn cardinality(cfg: &SupernetConfig, conv: CountingConvention) -> BigUint {
    let dense = branch_choices(cfg.dense_ops.len(), cfg.dense_dims.len(), conv);
    let sparse = branch_choices(cfg.sparse_ops.len(), cfg.sparse_dims.len(), conv);
    let flag = BigUint::from(if cfg.allow_project_concat { 2u32 } else { 1u32 });
    let mut total = BigUint::from(1u32);
    for k in 1..=cfg.num_blocks {
        let conns = BigUint::from(2u32).pow(k as u32) - BigUint::from(1u32);
        total *= &dense * &sparse * &conns * &conns * &flag;
    }
    total
}

fn subsets<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    (1u32..(1 << items.len()))
        .map(|mask| {
            items
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, x)| x.clone())
                .collect()
        })
        .collect()
}

fn op_assignments(
    menu: &[OperatorKind],
    dims: &[usize],
    conv: CountingConvention,
    single_op: bool,
) -> Vec<Vec<OpChoice>> {
    let mut out = Vec::new();
    for ops in subsets(menu) {
        if single_op && ops.len() != 1 {
            continue;
        }
        match conv {
            CountingConvention::PerBranchDims => {
                for &d in dims {
                    out.push(ops.iter().map(|&kind| OpChoice { kind, dim: d }).collect());
                }
            }
            CountingConvention::PerOperatorDims => {
                let mut partial: Vec<Vec<OpChoice>> = vec![Vec::new()];
                for &kind in &ops {
                    partial = partial
                        .into_iter()
                        .flat_map(|p| {
                            dims.iter().map(move |&dim| {
                                let mut q = p.clone();
                                q.push(OpChoice { kind, dim });
                                q
                            })
                        })
                        .collect();
                }
                out.extend(partial);
            }
        }
    }
    out
}

/// Every genotype of `cfg` by explicit nested enumeration. With `single_op`,
/// each branch holds exactly one operator. Exponential: meant for tiny spaces.
pub fn enumerate_genotypes(cfg: &SupernetConfig, conv: CountingConvention, single_op: bool) -> Vec<Genotype> {
    let dense = op_assignments(&cfg.dense_ops, &cfg.dense_dims, conv, single_op);
    let sparse = op_assignments(&cfg.sparse_ops, &cfg.sparse_dims, conv, single_op);
    let flags: &[bool] = if cfg.allow_project_concat { &[false, true] } else { &[false] };
    let mut partial: Vec<Vec<BlockGenotype>> = vec![Vec::new()];
    for k in 1..=cfg.num_blocks {
        let sources: Vec<usize> = (0..k).collect();
        let conns = subsets(&sources);
        let mut next = Vec::new();
        for p in &partial {
            for d in &dense {
                for s in &sparse {
                    for dc in &conns {
                        for sc in &conns {
                            for &pc in flags {
                                let mut q = p.clone();
                                q.push(BlockGenotype {
                                    dense_ops: d.clone(),
                                    sparse_ops: s.clone(),
                                    dense_conns: dc.clone(),
                                    sparse_conns: sc.clone(),
                                    project_concat: pc,
                                });
                                next.push(q);
                            }
                        }
                    }
                }
            }
        }
        partial = next;
    }
    partial.into_iter().map(Genotype::new).collect()
}
