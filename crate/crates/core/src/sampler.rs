//! Path sampling strategies and the supernet warm-up schedule.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NasError, Result};
use crate::operators::OperatorKind;
use crate::search_space::{BlockGenotype, Genotype, OpChoice, SupernetConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplingStrategy {
    /// One dense op, one sparse op, one source per branch.
    #[serde(rename = "sosc")]
    SingleOpSingleConn,
    /// Nonempty op subsets and nonempty source subsets.
    #[serde(rename = "aoac")]
    AnyOpAnyConn,
    /// One op per branch, nonempty source subsets.
    #[serde(rename = "soac")]
    SingleOpAnyConn,
}

impl SamplingStrategy {
    pub fn short_name(self) -> &'static str {
        match self {
            SamplingStrategy::SingleOpSingleConn => "sosc",
            SamplingStrategy::AnyOpAnyConn => "aoac",
            SamplingStrategy::SingleOpAnyConn => "soac",
        }
    }

    fn single_op(self) -> bool {
        self != SamplingStrategy::AnyOpAnyConn
    }

    fn single_conn(self) -> bool {
        self == SamplingStrategy::SingleOpSingleConn
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for SamplingStrategy {
    type Err = NasError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sosc" => Ok(SamplingStrategy::SingleOpSingleConn),
            "aoac" => Ok(SamplingStrategy::AnyOpAnyConn),
            "soac" => Ok(SamplingStrategy::SingleOpAnyConn),
            other => Err(NasError::InvalidArgument(format!("unknown strategy {other}"))),
        }
    }
}

/// Probability of training the full supernet, decaying linearly to 0 over
/// the first `warmup_fraction` of training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub total_steps: usize,
    pub warmup_fraction: f64,
}

impl WarmupSchedule {
    pub fn new(total_steps: usize, warmup_fraction: f64) -> Self {
        WarmupSchedule {
            total_steps,
            warmup_fraction,
        }
    }

    pub fn p(&self, step: usize) -> f64 {
        warmup_p(self, step)
    }
}

/// `max(0, 1 - step / (warmup_fraction · total_steps))`.
pub fn warmup_p(sched: &WarmupSchedule, step: usize) -> f64 {
    let span = sched.warmup_fraction * sched.total_steps as f64;
    if span <= 0.0 {
        return 0.0;
    }
    (1.0 - step as f64 / span).max(0.0)
}

/// Uniform nonempty subset: independent fair coins, rejecting the empty draw.
pub fn nonempty_subset<T: Copy, R: Rng + ?Sized>(items: &[T], rng: &mut R) -> Vec<T> {
    assert!(!items.is_empty(), "subset of an empty set");
    loop {
        let pick: Vec<T> = items.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        if !pick.is_empty() {
            return pick;
        }
    }
}

fn sample_ops<R: Rng + ?Sized>(menu: &[OperatorKind], dims: &[usize], single: bool, rng: &mut R) -> Vec<OpChoice> {
    let kinds = if single {
        vec![*menu.choose(rng).expect("nonempty menu")]
    } else {
        nonempty_subset(menu, rng)
    };
    kinds
        .into_iter()
        .map(|kind| OpChoice {
            kind,
            dim: *dims.choose(rng).expect("nonempty dims"),
        })
        .collect()
}

pub(crate) fn sample_conns<R: Rng + ?Sized>(k: usize, single: bool, rng: &mut R) -> Vec<usize> {
    if single {
        vec![rng.gen_range(0..k)]
    } else {
        let sources: Vec<usize> = (0..k).collect();
        nonempty_subset(&sources, rng)
    }
}

/// Block `k` (1-based) under `strategy`.
pub fn sample_block<R: Rng + ?Sized>(
    strategy: SamplingStrategy,
    cfg: &SupernetConfig,
    k: usize,
    rng: &mut R,
) -> BlockGenotype {
    let single = strategy.single_op();
    let dense_ops = sample_ops(&cfg.dense_ops, &cfg.dense_dims, single, rng);
    let sparse_ops = sample_ops(&cfg.sparse_ops, &cfg.sparse_dims, single, rng);
    let dense_conns = sample_conns(k, strategy.single_conn(), rng);
    let sparse_conns = sample_conns(k, strategy.single_conn(), rng);
    let project_concat = cfg.allow_project_concat && rng.gen_bool(0.5);
    BlockGenotype {
        dense_ops,
        sparse_ops,
        dense_conns,
        sparse_conns,
        project_concat,
    }
}

pub fn sample<R: Rng + ?Sized>(strategy: SamplingStrategy, cfg: &SupernetConfig, rng: &mut R) -> Genotype {
    Genotype::new(
        (1..=cfg.num_blocks)
            .map(|k| sample_block(strategy, cfg, k, rng))
            .collect(),
    )
}

/// The full supernet with probability `p(step)`, otherwise [`sample`].
pub fn sample_with_warmup<R: Rng + ?Sized>(
    strategy: SamplingStrategy,
    sched: &WarmupSchedule,
    step: usize,
    cfg: &SupernetConfig,
    rng: &mut R,
) -> Genotype {
    let p = warmup_p(sched, step);
    if p > 0.0 && rng.gen_bool(p.min(1.0)) {
        Genotype::full(cfg)
    } else {
        sample(strategy, cfg, rng)
    }
}
