//! Rank correlation and the shared-weight versus from-scratch ranking experiment.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CtrDataset;
use crate::error::{NasError, Result};
use crate::network::Supernet;
use crate::sampler::{sample, SamplingStrategy};
use crate::search_space::{Genotype, SupernetConfig};
use crate::trainer::{eval_subnet_shared, finetune_last_fc, train_from_scratch, TrainConfig};

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(NasError::Metric(format!("lengths {} and {} differ", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(NasError::Metric("need at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(NasError::Metric("non-finite input".into()));
    }
    Ok(())
}

/// Sample Pearson correlation (two-pass).
pub fn pearson_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(NasError::Metric("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as u64;
        total += t * (t - 1) / 2;
        i = j;
    }
    total
}

/// Stable merge sort returning the number of strict inversions.
fn sort_count_inversions(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mut buf = v.to_vec();
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            let (mut i, mut j, mut k) = (start, mid, start);
            while i < mid && j < end {
                if v[j] < v[i] {
                    buf[k] = v[j];
                    swaps += (mid - i) as u64;
                    j += 1;
                } else {
                    buf[k] = v[i];
                    i += 1;
                }
                k += 1;
            }
            buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
            k += mid - i;
            buf[k..k + end - j].copy_from_slice(&v[j..end]);
            start = end;
        }
        v.copy_from_slice(&buf);
        width *= 2;
    }
    swaps
}

/// Kendall tau-b in `O(n log n)` (Knight's algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as u64;
    let n0 = n * (n - 1) / 2;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let xy: Vec<(f64, f64)> = order.iter().map(|&i| (x[i], y[i])).collect();
    let n1 = tied_pairs(&xs);
    let n3 = tied_pairs(&xy);
    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let swaps = sort_count_inversions(&mut ys);
    let n2 = tied_pairs(&ys);
    if n0 == n1 || n0 == n2 {
        return Err(NasError::Metric("all values tied".into()));
    }
    let num = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let den = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok((num / den).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankPair {
    pub shared: f64,
    pub scratch: f64,
    pub genotype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub pairs: Vec<RankPair>,
    pub pearson_rho: f64,
    pub kendall_tau: f64,
    /// Candidates dropped because scoring or training failed, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl RankReport {
    pub fn from_pairs(pairs: Vec<RankPair>, skipped: Vec<(String, String)>) -> Result<Self> {
        let x: Vec<f64> = pairs.iter().map(|p| p.shared).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.scratch).collect();
        Ok(RankReport {
            pearson_rho: pearson_rho(&x, &y)?,
            kendall_tau: kendall_tau(&x, &y)?,
            pairs,
            skipped,
        })
    }

    /// `shared,scratch,genotype` rows for plotting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "shared_logloss,scratch_logloss,genotype")?;
        for p in &self.pairs {
            let g = p.genotype.replace('"', "\"\"");
            writeln!(w, "{},{},\"{g}\"", p.shared, p.scratch)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankingSpec {
    pub n_subnets: usize,
    pub strategy: SamplingStrategy,
    /// Score with a fine-tuned head instead of the shared one.
    pub finetune: bool,
    pub seed: u64,
}

impl Default for RankingSpec {
    fn default() -> Self {
        RankingSpec {
            n_subnets: 100,
            strategy: SamplingStrategy::SingleOpAnyConn,
            finetune: true,
            seed: 0,
        }
    }
}

/// Validation log loss with shared weights, optionally after head fine-tuning.
pub fn shared_scores(
    net: &Supernet<f32>,
    candidates: &[Genotype],
    finetune: bool,
    train: &CtrDataset,
    val: &CtrDataset,
    tc: &TrainConfig,
) -> Vec<Result<f64>> {
    candidates
        .par_iter()
        .map(|g| {
            let r = if finetune {
                finetune_last_fc(net, g, tc.finetune_steps, train, val, tc)?
            } else {
                eval_subnet_shared(net, g, val)?
            };
            Ok(r.logloss)
        })
        .collect()
}

/// Validation log loss of each candidate trained alone under `scratch`.
pub fn scratch_scores(
    cfg: &SupernetConfig,
    candidates: &[Genotype],
    scratch: &TrainConfig,
    train: &CtrDataset,
    val: &CtrDataset,
    test: &CtrDataset,
) -> Vec<Result<f64>> {
    candidates
        .par_iter()
        .map(|g| train_from_scratch(g, cfg, scratch, train, val, test, false).map(|r| r.val.logloss))
        .collect()
}

/// Pairs precomputed shared and scratch scores, skipping failures.
pub fn assemble_report(candidates: &[Genotype], shared: &[Result<f64>], scratch: &[Result<f64>]) -> Result<RankReport> {
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for ((g, s), t) in candidates.iter().zip(shared).zip(scratch) {
        match (s, t) {
            (Ok(a), Ok(b)) => pairs.push(RankPair {
                shared: *a,
                scratch: *b,
                genotype: g.to_json(),
            }),
            (Err(e), _) | (_, Err(e)) => skipped.push((g.to_json(), e.to_string())),
        }
    }
    RankReport::from_pairs(pairs, skipped)
}

/// Samples `spec.n_subnets` genotypes, scores them with shared weights and
/// from scratch, and correlates the two log-loss lists.
#[allow(clippy::too_many_arguments)]
pub fn ranking_experiment(
    net: &Supernet<f32>,
    spec: &RankingSpec,
    tc: &TrainConfig,
    scratch: &TrainConfig,
    train: &CtrDataset,
    val: &CtrDataset,
    test: &CtrDataset,
) -> Result<RankReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let candidates: Vec<Genotype> = (0..spec.n_subnets)
        .map(|_| sample(spec.strategy, &net.cfg, &mut rng))
        .collect();
    let shared = shared_scores(net, &candidates, spec.finetune, train, val, tc);
    let truth = scratch_scores(&net.cfg, &candidates, scratch, train, val, test);
    assemble_report(&candidates, &shared, &truth)
}
