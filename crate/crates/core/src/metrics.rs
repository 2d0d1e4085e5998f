//! Binary classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{NasError, Result};

/// Probability clamp inside [`logloss`].
pub const LOGLOSS_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub logloss: f64,
    pub auc: f64,
    pub n_examples: usize,
}

impl EvalResult {
    pub fn from_probs(probs: &[f64], labels: &[f64]) -> Result<Self> {
        Ok(EvalResult {
            logloss: logloss(probs, labels)?,
            auc: auc(probs, labels)?,
            n_examples: probs.len(),
        })
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(NasError::Metric(format!("{a} predictions for {b} labels")));
    }
    if a == 0 {
        return Err(NasError::Metric("empty input".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy with probabilities clamped to `[eps, 1 - eps]`.
pub fn logloss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    let s: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(LOGLOSS_EPS, 1.0 - LOGLOSS_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(s / probs.len() as f64)
}

/// Area under the ROC curve as the Mann–Whitney statistic, ties counted 1/2.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| y > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(NasError::Metric("AUC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(NasError::Metric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of mid-ranks (1-based) of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] > 0.5).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}
