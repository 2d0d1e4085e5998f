//! Brute-force reference implementations.

/// Probability that a random positive outranks a random negative, ties 1/2.
pub fn auc_pairs(labels: &[f64], scores: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li > 0.5 && lj < 0.5 {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

pub fn logloss(labels: &[f64], probs: &[f64], eps: f64) -> f64 {
    let n = labels.len() as f64;
    labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

/// Tau-b by enumerating all pairs.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]).partial_cmp(&0.0).unwrap();
            let b = (y[i] - y[j]).partial_cmp(&0.0).unwrap();
            use std::cmp::Ordering::Equal;
            match (a, b) {
                (Equal, Equal) => {}
                (Equal, _) => tx += 1,
                (_, Equal) => ty += 1,
                _ if a == b => c += 1,
                _ => d += 1,
            }
        }
    }
    (c - d) as f64 / (((c + d + tx) as f64) * ((c + d + ty) as f64)).sqrt()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// `[B, M, K] · [B, K, N]` (or `[B, N, K]` transposed) by triple loop.
pub fn bmm(a: &[f64], b: &[f64], bs: usize, m: usize, k: usize, n: usize, transpose_b: bool) -> Vec<f64> {
    let mut out = vec![0.0; bs * m * n];
    for r in 0..bs {
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for t in 0..k {
                    let bv = if transpose_b {
                        b[r * n * k + j * k + t]
                    } else {
                        b[r * k * n + t * n + j]
                    };
                    s += a[r * m * k + i * k + t] * bv;
                }
                out[r * m * n + i * n + j] = s;
            }
        }
    }
    out
}
