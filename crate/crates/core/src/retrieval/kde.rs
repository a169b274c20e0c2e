//! Gaussian kernel density over scores and the deflated per-cluster weights.

use std::f64::consts::PI;

use super::gmm::{KdeWeights, ScoreClustering};
use crate::error::{Error, Result};

pub const DEFAULT_BANDWIDTH_FLOOR: f64 = 1e-6;

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule `0.9 · min(σ̂, IQR/1.34) · n^(-1/5)`, floored.
///
/// When the IQR is zero the sample standard deviation is used alone.
pub fn silverman_bandwidth(x: &[f64], floor: f64) -> f64 {
    let n = x.len();
    if n < 2 {
        return floor;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    (0.9 * spread * (n as f64).powf(-0.2)).max(floor)
}

/// Log of the Gaussian KDE of `samples` with bandwidth `h`, evaluated at `at`.
pub fn log_density(samples: &[f64], at: f64, h: f64) -> f64 {
    let exps: Vec<f64> = samples
        .iter()
        .map(|s| {
            let z = (at - s) / h;
            -0.5 * z * z
        })
        .collect();
    let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = exps.iter().map(|e| (e - max).exp()).sum();
    max + sum.ln() - (samples.len() as f64 * h * (2.0 * PI).sqrt()).ln()
}

/// Fills in the KDE log-density of every score and the per-cluster weights
/// `W_n = (1/K) · Σ_{m in cluster n} exp(W*(m) − max W*)`.
///
/// When every score is identical the single cluster gets weight 1.
pub fn kde_weights(mut clustering: ScoreClustering, scores: &[f64], bandwidth_floor: f64) -> Result<ScoreClustering> {
    if clustering.assignments.len() != scores.len() {
        return Err(Error::dim(scores.len(), clustering.assignments.len()));
    }
    if scores.is_empty() {
        return Err(Error::DegenerateData("no scores to weight".into()));
    }
    let h = silverman_bandwidth(scores, bandwidth_floor);
    let log_dens: Vec<f64> = scores.iter().map(|&s| log_density(scores, s, h)).collect();
    let degenerate = scores.iter().all(|&s| s == scores[0]);

    let k = clustering.k;
    let cluster_weights = if degenerate {
        let mut w = vec![0.0; k];
        w[clustering.assignments[0]] = 1.0;
        w
    } else {
        let max = log_dens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sums = vec![0.0; k];
        for (m, &c) in clustering.assignments.iter().enumerate() {
            sums[c] += (log_dens[m] - max).exp();
        }
        sums.into_iter().map(|s| s / k as f64).collect()
    };
    clustering.kde = Some(KdeWeights {
        bandwidth: h,
        log_density: log_dens,
        cluster_weights,
        degenerate,
    });
    Ok(clustering)
}
