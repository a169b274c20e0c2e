//! One-dimensional Gaussian mixtures over similarity scores.
//!
//! For every candidate component count `K` in `1..=k_max` a mixture is fitted by
//! EM from a seeded greedy k-means++ initialisation, and the count with the
//! lowest BIC wins. Fits where some component owns fewer than
//! `min_cluster_size` scores are not eligible: with a hard variance floor a
//! component collapsed onto one or two points has an unbounded likelihood that
//! BIC cannot penalise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GmmConfig {
    pub k_max: usize,
    pub max_iter: usize,
    /// Absolute log-likelihood change that ends EM.
    pub tol: f64,
    pub variance_floor: f64,
    /// Independent initialisations per `K`; the best final log-likelihood is kept.
    pub n_init: usize,
    pub min_cluster_size: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k_max: 8,
            max_iter: 200,
            tol: 1e-8,
            variance_floor: 1e-8,
            n_init: 1,
            min_cluster_size: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianComponent {
    pub mean: f64,
    pub variance: f64,
    pub weight: f64,
}

/// Result of EM for a single component count.
#[derive(Debug, Clone, Serialize)]
pub struct MixtureFit {
    pub k: usize,
    pub components: Vec<GaussianComponent>,
    pub log_likelihood: f64,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after initialisation and after every EM iteration.
    pub ll_trace: Vec<f64>,
    /// Hard-assigned member count per component.
    pub sizes: Vec<usize>,
    pub eligible: bool,
}

/// Kernel-density diagnostics attached by [`super::kde::kde_weights`].
#[derive(Debug, Clone, Serialize)]
pub struct KdeWeights {
    pub bandwidth: f64,
    /// Log of the KDE density at every score.
    pub log_density: Vec<f64>,
    /// Deflated per-cluster weight, indexed like `ScoreClustering::components`.
    pub cluster_weights: Vec<f64>,
    /// Set when all scores coincide and the bandwidth sits on its floor.
    pub degenerate: bool,
}

/// Selected mixture over a score vector plus the per-score cluster labels.
///
/// Components are ordered by decreasing mean, so cluster 0 holds the highest
/// scores.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreClustering {
    pub k: usize,
    pub components: Vec<GaussianComponent>,
    pub assignments: Vec<usize>,
    pub candidates: Vec<MixtureFit>,
    pub kde: Option<KdeWeights>,
}

impl ScoreClustering {
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assignments {
            sizes[c] += 1;
        }
        sizes
    }
}

pub fn bic(log_likelihood: f64, k: usize, n: usize) -> f64 {
    let params = (3 * k - 1) as f64;
    -2.0 * log_likelihood + params * (n as f64).ln()
}

fn seed_for(seed: u64, k: usize, restart: usize) -> u64 {
    seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (restart as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Greedy k-means++ seeding: each new centre is the best of several
/// D²-weighted candidates. Returns `None` when fewer than `k` distinct values exist.
fn kmeans_pp(x: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    let n = x.len();
    let mut centers = vec![x[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = x.iter().map(|v| (v - centers[0]).powi(2)).collect();
    let trials = 2 + (k as f64).ln().floor() as usize;
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            if d2[pick] == 0.0 {
                // Rounding pushed the draw past the last positive weight.
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap();
            }
            let cand = x[pick];
            let new_d2: Vec<f64> = x
                .iter()
                .zip(&d2)
                .map(|(v, &old)| old.min((v - cand).powi(2)))
                .collect();
            let potential: f64 = new_d2.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, pick, new_d2));
            }
        }
        let (_, pick, new_d2) = best.unwrap();
        centers.push(x[pick]);
        d2 = new_d2;
    }
    Some(centers)
}

fn nearest(centers: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (j, c) in centers.iter().enumerate() {
        if (v - c).abs() < (v - centers[best]).abs() {
            best = j;
        }
    }
    best
}

/// Responsibilities stored row-major, `k` entries per score.
fn m_step(x: &[f64], resp: &[f64], prev: &[GaussianComponent], floor: f64) -> Vec<GaussianComponent> {
    let k = prev.len();
    let n = x.len() as f64;
    let mut nk = vec![0.0; k];
    let mut sx = vec![0.0; k];
    for (v, r) in x.iter().zip(resp.chunks_exact(k)) {
        for j in 0..k {
            nk[j] += r[j];
            sx[j] += r[j] * v;
        }
    }
    let means: Vec<f64> = (0..k).map(|j| if nk[j] > 0.0 { sx[j] / nk[j] } else { prev[j].mean }).collect();
    let mut sq = vec![0.0; k];
    for (v, r) in x.iter().zip(resp.chunks_exact(k)) {
        for j in 0..k {
            let d = v - means[j];
            sq[j] += r[j] * d * d;
        }
    }
    (0..k)
        .map(|j| {
            if nk[j] <= f64::MIN_POSITIVE {
                return GaussianComponent {
                    weight: 0.0,
                    ..prev[j]
                };
            }
            GaussianComponent {
                mean: means[j],
                variance: (sq[j] / nk[j]).max(floor),
                weight: nk[j] / n,
            }
        })
        .collect()
}

/// Per-component `(ln w − ½ ln(2πσ²), 1 / (2σ²))`.
fn log_terms(comps: &[GaussianComponent]) -> Vec<(f64, f64)> {
    comps
        .iter()
        .map(|c| (c.weight.ln() - 0.5 * (2.0 * PI * c.variance).ln(), 0.5 / c.variance))
        .collect()
}

/// E-step: fills `resp` and returns the total log-likelihood.
fn e_step(x: &[f64], comps: &[GaussianComponent], resp: &mut [f64]) -> f64 {
    let terms = log_terms(comps);
    let mut ll = 0.0;
    for (&v, r) in x.iter().zip(resp.chunks_exact_mut(comps.len())) {
        let mut max = f64::NEG_INFINITY;
        for ((slot, c), &(a, b)) in r.iter_mut().zip(comps).zip(&terms) {
            let d = v - c.mean;
            *slot = a - b * d * d;
            max = max.max(*slot);
        }
        let mut sum = 0.0;
        for slot in r.iter_mut() {
            *slot = (*slot - max).exp();
            sum += *slot;
        }
        r.iter_mut().for_each(|slot| *slot /= sum);
        ll += max + sum.ln();
    }
    ll
}

fn hard_assign(x: &[f64], comps: &[GaussianComponent]) -> Vec<usize> {
    let terms = log_terms(comps);
    x.iter()
        .map(|&v| {
            let mut best = 0;
            let mut best_lp = f64::NEG_INFINITY;
            for (j, (c, &(a, b))) in comps.iter().zip(&terms).enumerate() {
                let d = v - c.mean;
                let lp = a - b * d * d;
                if lp > best_lp {
                    best = j;
                    best_lp = lp;
                }
            }
            best
        })
        .collect()
}

/// Runs EM for exactly `k` components. Returns `None` when the data have fewer
/// than `k` distinct values.
pub fn fit_mixture(x: &[f64], k: usize, seed: u64, config: &GmmConfig) -> Option<MixtureFit> {
    let mut best: Option<MixtureFit> = None;
    for restart in 0..config.n_init.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(seed, k, restart));
        let centers = kmeans_pp(x, k, &mut rng)?;
        let mut resp = vec![0.0; x.len() * k];
        for (i, &v) in x.iter().enumerate() {
            resp[i * k + nearest(&centers, v)] = 1.0;
        }
        let start: Vec<GaussianComponent> = centers
            .iter()
            .map(|&c| GaussianComponent {
                mean: c,
                variance: config.variance_floor,
                weight: 0.0,
            })
            .collect();
        let mut comps = m_step(x, &resp, &start, config.variance_floor);
        let mut ll = e_step(x, &comps, &mut resp);
        let mut trace = vec![ll];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < config.max_iter {
            iterations += 1;
            comps = m_step(x, &resp, &comps, config.variance_floor);
            let new_ll = e_step(x, &comps, &mut resp);
            trace.push(new_ll);
            let delta = (new_ll - ll).abs();
            ll = new_ll;
            if delta < config.tol {
                converged = true;
                break;
            }
        }
        let assign = hard_assign(x, &comps);
        let mut sizes = vec![0; k];
        for &a in &assign {
            sizes[a] += 1;
        }
        let eligible = k == 1 || sizes.iter().all(|&s| s >= config.min_cluster_size);
        let fit = MixtureFit {
            k,
            components: comps,
            log_likelihood: ll,
            bic: bic(ll, k, x.len()),
            iterations,
            converged,
            ll_trace: trace,
            sizes,
            eligible,
        };
        if best.as_ref().is_none_or(|b| fit.log_likelihood > b.log_likelihood) {
            best = Some(fit);
        }
    }
    best
}

/// Fits mixtures for `K = 1..=k_max` and keeps the eligible fit with minimum
/// BIC (ties go to the smaller `K`).
pub fn fit_score_gmm(scores: &[f64], seed: u64, config: &GmmConfig) -> Result<ScoreClustering> {
    if scores.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "mixture fitting needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    if config.k_max == 0 {
        return Err(Error::Argument("k_max must be at least 1".into()));
    }
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite score {bad}")));
    }
    let k_max = config.k_max.min(scores.len());
    let candidates: Vec<MixtureFit> = (1..=k_max)
        .filter_map(|k| fit_mixture(scores, k, seed, config))
        .collect();
    let chosen = candidates
        .iter()
        .filter(|f| f.eligible)
        .fold(None::<&MixtureFit>, |acc, f| match acc {
            Some(a) if a.bic <= f.bic => Some(a),
            _ => Some(f),
        })
        .expect("K = 1 is always eligible");

    // Relabel so that cluster 0 has the largest mean.
    let mut order: Vec<usize> = (0..chosen.k).collect();
    order.sort_by(|&a, &b| {
        chosen.components[b]
            .mean
            .total_cmp(&chosen.components[a].mean)
            .then(a.cmp(&b))
    });
    let components: Vec<GaussianComponent> = order.iter().map(|&j| chosen.components[j]).collect();
    let assignments = hard_assign(scores, &components);

    Ok(ScoreClustering {
        k: chosen.k,
        components,
        assignments,
        candidates,
        kde: None,
    })
}
