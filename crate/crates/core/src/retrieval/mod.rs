//! Query-to-knowledge retrieval.
//!
//! A query key is scored against every lock embedding by cosine similarity.
//! The plain baseline returns the top `k` documents. KDE-Sample clusters the
//! score distribution with a Gaussian mixture, weights each cluster by its
//! deflated kernel density, and splits the retrieval budget across clusters in
//! proportion to those weights before merging the per-cluster picks.

pub mod apportion;
pub mod gmm;
pub mod kde;

use serde::Serialize;

use crate::embedding::matrix::dot;
use crate::embedding::KnowledgeIndex;
use crate::error::{Error, Result};

pub use apportion::apportion;
pub use gmm::{fit_score_gmm, GaussianComponent, GmmConfig, ScoreClustering};
pub use kde::{kde_weights, silverman_bandwidth};

/// Cosine similarity of the key against every document, in index order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityScores(Vec<f64>);

impl SimilarityScores {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || v.abs() > 1.0 + 1e-9) {
            return Err(Error::Data(format!("similarity {v} outside [-1, 1]")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn score_all(key: &[f32], index: &KnowledgeIndex) -> Result<SimilarityScores> {
    if key.len() != index.dim() {
        return Err(Error::dim(index.dim(), key.len()));
    }
    let key_sq = dot(key, key);
    if key_sq == 0.0 {
        return Err(Error::Data("query key is a zero vector".into()));
    }
    let values = index
        .locks()
        .rows()
        .map(|lock| (dot(key, lock) / (key_sq * dot(lock, lock)).sqrt()).clamp(-1.0, 1.0))
        .collect();
    Ok(SimilarityScores(values))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    /// Position of the document in the index.
    pub index: usize,
    pub score: f64,
    pub cluster: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
    /// Slots granted to each cluster (KDE-Sample only).
    pub allocations: Vec<usize>,
    pub clustering: Option<ScoreClustering>,
}

/// Document positions sorted by decreasing score, ties by lower position.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn top_k(scores: &SimilarityScores, k: usize) -> RetrievalResult {
    let hits = rank_order(scores.values())
        .into_iter()
        .take(k)
        .map(|i| Hit {
            index: i,
            score: scores.values()[i],
            cluster: None,
        })
        .collect();
    RetrievalResult {
        hits,
        allocations: Vec::new(),
        clustering: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeSampleConfig {
    pub gmm: GmmConfig,
    pub bandwidth_floor: f64,
}

impl Default for KdeSampleConfig {
    fn default() -> Self {
        Self {
            gmm: GmmConfig::default(),
            bandwidth_floor: kde::DEFAULT_BANDWIDTH_FLOOR,
        }
    }
}

/// KDE-Sample over precomputed scores.
pub fn kde_sample(
    scores: &SimilarityScores,
    budget: usize,
    seed: u64,
    config: &KdeSampleConfig,
) -> Result<RetrievalResult> {
    if budget == 0 {
        return Err(Error::Argument("budget must be at least 1".into()));
    }
    let values = scores.values();
    let clustering = fit_score_gmm(values, seed, &config.gmm)?;
    let clustering = kde_weights(clustering, values, config.bandwidth_floor)?;
    let weights = &clustering.kde.as_ref().expect("weights just filled").cluster_weights;

    let order = rank_order(values);
    let mut per_cluster: Vec<Vec<usize>> = vec![Vec::new(); clustering.k];
    for &i in &order {
        per_cluster[clustering.assignments[i]].push(i);
    }
    let capacities: Vec<usize> = per_cluster.iter().map(Vec::len).collect();
    let allocations = apportion(weights, budget, &capacities);

    let mut hits: Vec<Hit> = per_cluster
        .iter()
        .zip(&allocations)
        .enumerate()
        .flat_map(|(c, (members, &take))| {
            members[..take].iter().map(move |&i| Hit {
                index: i,
                score: values[i],
                cluster: Some(c),
            })
        })
        .collect();
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    hits.truncate(budget);

    Ok(RetrievalResult {
        hits,
        allocations,
        clustering: Some(clustering),
    })
}

/// Scores `key` against `index` and runs KDE-Sample with the given budget.
pub fn kde_sample_retrieve(
    key: &[f32],
    index: &KnowledgeIndex,
    budget: usize,
    seed: u64,
    config: &KdeSampleConfig,
) -> Result<RetrievalResult> {
    if index.is_empty() {
        return Err(Error::Argument("knowledge index is empty".into()));
    }
    let scores = score_all(key, index)?;
    kde_sample(&scores, budget, seed, config)
}
