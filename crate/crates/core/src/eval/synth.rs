//! Seeded synthetic fixtures: planted score mixtures, knowledge bases with
//! known relevant documents, and patch grids with a rectangular defect.
//!
//! Every generator is a pure function of its [`SyntheticSpec`].

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, KnowledgeDocument, KnowledgeIndex};
use crate::embedding::index::write_manifest;
use crate::error::{Error, Result};
use crate::expert::PatchGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterPlan {
    pub count: usize,
    /// Target cosine (or raw score) around which members are drawn.
    pub mean: f64,
    pub spread: f64,
}

/// The `count` best-scoring members of `cluster` are labelled relevant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevancePlan {
    pub cluster: usize,
    pub count: usize,
}

/// Rectangle in patch coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectPlan {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Output resolution; must be a whole multiple of the grid.
    pub out_h: usize,
    pub out_w: usize,
    /// `None` produces a defect-free image.
    #[serde(default)]
    pub rect: Option<Rect>,
    pub signal: f64,
    pub noise: f64,
}

fn default_dim() -> usize {
    64
}

fn default_queries() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub clusters: Vec<ClusterPlan>,
    #[serde(default)]
    pub relevance: Option<RelevancePlan>,
    #[serde(default)]
    pub defect: Option<DefectPlan>,
    /// Query keys in a planted knowledge base; each gets its own documents.
    #[serde(default = "default_queries")]
    pub queries: usize,
}

impl SyntheticSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: default_dim(),
            clusters: Vec::new(),
            relevance: None,
            defect: None,
            queries: 1,
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn check_clusters(&self) -> Result<()> {
        if self.clusters.is_empty() || self.clusters.iter().all(|c| c.count == 0) {
            return Err(Error::Spec("cluster plan is empty".into()));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if !c.mean.is_finite() || !(c.spread.is_finite() && c.spread >= 0.0) {
                return Err(Error::Spec(format!("cluster {i}: mean and spread must be finite, spread ≥ 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedScores {
    pub scores: Vec<f64>,
    /// Generating cluster of each score.
    pub labels: Vec<usize>,
}

/// Draws `count` normal scores per cluster, clusters laid out in plan order.
pub fn gen_score_mixture(spec: &SyntheticSpec) -> Result<PlantedScores> {
    spec.check_clusters()?;
    let mut rng = spec.rng();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (c, plan) in spec.clusters.iter().enumerate() {
        let dist = Normal::new(plan.mean, plan.spread).map_err(|e| Error::Spec(e.to_string()))?;
        for _ in 0..plan.count {
            scores.push(dist.sample(&mut rng));
            labels.push(c);
        }
    }
    Ok(PlantedScores { scores, labels })
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Random unit vector orthogonal to each of the (unit, mutually orthogonal) `basis` vectors.
fn orthogonal_unit(rng: &mut ChaCha8Rng, dim: usize, basis: &[&[f64]]) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(rng, dim);
        for b in basis {
            let p: f64 = v.iter().zip(*b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(*b).for_each(|(x, y)| *x -= p * y);
        }
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
            return unit(v);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedQuery {
    pub query_id: String,
    pub key: Vec<f32>,
    /// Positions in the index of the relevant documents, best first.
    pub relevant: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PlantedKb {
    pub documents: Vec<KnowledgeDocument>,
    pub embeddings: EmbeddingMatrix,
    pub index: KnowledgeIndex,
    pub queries: Vec<PlantedQuery>,
}

impl PlantedKb {
    pub fn keys(&self) -> EmbeddingMatrix {
        let rows: Vec<&[f32]> = self.queries.iter().map(|q| q.key.as_slice()).collect();
        EmbeddingMatrix::from_rows(self.embeddings.dim(), &rows).expect("keys share the KB dimension")
    }

    /// Writes `locks.adsk`, `manifest.jsonl`, `keys.adsk` and `queries.jsonl`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.embeddings.save(dir.join("locks.adsk"))?;
        self.keys().save(dir.join("keys.adsk"))?;
        let manifest = dir.join("manifest.jsonl");
        fs::write(&manifest, write_manifest(&self.documents)).map_err(|e| Error::io(&manifest, e))?;
        let mut queries = String::new();
        for q in &self.queries {
            let relevant: Vec<&str> = q.relevant.iter().map(|&i| self.documents[i].doc_id.as_str()).collect();
            let line = serde_json::json!({ "query_id": q.query_id, "relevant": relevant });
            queries.push_str(&line.to_string());
            queries.push('\n');
        }
        let path = dir.join("queries.jsonl");
        fs::write(&path, queries).map_err(|e| Error::io(&path, e))
    }
}

struct DraftDoc {
    row: Vec<f64>,
    query: usize,
    cluster: usize,
    relevant_rank: Option<usize>,
}

/// Knowledge base whose lock embeddings have planted cosines to each query key.
///
/// For each query a random unit key `q` is drawn; every planned document gets a
/// target cosine `s` from its cluster's normal law (clamped to ±0.999) and the
/// lock `s·q + √(1−s²)·u` with `u` a random unit vector orthogonal to `q`.
/// Documents are shuffled before ids are assigned.
pub fn gen_planted_kb(spec: &SyntheticSpec) -> Result<PlantedKb> {
    spec.check_clusters()?;
    if spec.dim < 2 {
        return Err(Error::Spec("planted knowledge bases need dim ≥ 2".into()));
    }
    if spec.queries == 0 {
        return Err(Error::Spec("at least one query is required".into()));
    }
    if let Some(r) = &spec.relevance {
        match spec.clusters.get(r.cluster) {
            None => return Err(Error::Spec(format!("relevance cluster {} does not exist", r.cluster))),
            Some(c) if r.count > c.count => {
                return Err(Error::Spec(format!(
                    "{} relevant documents requested from a cluster of {}",
                    r.count, c.count
                )))
            }
            _ => {}
        }
    }

    let mut rng = spec.rng();
    let mut keys = Vec::with_capacity(spec.queries);
    let mut drafts = Vec::new();
    for qi in 0..spec.queries {
        let key = unit(gaussian_vec(&mut rng, spec.dim));
        for (c, plan) in spec.clusters.iter().enumerate() {
            let dist = Normal::new(plan.mean, plan.spread).map_err(|e| Error::Spec(e.to_string()))?;
            let mut targets: Vec<f64> = (0..plan.count)
                .map(|_| dist.sample(&mut rng).clamp(-0.999, 0.999))
                .collect();
            targets.sort_by(|a, b| b.total_cmp(a));
            let relevant = spec
                .relevance
                .as_ref()
                .filter(|r| r.cluster == c)
                .map_or(0, |r| r.count);
            for (rank, s) in targets.into_iter().enumerate() {
                let u = orthogonal_unit(&mut rng, spec.dim, &[&key]);
                let side = (1.0 - s * s).sqrt();
                let row = key.iter().zip(&u).map(|(k, u)| s * k + side * u).collect();
                drafts.push(DraftDoc {
                    row,
                    query: qi,
                    cluster: c,
                    relevant_rank: (rank < relevant).then_some(rank),
                });
            }
        }
        keys.push(key);
    }
    drafts.shuffle(&mut rng);

    let mut documents = Vec::with_capacity(drafts.len());
    let mut relevant: Vec<Vec<(usize, usize)>> = vec![Vec::new(); spec.queries];
    for (pos, d) in drafts.iter().enumerate() {
        if let Some(rank) = d.relevant_rank {
            relevant[d.query].push((rank, pos));
        }
        documents.push(KnowledgeDocument {
            doc_id: format!("doc-{pos:05}"),
            category: "synthetic".into(),
            defect_type: if d.relevant_rank.is_some() { "relevant" } else { "background" }.into(),
            page: pos as u64,
            summary: format!("query {} cluster {}", d.query, d.cluster),
            lock_row: pos,
        });
    }
    let rows: Vec<&[f64]> = drafts.iter().map(|d| d.row.as_slice()).collect();
    let embeddings = EmbeddingMatrix::from_f64_rows(spec.dim, &rows)?;
    let index = KnowledgeIndex::build(documents.clone(), &embeddings)?;
    let queries = keys
        .into_iter()
        .zip(relevant)
        .enumerate()
        .map(|(i, (key, mut rel))| {
            rel.sort();
            PlantedQuery {
                query_id: format!("query-{i:03}"),
                key: key.iter().map(|&x| x as f32).collect(),
                relevant: rel.into_iter().map(|(_, pos)| pos).collect(),
            }
        })
        .collect();
    Ok(PlantedKb {
        documents,
        embeddings,
        index,
        queries,
    })
}

#[derive(Debug, Clone)]
pub struct DefectFixture {
    pub patches: PatchGrid,
    /// Raw patch rows before normalization.
    pub embeddings: EmbeddingMatrix,
    /// Ground truth at patch resolution, row-major.
    pub patch_mask: Vec<u8>,
    /// Ground truth at output resolution, row-major.
    pub mask: Vec<u8>,
    pub out_h: usize,
    pub out_w: usize,
    pub positive: Vec<f32>,
    pub negative: Vec<f32>,
}

/// Patch grid built from an object direction `b` and orthonormal prompt
/// directions. Each patch is `b + signal·dir + noise·z`, where `dir` is the
/// negative-prompt direction inside the defect rectangle and the positive one
/// elsewhere, and `z` has i.i.d. `N(0, 1/dim)` entries.
pub fn gen_defect_grid(spec: &SyntheticSpec) -> Result<DefectFixture> {
    let plan = spec
        .defect
        .as_ref()
        .ok_or_else(|| Error::Spec("defect plan missing".into()))?;
    if spec.dim < 3 {
        return Err(Error::Spec("defect grids need dim ≥ 3".into()));
    }
    if plan.grid_h == 0 || plan.grid_w == 0 {
        return Err(Error::Spec("patch grid dimensions must be positive".into()));
    }
    if plan.out_h < plan.grid_h
        || plan.out_w < plan.grid_w
        || plan.out_h % plan.grid_h != 0
        || plan.out_w % plan.grid_w != 0
    {
        return Err(Error::Spec("output size must be a whole multiple of the patch grid".into()));
    }
    if !(plan.signal.is_finite() && plan.signal >= 0.0 && plan.noise.is_finite() && plan.noise >= 0.0) {
        return Err(Error::Spec("signal and noise must be finite and non-negative".into()));
    }
    if let Some(r) = plan.rect {
        if r.height == 0 || r.width == 0 || r.top + r.height > plan.grid_h || r.left + r.width > plan.grid_w {
            return Err(Error::Spec(format!("defect rectangle {r:?} does not fit the grid")));
        }
    }

    let mut rng = spec.rng();
    let object = unit(gaussian_vec(&mut rng, spec.dim));
    let positive = orthogonal_unit(&mut rng, spec.dim, &[&object]);
    let negative = orthogonal_unit(&mut rng, spec.dim, &[&object, &positive]);
    let noise_sd = plan.noise / (spec.dim as f64).sqrt();

    let mut rows = Vec::with_capacity(plan.grid_h * plan.grid_w);
    let mut patch_mask = Vec::with_capacity(plan.grid_h * plan.grid_w);
    for y in 0..plan.grid_h {
        for x in 0..plan.grid_w {
            let defect = plan.rect.is_some_and(|r| r.contains(y, x));
            let dir = if defect { &negative } else { &positive };
            let row: Vec<f64> = (0..spec.dim)
                .map(|i| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    object[i] + plan.signal * dir[i] + noise_sd * z
                })
                .collect();
            rows.push(row);
            patch_mask.push(u8::from(defect));
        }
    }
    let embeddings = EmbeddingMatrix::from_f64_rows(spec.dim, &rows)?;
    let patches = PatchGrid::new(plan.grid_h, plan.grid_w, &embeddings)?;

    let (sy, sx) = (plan.out_h / plan.grid_h, plan.out_w / plan.grid_w);
    let mask = (0..plan.out_h)
        .flat_map(|y| (0..plan.out_w).map(move |x| (y, x)))
        .map(|(y, x)| patch_mask[(y / sy) * plan.grid_w + x / sx])
        .collect();

    Ok(DefectFixture {
        patches,
        embeddings,
        patch_mask,
        mask,
        out_h: plan.out_h,
        out_w: plan.out_w,
        positive: positive.iter().map(|&v| v as f32).collect(),
        negative: negative.iter().map(|&v| v as f32).collect(),
    })
}

/// Derives a per-replicate seed from a base seed.
pub fn replicate_seed(base: u64, replicate: u64) -> u64 {
    ChaCha8Rng::seed_from_u64(base ^ replicate.wrapping_mul(0x9e37_79b9_7f4a_7c15)).random()
}
