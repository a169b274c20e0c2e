//! Defect-type centroids and nearest-centroid matching of query keys.

use std::fs;
use std::path::{Path, PathBuf};

use super::matrix::{cosine, EmbeddingMatrix};
use crate::error::{Error, Result};

/// Unit-normalized centroids, each tagged with a defect-type label.
#[derive(Debug, Clone)]
pub struct CentroidStore {
    centroids: EmbeddingMatrix,
    labels: Vec<String>,
}

/// Sidecar path holding the JSON label array for a centroid file.
pub fn labels_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".labels.json");
    PathBuf::from(s)
}

impl CentroidStore {
    pub fn new(centroids: &EmbeddingMatrix, labels: Vec<String>) -> Result<Self> {
        if labels.len() != centroids.count() {
            return Err(Error::Data(format!(
                "{} labels for {} centroids",
                labels.len(),
                centroids.count()
            )));
        }
        Ok(Self {
            centroids: centroids.normalized()?,
            labels,
        })
    }

    pub fn centroids(&self) -> &EmbeddingMatrix {
        &self.centroids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let centroids = EmbeddingMatrix::load(path)?;
        let lp = labels_path(path);
        let text = fs::read_to_string(&lp).map_err(|e| Error::io(&lp, e))?;
        let labels: Vec<String> = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", lp.display())))?;
        Self::new(&centroids, labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.centroids.save(path)?;
        let lp = labels_path(path);
        let text = serde_json::to_string(&self.labels).expect("labels serialize");
        fs::write(&lp, text).map_err(|e| Error::io(&lp, e))
    }

    /// Label and cosine similarity of the centroid closest to `key`.
    ///
    /// Ties go to the lowest centroid index.
    pub fn nearest(&self, key: &[f32]) -> Result<(&str, f64)> {
        nearest_centroid(key, self)
    }
}

pub fn nearest_centroid<'a>(key: &[f32], store: &'a CentroidStore) -> Result<(&'a str, f64)> {
    if store.centroids.is_empty() {
        return Err(Error::EmptyStore);
    }
    if key.len() != store.centroids.dim() {
        return Err(Error::dim(store.centroids.dim(), key.len()));
    }
    if key.iter().all(|&v| v == 0.0) {
        return Err(Error::Data("query key is a zero vector".into()));
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, c) in store.centroids.rows().enumerate() {
        let s = cosine(key, c);
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok((store.labels[best.0].as_str(), best.1))
}
