//! Anomaly localization from patch and prompt embeddings.
//!
//! Each patch is compared with a positive prompt ("defect present") and a
//! negative prompt ("flawless object"). Cosines are shifted into `[0, 1]` by
//! `(1 + cos) / 2` and the patch value is
//!
//! ```text
//! v = c_neg / (c_pos + c_neg)
//! ```
//!
//! so `v` always lies in `[0, 1]`; a patch with both shifted cosines at zero
//! gets 0.5. The patch grid is then bilinearly upsampled to the output
//! resolution using the half-pixel convention (align-corners off): output
//! pixel `y` samples the source at `(y + 0.5) · h_p / out_h − 0.5`, clamped to
//! `[0, h_p − 1]`, and likewise along the width.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Serialize, Serializer};

use crate::embedding::matrix::{cosine, norm};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Patch embeddings laid out row-major over an `height × width` grid.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    height: usize,
    width: usize,
    embeddings: EmbeddingMatrix,
}

impl PatchGrid {
    /// Rows are normalized; zero rows are rejected.
    pub fn new(height: usize, width: usize, embeddings: &EmbeddingMatrix) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument("patch grid dimensions must be positive".into()));
        }
        if embeddings.count() != height * width {
            return Err(Error::dim(height * width, embeddings.count()));
        }
        Ok(Self {
            height,
            width,
            embeddings: embeddings.normalized()?,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }
}

/// Image-level reduction of a localization map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregator {
    Max,
    /// Mean of the `⌈q · n⌉` largest values.
    TopQ(f64),
}

impl Default for Aggregator {
    fn default() -> Self {
        Aggregator::TopQ(0.01)
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregator::Max => f.write_str("max"),
            Aggregator::TopQ(q) => write!(f, "topq({q})"),
        }
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "max" {
            return Ok(Aggregator::Max);
        }
        let q = s
            .strip_prefix("topq(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| Error::Argument(format!("unknown aggregator {s:?}; expected max or topq(q)")))?;
        let q: f64 = q
            .parse()
            .map_err(|_| Error::Argument(format!("bad topq fraction {q:?}")))?;
        Aggregator::top_q(q)
    }
}

impl Serialize for Aggregator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl Aggregator {
    pub fn top_q(q: f64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Argument(format!("topq fraction must lie in (0, 1], got {q}")));
        }
        Ok(Aggregator::TopQ(q))
    }
}

pub fn image_score(values: &[f64], aggregator: Aggregator) -> f64 {
    assert!(!values.is_empty(), "image score of an empty map");
    match aggregator {
        Aggregator::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregator::TopQ(q) => {
            let take = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            sorted[..take].iter().sum::<f64>() / take as f64
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalizationMap {
    pub height: usize,
    pub width: usize,
    /// Row-major values in `[0, 1]`.
    pub values: Vec<f64>,
    pub image_score: f64,
    pub aggregator: Aggregator,
    /// Values at patch resolution, before upsampling.
    pub patch_values: Vec<f64>,
    /// Patches whose shifted cosines were both zero.
    pub degenerate_patches: usize,
}

impl LocalizationMap {
    /// Binary PGM (P5), values scaled to 0–255 and rounded.
    pub fn to_pgm(&self) -> Vec<u8> {
        let pixels: Vec<u8> = self.values.iter().map(|v| (v * 255.0).round() as u8).collect();
        crate::pgm::encode(self.width, self.height, &pixels)
    }
}

/// Per-patch anomaly values and the number of degenerate patches.
pub fn patch_values(patches: &PatchGrid, positive: &[f32], negative: &[f32]) -> Result<(Vec<f64>, usize)> {
    for prompt in [positive, negative] {
        if prompt.len() != patches.dim() {
            return Err(Error::dim(patches.dim(), prompt.len()));
        }
        if norm(prompt) == 0.0 {
            return Err(Error::Data("prompt embedding is a zero vector".into()));
        }
    }
    let mut degenerate = 0;
    let values = patches
        .embeddings
        .rows()
        .map(|p| {
            let cp = (1.0 + cosine(p, positive)) / 2.0;
            let cn = (1.0 + cosine(p, negative)) / 2.0;
            if cp + cn == 0.0 {
                degenerate += 1;
                0.5
            } else {
                cn / (cp + cn)
            }
        })
        .collect();
    Ok((values, degenerate))
}

fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let x = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let lo = (x.floor() as usize).min(src_len - 1);
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, x - lo as f64)
}

/// Bilinear resize of a row-major `h × w` grid to `out_h × out_w`.
pub fn bilinear_upsample(values: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(values.len(), h * w);
    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|x| source_coord(x, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, wy) = source_coord(y, h, out_h);
        for &(x0, x1, wx) in &cols {
            let top = values[y0 * w + x0] * (1.0 - wx) + values[y0 * w + x1] * wx;
            let bottom = values[y1 * w + x0] * (1.0 - wx) + values[y1 * w + x1] * wx;
            out.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    out
}

pub fn localization_map(
    patches: &PatchGrid,
    positive: &[f32],
    negative: &[f32],
    out_h: usize,
    out_w: usize,
    aggregator: Aggregator,
) -> Result<LocalizationMap> {
    if out_h < patches.height || out_w < patches.width {
        return Err(Error::Argument(format!(
            "output {out_h}x{out_w} is smaller than the {}x{} patch grid",
            patches.height, patches.width
        )));
    }
    let (patch_vals, degenerate) = patch_values(patches, positive, negative)?;
    let values: Vec<f64> = bilinear_upsample(&patch_vals, patches.height, patches.width, out_h, out_w)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    let score = image_score(&values, aggregator);
    Ok(LocalizationMap {
        height: out_h,
        width: out_w,
        values,
        image_score: score,
        aggregator,
        patch_values: patch_vals,
        degenerate_patches: degenerate,
    })
}

/// Localization values followed by the caller's visual embedding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorEmbedding {
    pub map_height: usize,
    pub map_width: usize,
    pub values: Vec<f64>,
}

impl PriorEmbedding {
    pub fn loc_len(&self) -> usize {
        self.map_height * self.map_width
    }

    pub fn vis_len(&self) -> usize {
        self.values.len() - self.loc_len()
    }

    pub fn split(&self) -> (&[f64], &[f64]) {
        self.values.split_at(self.loc_len())
    }
}

pub fn assemble_prior(map: &LocalizationMap, vis: &[f64]) -> Result<PriorEmbedding> {
    if let Some(i) = map.values.iter().chain(vis).position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite value at prior position {i}")));
    }
    let mut values = Vec::with_capacity(map.values.len() + vis.len());
    values.extend_from_slice(&map.values);
    values.extend_from_slice(vis);
    Ok(PriorEmbedding {
        map_height: map.height,
        map_width: map.width,
        values,
    })
}

/// Cosine of every patch (rows) against every prompt (columns).
pub fn prompt_similarity_matrix(patches: &PatchGrid, prompts: &EmbeddingMatrix) -> Result<DMatrix<f64>> {
    if prompts.dim() != patches.dim() {
        return Err(Error::dim(patches.dim(), prompts.dim()));
    }
    let n = patches.embeddings.count();
    Ok(DMatrix::from_fn(n, prompts.count(), |i, j| {
        cosine(patches.embeddings.row(i), prompts.row(j))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, rows: &[[f32; 2]]) -> PatchGrid {
        PatchGrid::new(h, w, &EmbeddingMatrix::from_rows(2, rows).unwrap()).unwrap()
    }

    #[test]
    fn symmetric_prompts_give_half() {
        let g = grid(2, 2, &[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.3]]);
        let m = localization_map(&g, &[0.6, 0.8], &[0.6, 0.8], 8, 8, Aggregator::default()).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.5));
        assert_eq!(m.image_score, 0.5);
    }

    #[test]
    fn patch_value_is_shifted_ratio() {
        // Shifted cosines 0.8 (negative) and 0.2 (positive) -> 0.8.
        // cos_neg = 0.6, cos_pos = -0.6.
        let g = grid(1, 1, &[[1.0, 0.0]]);
        let neg = [0.6f32, 0.8];
        let pos = [-0.6f32, 0.8];
        let (v, _) = patch_values(&g, &pos, &neg).unwrap();
        assert!((v[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn opposite_prompts_are_degenerate() {
        let g = grid(1, 1, &[[1.0, 0.0]]);
        let (v, degenerate) = patch_values(&g, &[-1.0, 0.0], &[-2.0, 0.0]).unwrap();
        assert_eq!(v, [0.5]);
        assert_eq!(degenerate, 1);
    }

    #[test]
    fn constant_grid_upsamples_to_constant() {
        let out = bilinear_upsample(&[0.3; 4], 2, 2, 8, 8);
        assert_eq!(out.len(), 64);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn upsample_same_size_is_identity() {
        let vals = [0.1, 0.9, 0.4, 0.7, 0.2, 0.5];
        assert_eq!(bilinear_upsample(&vals, 2, 3, 2, 3), vals);
    }

    #[test]
    fn aggregators() {
        let mut v = vec![0.0; 200];
        v[17] = 1.0;
        assert_eq!(image_score(&v, Aggregator::Max), 1.0);
        assert_eq!(image_score(&v, Aggregator::TopQ(0.01)), 0.5);
        assert_eq!(image_score(&[0.25; 9], Aggregator::TopQ(0.3)), 0.25);
        assert_eq!(image_score(&[0.25; 9], Aggregator::Max), 0.25);
    }

    #[test]
    fn aggregator_parsing() {
        assert_eq!("max".parse::<Aggregator>().unwrap(), Aggregator::Max);
        assert_eq!("topq(0.05)".parse::<Aggregator>().unwrap(), Aggregator::TopQ(0.05));
        assert!("topq(0)".parse::<Aggregator>().is_err());
        assert!("mean".parse::<Aggregator>().is_err());
        assert_eq!(Aggregator::TopQ(0.01).to_string(), "topq(0.01)");
    }

    #[test]
    fn errors() {
        let g = grid(1, 2, &[[1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(
            localization_map(&g, &[1.0, 0.0, 0.0], &[0.0, 1.0], 4, 4, Aggregator::Max),
            Err(Error::Dimension { .. })
        ));
        assert!(localization_map(&g, &[1.0, 0.0], &[0.0, 1.0], 1, 1, Aggregator::Max).is_err());
        assert!(localization_map(&g, &[0.0, 0.0], &[0.0, 1.0], 4, 4, Aggregator::Max).is_err());
        let emb = EmbeddingMatrix::from_rows(2, &[[1.0f32, 0.0]]).unwrap();
        assert!(PatchGrid::new(2, 2, &emb).is_err());
    }

    #[test]
    fn prior_concatenation() {
        let g = grid(2, 2, &[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]]);
        let m = localization_map(&g, &[1.0, 0.0], &[0.0, 1.0], 2, 2, Aggregator::Max).unwrap();
        let p = assemble_prior(&m, &[]).unwrap();
        assert_eq!(p.values, m.values);
        let p = assemble_prior(&m, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(p.values.len(), 7);
        assert_eq!(p.split().1, &[0.1, 0.2, 0.3]);
        assert!(assemble_prior(&m, &[f64::NAN]).is_err());
    }

    #[test]
    fn similarity_matrix_columns() {
        let g = grid(1, 2, &[[1.0, 0.0], [1.0, 0.0]]);
        let prompts = EmbeddingMatrix::from_rows(2, &[[0.0f32, 3.0], [2.0, 0.0]]).unwrap();
        let s = prompt_similarity_matrix(&g, &prompts).unwrap();
        assert_eq!(s.shape(), (2, 2));
        assert_eq!(s[(0, 1)], 1.0);
        assert_eq!(s[(1, 0)], 0.0);
    }
}
