//! Rank-based detection metrics.

use serde::Serialize;

use crate::error::{Error, Result};

/// Scores paired with binary labels (1 = anomalous).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::dim(scores.len(), labels.len()));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Data(format!("label {l} is not 0 or 1")));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Data(format!("score at position {i} is not finite")));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }
}

/// Area under the ROC curve via the Mann-Whitney statistic.
///
/// Ties between a positive and a negative count one half. The statistic is
/// accumulated as the integer `2U`, so the result is `2U / (2 · n_pos · n_neg)`
/// with a single rounding.
pub fn auroc(data: &LabeledScores) -> Result<f64> {
    let (pos, neg) = (data.positives() as u64, data.negatives() as u64);
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateData(
            "AUROC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.scores[a].total_cmp(&data.scores[b]));

    let mut twice_u: u128 = 0;
    let mut negatives_below: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        let (mut p, mut q) = (0u64, 0u64);
        while end < order.len() && data.scores[order[end]] == data.scores[order[start]] {
            if data.labels[order[end]] == 1 {
                p += 1;
            } else {
                q += 1;
            }
            end += 1;
        }
        twice_u += 2 * p as u128 * negatives_below as u128 + p as u128 * q as u128;
        negatives_below += q;
        start = end;
    }
    Ok(twice_u as f64 / (2 * pos as u128 * neg as u128) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PixelAuroc {
    /// Mean of the per-image AUROCs.
    pub value: f64,
    pub images_used: usize,
    /// Images whose mask holds a single class.
    pub images_skipped: usize,
}

/// Per-image pixel AUROC, macro-averaged over images that contain both classes.
pub fn pixel_auroc<'a, I>(images: I) -> Result<PixelAuroc>
where
    I: IntoIterator<Item = (&'a [f64], &'a [u8])>,
{
    let (mut sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for (map, mask) in images {
        let data = LabeledScores::new(map.to_vec(), mask.to_vec())?;
        match auroc(&data) {
            Ok(a) => {
                sum += a;
                used += 1;
            }
            Err(Error::DegenerateData(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::DegenerateData(
            "no image has both anomalous and normal pixels".into(),
        ));
    }
    Ok(PixelAuroc {
        value: sum / used as f64,
        images_used: used,
        images_skipped: skipped,
    })
}
