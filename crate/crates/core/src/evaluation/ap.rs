//! All-points average precision.
//!
//! Scores are ranked in descending order, ties broken by example index
//! (lower index first). Precision is replaced by its envelope, the maximum
//! precision at any later rank, and averaged over the ranks of the positives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ranking of `scores`: descending, ties by index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// AP of one class, `None` when it has no positive.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::shape("average_precision", format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let positives = labels.iter().filter(|&&l| l != 0).count();
    if positives == 0 {
        return Ok(None);
    }
    let order = rank_descending(scores);
    let mut precision = Vec::with_capacity(order.len());
    let mut hits = 0usize;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] != 0 {
            hits += 1;
        }
        precision.push(hits as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let step = 1.0 / positives as f64;
    let mut ap = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] != 0 {
            ap += step * precision[k];
        }
    }
    Ok(Some(ap))
}

/// Pairwise summation over blocks of eight; short inputs are summed left to right.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    let n = values.len();
    if n <= 8 {
        values.iter().fold(0.0, |acc, v| acc + v)
    } else {
        pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    /// AP per class, `None` for skipped classes.
    pub per_class: Vec<Option<f64>>,
    /// Classes without a positive example, left out of the mean.
    pub skipped: Vec<usize>,
}

/// Mean AP over the columns of `scores` (`n x C`) against binary `labels`.
/// The mean is NaN when every class is skipped.
pub fn mean_average_precision(scores: &Tensor, labels: &Tensor) -> Result<MapResult> {
    if scores.shape() != labels.shape() {
        return Err(Error::shape(
            "mean_average_precision",
            format!("scores {:?}, labels {:?}", scores.shape(), labels.shape()),
        ));
    }
    let (n, c) = (scores.rows(), scores.cols());
    let per_class = (0..c)
        .map(|j| {
            let s: Vec<f64> = (0..n).map(|i| scores.get(i, j)).collect();
            let l: Vec<u8> = (0..n).map(|i| u8::from(labels.get(i, j) != 0.0)).collect();
            average_precision(&s, &l)
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped: Vec<usize> = (0..c).filter(|&j| per_class[j].is_none()).collect();
    let evaluated: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = if evaluated.is_empty() { f64::NAN } else { pairwise_sum(&evaluated) / evaluated.len() as f64 };
    Ok(MapResult { map, per_class, skipped })
}
