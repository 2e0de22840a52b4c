//! Accuracy, all-points mAP, geometric diagnostics and the evaluation report.

mod ap;
mod diagnostics;
mod report;

pub use ap::{average_precision, mean_average_precision, rank_descending, MapResult};
pub use diagnostics::{gradient_alignment, linearization_gap, Alignment};
pub use report::{evaluate_suite, AlignmentRow, Report, SplitRow, SuiteOptions, REPORT_SCHEMA, REPORT_VERSION};

use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::models::Scorer;
use crate::tensor::Tensor;

fn scores(model: &dyn Scorer, dataset: &Dataset) -> Result<Tensor> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if dataset.label_arity() != model.output_arity() {
        return Err(Error::shape(
            "evaluate",
            format!("dataset has {} labels, model has {} outputs", dataset.label_arity(), model.output_arity()),
        ));
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    model.logits_batch(&dataset.feature_matrix(&all)?)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction correct under `task`: a positive logit means label 1 for
/// binary and per-entry multilabel scoring; multiclass takes the argmax,
/// lowest index on ties.
pub fn accuracy_for(model: &dyn Scorer, dataset: &Dataset, task: Task) -> Result<f64> {
    let logits = scores(model, dataset)?;
    let (mut correct, mut total) = (0usize, 0usize);
    for i in 0..dataset.len() {
        let (row, labels) = (logits.row_slice(i), dataset.labels(i));
        match task {
            Task::Binary | Task::Multilabel => {
                for (&z, &l) in row.iter().zip(labels) {
                    correct += usize::from((z > 0.0) == (l == 1));
                    total += 1;
                }
            }
            Task::Multiclass => {
                let want = labels.iter().position(|&l| l == 1).unwrap_or(0);
                correct += usize::from(argmax(row) == want);
                total += 1;
            }
        }
    }
    Ok(correct as f64 / total as f64)
}

/// [`accuracy_for`] with the task read from the labels.
pub fn accuracy(model: &dyn Scorer, dataset: &Dataset) -> Result<f64> {
    accuracy_for(model, dataset, dataset.infer_task())
}

/// mAP of a model's logits on a dataset.
pub fn model_map(model: &dyn Scorer, dataset: &Dataset) -> Result<MapResult> {
    let logits = scores(model, dataset)?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    mean_average_precision(&logits, &dataset.label_matrix(&all))
}

/// Accuracy for single-label tasks, mAP for multilabel.
pub fn validation_metric(model: &dyn Scorer, dataset: &Dataset, task: Task) -> Result<f64> {
    match task {
        Task::Multilabel => Ok(model_map(model, dataset)?.map),
        _ => accuracy_for(model, dataset, task),
    }
}

/// Score of a label-independent predictor.
///
/// Single-label tasks use the majority-class rate. For multilabel mAP each
/// class with a positive contributes the expected AP of a uniformly random
/// ranking, which at finite `n` sits above the positive rate because of the
/// precision envelope.
pub fn chance_level(dataset: &Dataset, task: Task) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let n = dataset.len() as f64;
    let arity = dataset.label_arity();
    let positives: Vec<usize> =
        (0..arity).map(|c| (0..dataset.len()).filter(|&i| dataset.labels(i)[c] == 1).count()).collect();
    Ok(match task {
        Task::Binary => {
            let p = positives[0] as f64 / n;
            p.max(1.0 - p)
        }
        Task::Multiclass => positives.iter().copied().max().unwrap_or(0) as f64 / n,
        Task::Multilabel => {
            let aps: Vec<f64> =
                positives.iter().filter(|&&p| p > 0).map(|&p| random_ranking_ap(dataset.len(), p)).collect();
            if aps.is_empty() {
                f64::NAN
            } else {
                ap::pairwise_sum(&aps) / aps.len() as f64
            }
        }
    })
}

const RANDOM_RANKINGS: usize = 512;

/// Expected AP when `positives` of `n` items are placed uniformly at random,
/// estimated from a fixed set of shuffles so the value is reproducible.
pub fn random_ranking_ap(n: usize, positives: usize) -> f64 {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if positives == 0 || positives > n {
        return f64::NAN;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(((n as u64) << 32) ^ positives as u64);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < positives)).collect();
    let scores: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
    let mut total = 0.0;
    for _ in 0..RANDOM_RANKINGS {
        labels.shuffle(&mut rng);
        total += average_precision(&scores, &labels).expect("equal lengths").expect("has positives");
    }
    total / RANDOM_RANKINGS as f64
}
