//! Mini-batch training with the gradient-supervision term, early stopping,
//! ablations and seeded ensembles.

mod optim;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use optim::{adadelta_step, sgd_step, AdadeltaState, Optimizer, OptimizerConfig};

use crate::autodiff::{
    binary_cross_entropy_from_logits, parameter_gradient, softmax_cross_entropy_from_logits, Tape, Var,
};
use crate::data::{pair_index, Dataset, Example, Task};
use crate::error::{Error, Result};
use crate::evaluation::validation_metric;
use crate::gs::{batch_gs_loss, combined_loss, pair_terms, CounterfactualPair, GsBatch, GsConfig, GsTerm};
use crate::models::{init_model, Activation, ModelParams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Holds the weight `lambda` of the supervision term.
    pub gs: GsConfig,
    /// Epochs trained on the main loss alone before the supervision term is added.
    pub warmup_epochs: usize,
    pub seed: u64,
    /// Overrides the task inferred from the labels.
    pub task: Option<Task>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::default(),
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            gs: GsConfig::default(),
            warmup_epochs: 0,
            seed: 0,
            task: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.gs.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Hidden layer widths and activation; input and output widths come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { hidden: Vec::new(), activation: Activation::Relu }
    }
}

impl ModelSpec {
    pub fn build(&self, input_width: usize, outputs: usize, seed: u64) -> Result<ModelParams> {
        let mut sizes = vec![input_width];
        sizes.extend(&self.hidden);
        sizes.push(outputs);
        init_model(&sizes, self.activation, seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub main_loss: f64,
    /// `None` when no pair touched the epoch's batches.
    pub gs_loss: Option<f64>,
    pub val_metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; `None` if no epoch ran.
    pub chosen_epoch: Option<usize>,
}

impl TrainHistory {
    /// `epoch,main_loss,gs_loss,val_metric`, one row per epoch; a missing
    /// supervision loss is left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,main_loss,gs_loss,val_metric\n");
        for r in &self.epochs {
            let gs = r.gs_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.main_loss, gs, r.val_metric));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Index of the largest value, earliest on ties; NaN never wins.
pub fn argmax_earliest(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
}

/// Mean main loss of `logits` against a label matrix.
pub fn main_loss<'t>(logits: Var<'t>, labels: &Tensor, task: Task) -> Result<Var<'t>> {
    match task {
        Task::Binary | Task::Multilabel => binary_cross_entropy_from_logits(logits, labels),
        Task::Multiclass => {
            let targets: Vec<usize> =
                (0..labels.rows()).map(|r| argmax_earliest(labels.row_slice(r)).unwrap_or(0)).collect();
            softmax_cross_entropy_from_logits(logits, &targets)
        }
    }
}

fn check_compatible(model: &ModelParams, data: &Dataset, what: &str) -> Result<()> {
    if data.has_tokens() {
        return Err(Error::InvalidDataset(format!("{what} holds token inputs; encode them first")));
    }
    let width = data.feature_width().unwrap_or(model.input_width());
    if width != model.input_width() {
        return Err(Error::shape("train", format!("{what} has width {width}, model expects {}", model.input_width())));
    }
    if !data.is_empty() && data.label_arity() != model.output_arity() {
        return Err(Error::shape(
            "train",
            format!("{what} has {} labels, model has {} outputs", data.label_arity(), model.output_arity()),
        ));
    }
    Ok(())
}

/// Trains `init` on `train`, supervising input gradients on `pairs`, and
/// returns the parameters from the epoch with the best validation metric.
///
/// A pair contributes to a batch when either endpoint is in it; its
/// partner's features are read from `train` whether or not the partner was
/// drawn. With `lambda == 0` the supervision term is still evaluated for the
/// history but never enters the objective, so the updates equal plain
/// training.
pub fn train(
    init: &ModelParams,
    train: &Dataset,
    pairs: &[CounterfactualPair],
    validation: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if validation.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    check_compatible(init, train, "training set")?;
    check_compatible(init, validation, "validation set")?;
    let task = config.task.unwrap_or_else(|| train.infer_task());

    let mut terms_of_pair: Vec<Vec<GsTerm>> = Vec::with_capacity(pairs.len());
    let mut pairs_at: Vec<Vec<usize>> = vec![Vec::new(); train.len()];
    for (k, &pair) in pairs.iter().enumerate() {
        terms_of_pair.push(pair_terms(train, pair, &config.gs)?);
        let (a, b) = pair.endpoints();
        pairs_at[a].push(k);
        pairs_at[b].push(k);
    }

    let lambda = config.gs.lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Optimizer::new(&config.optimizer)?;
    let mut params = init.clone();
    let mut best = init.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut history = TrainHistory::default();
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let supervise = epoch >= config.warmup_epochs && !pairs.is_empty();
        let (mut main_sum, mut main_n) = (0.0, 0usize);
        let (mut gs_sum, mut gs_n) = (0.0, 0usize);

        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let tape = Tape::new();
            let vars = params.attach(&tape);
            let x = tape.constant(train.feature_matrix(batch)?);
            let main = main_loss(vars.forward(x)?, &train.label_matrix(batch), task)?;

            let mut total = main;
            if supervise {
                let touched: BTreeSet<usize> = batch.iter().flat_map(|&i| pairs_at[i].iter().copied()).collect();
                let terms: Vec<&GsTerm> = touched.iter().flat_map(|&k| terms_of_pair[k].iter()).collect();
                if !terms.is_empty() {
                    let gs_batch = GsBatch::from_terms(train, &terms)?;
                    let gs = batch_gs_loss(&vars, &gs_batch, &config.gs, lambda > 0.0)?;
                    gs_sum += gs.value.item();
                    gs_n += 1;
                    total = combined_loss(main, gs.value, lambda)?;
                }
            }

            let loss = total.item();
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: batch_no, loss });
            }
            main_sum += main.item();
            main_n += 1;
            let grads = parameter_gradient(total, vars.params())?;
            params = optimizer.step(&params, &grads)?;
        }

        let val_metric = validation_metric(&params, validation, task)?;
        history.epochs.push(EpochRecord {
            epoch,
            main_loss: main_sum / main_n as f64,
            gs_loss: (gs_n > 0).then(|| gs_sum / gs_n as f64),
            val_metric,
        });
        log::debug!("epoch {epoch}: main {:.5} val {val_metric:.4}", main_sum / main_n as f64);
        if val_metric > best_metric {
            best_metric = val_metric;
            best = params.clone();
            history.chosen_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    if history.chosen_epoch.is_none() && !history.epochs.is_empty() {
        // Every validation value was NaN: keep the last parameters.
        best = params;
        history.chosen_epoch = Some(history.epochs.len() - 1);
    }
    Ok(TrainOutcome { params: best, history })
}

/// Replaces each pair by a uniformly drawn pair of examples with different
/// labels and different inputs, keeping the pair count.
pub fn randomize_relations(
    pairs: &[CounterfactualPair],
    dataset: &Dataset,
    seed: u64,
) -> Result<Vec<CounterfactualPair>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let n = dataset.len();
    let distinct = |i: usize, j: usize| {
        dataset.labels(i) != dataset.labels(j) && dataset.examples()[i].input != dataset.examples()[j].input
    };
    let any = (0..n).any(|i| (i + 1..n).any(|j| distinct(i, j)));
    if !any {
        return Err(Error::DegeneratePair("no two examples have different labels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs.len());
    while out.len() < pairs.len() {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j && distinct(i, j) {
            out.push(CounterfactualPair::new(i, j)?);
        }
    }
    Ok(out)
}

/// Permutes label vectors across examples; inputs stay and links are dropped.
pub fn shuffle_labels(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    let mut labels: Vec<Vec<u8>> = dataset.examples().iter().map(|e| e.labels.clone()).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let examples = dataset
        .examples()
        .iter()
        .zip(labels)
        .map(|(e, labels)| Example { labels, counterfactual_of: None, ..e.clone() })
        .collect();
    Dataset::new(examples)
}

/// Trains `k` members with seeds `config.seed, config.seed + 1, ...`; the
/// seed drives both initialisation and batch order. Members are returned in
/// seed order whatever the thread count.
pub fn train_ensemble(
    spec: &ModelSpec,
    train_set: &Dataset,
    pairs: &[CounterfactualPair],
    validation: &Dataset,
    config: &TrainConfig,
    k: usize,
) -> Result<Vec<TrainOutcome>> {
    if k == 0 {
        return Err(Error::InvalidConfig("ensemble size must be positive".into()));
    }
    let width = train_set.feature_width().ok_or(Error::Empty("training set"))?;
    let outputs = train_set.label_arity();
    (0..k as u64)
        .into_par_iter()
        .map(|i| {
            let seed = config.seed.wrapping_add(i);
            let member = TrainConfig { seed, ..config.clone() };
            let init = spec.build(width, outputs, seed)?;
            train(&init, train_set, pairs, validation, &member)
        })
        .collect()
}

/// Controlled variants of the training data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Counterfactual pairs as given.
    #[default]
    None,
    /// Same number of pairs, endpoints drawn at random among differently labelled examples.
    RandomRelations,
    /// Counterfactual examples removed, no pairs.
    NoCfData,
    /// Labels permuted in training and validation data, no pairs.
    ShuffledLabels,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "random-relations" => Ok(Ablation::RandomRelations),
            "no-cf-data" => Ok(Ablation::NoCfData),
            "shuffled-labels" => Ok(Ablation::ShuffledLabels),
            other => Err(Error::InvalidConfig(format!(
                "unknown ablation {other:?} (none, random-relations, no-cf-data, shuffled-labels)"
            ))),
        }
    }
}

/// Training data, pairs and validation data after applying an ablation.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Dataset,
    pub pairs: Vec<CounterfactualPair>,
    pub validation: Dataset,
}

pub fn prepare(ablation: Ablation, train: &Dataset, validation: &Dataset, seed: u64) -> Result<Prepared> {
    Ok(match ablation {
        Ablation::None => Prepared { pairs: pair_index(train), train: train.clone(), validation: validation.clone() },
        Ablation::RandomRelations => Prepared {
            pairs: randomize_relations(&pair_index(train), train, seed)?,
            train: train.clone(),
            validation: validation.clone(),
        },
        Ablation::NoCfData => Prepared {
            train: train.filter(|e| e.counterfactual_of.is_none())?,
            pairs: Vec::new(),
            validation: validation.clone(),
        },
        Ablation::ShuffledLabels => Prepared {
            train: shuffle_labels(train, seed)?,
            pairs: Vec::new(),
            validation: shuffle_labels(validation, seed.wrapping_add(1))?,
        },
    })
}
