//! Gradient supervision: align the input-gradient of a model's logit with
//! the vector joining two counterfactual examples.
//!
//! For a pair `(x_i, y_i)`, `(x_j, y_j)` with differing labels, the target
//! direction at `x_i` is `x_j - x_i`, oriented so that it points from the
//! example where the supervised class is absent toward the one where it is
//! present. The loss is the cosine distance
//! `1 - g.t / (max(|g|, eps) |t|)` between the logit's input-gradient `g`
//! and that target `t`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{input_gradient, Tape, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::ModelVars;
use crate::tensor::Tensor;

/// An undirected link between two examples, stored with the smaller index first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CounterfactualPair {
    a: usize,
    b: usize,
}

impl CounterfactualPair {
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a == b {
            return Err(Error::DegeneratePair(format!("example {a} paired with itself")));
        }
        Ok(CounterfactualPair { a: a.min(b), b: a.max(b) })
    }

    pub fn endpoints(&self) -> (usize, usize) {
        (self.a, self.b)
    }

    /// Checks both endpoints exist, labels differ and features differ.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        for i in [self.a, self.b] {
            if i >= dataset.len() {
                return Err(Error::IndexOutOfRange { index: i, len: dataset.len() });
            }
        }
        if dataset.labels(self.a) == dataset.labels(self.b) {
            return Err(Error::DegeneratePair(format!("{self:?}: labels are equal")));
        }
        if dataset.examples()[self.a].input == dataset.examples()[self.b].input {
            return Err(Error::DegeneratePair(format!("{self:?}: inputs are identical")));
        }
        Ok(())
    }
}

/// Which differing classes receive a supervision term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassSelection {
    /// One term per class whose label differs across the pair.
    #[default]
    PerClass,
    /// Only the lowest-index differing class.
    LowestIndex,
    /// Exactly one class may differ; more is an error.
    Strict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GsConfig {
    pub lambda: f64,
    pub norm_epsilon: f64,
    /// Apply the loss at both endpoints of each pair.
    pub bidirectional: bool,
    pub class_selection: ClassSelection,
}

impl Default for GsConfig {
    fn default() -> Self {
        GsConfig { lambda: 1.0, norm_epsilon: 1e-8, bidirectional: true, class_selection: ClassSelection::PerClass }
    }
}

impl GsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        check_epsilon(self.norm_epsilon)
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("norm epsilon must be > 0, got {eps}")))
    }
}

/// `x_to - x_from`.
pub fn target_gradient(x_from: &[f64], x_to: &[f64]) -> Result<Vec<f64>> {
    if x_from.len() != x_to.len() {
        return Err(Error::shape("target_gradient", format!("{} vs {} features", x_from.len(), x_to.len())));
    }
    let g: Vec<f64> = x_to.iter().zip(x_from).map(|(t, f)| t - f).collect();
    if g.iter().all(|&v| v == 0.0) {
        return Err(Error::DegeneratePair("zero difference vector".into()));
    }
    Ok(g)
}

/// Cosine distance `1 - g.t / (max(|g|, eps) |t|)`, in `[0, 2]`.
pub fn gs_loss(g: &[f64], g_hat: &[f64], norm_epsilon: f64) -> Result<f64> {
    check_epsilon(norm_epsilon)?;
    if g.len() != g_hat.len() {
        return Err(Error::shape("gs_loss", format!("{} vs {}", g.len(), g_hat.len())));
    }
    let target_norm = norm(g_hat);
    if target_norm == 0.0 {
        return Err(Error::DegeneratePair("zero target gradient".into()));
    }
    let dot: f64 = g.iter().zip(g_hat).map(|(a, b)| a * b).sum();
    Ok(1.0 - dot / (norm(g).max(norm_epsilon) * target_norm))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Row-wise cosine distance between `g` (`m x d`, on the tape) and fixed
/// targets (`m x d`), as an `m x 1` column.
pub fn gs_loss_rows<'t>(g: Var<'t>, targets: &Tensor, norm_epsilon: f64) -> Result<Var<'t>> {
    check_epsilon(norm_epsilon)?;
    if g.shape() != targets.shape() {
        return Err(Error::shape("gs_loss", format!("gradient {:?} vs target {:?}", g.shape(), targets.shape())));
    }
    let target_norms: Vec<f64> = (0..targets.rows()).map(|r| norm(targets.row_slice(r))).collect();
    if let Some(r) = target_norms.iter().position(|&n| n == 0.0) {
        return Err(Error::DegeneratePair(format!("zero target gradient in row {r}")));
    }
    let tape = g.tape();
    let dot = g.mul(tape.constant(targets.clone()))?.sum_rows();
    let denom = g.norm_rows().clamp_min(norm_epsilon).mul(tape.constant(Tensor::column(&target_norms)))?;
    Ok(dot.div(denom)?.neg().add_scalar(1.0))
}

/// Which side of a pair holds the supervised class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SupervisedClass {
    pub class: usize,
    /// The class is present at endpoint `a` (and absent at `b`).
    pub positive_at_a: bool,
}

/// Classes whose gradient is supervised for a pair with labels `labels_a`
/// and `labels_b`: those positive on exactly one side.
///
/// A single-logit model always supervises class 0.
pub fn supervised_classes(labels_a: &[u8], labels_b: &[u8], selection: ClassSelection) -> Result<Vec<SupervisedClass>> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::shape("supervised_classes", "label arities differ"));
    }
    let differing: Vec<SupervisedClass> = labels_a
        .iter()
        .zip(labels_b)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(class, (&a, _))| SupervisedClass { class, positive_at_a: a == 1 })
        .collect();
    match (differing.len(), selection) {
        (0, _) => Err(Error::NoSupervisedClass("labels do not differ".into())),
        (1, _) | (_, ClassSelection::PerClass) => Ok(differing),
        (_, ClassSelection::LowestIndex) => Ok(vec![differing[0]]),
        (k, ClassSelection::Strict) => {
            Err(Error::NoSupervisedClass(format!("{k} classes differ and strict selection allows one")))
        }
    }
}

/// The logit of `class` in each row, summed: a scalar whose input-gradient
/// row `r` is the gradient of row `r`'s selected logit.
pub fn select_supervised_output<'t>(logits: Var<'t>, classes: &[usize]) -> Result<Var<'t>> {
    let [rows, arity] = logits.shape();
    if classes.len() != rows {
        return Err(Error::shape("select_supervised_output", format!("{rows} rows, {} classes", classes.len())));
    }
    let mut mask = Tensor::zeros(rows, arity);
    for (r, &c) in classes.iter().enumerate() {
        if c >= arity {
            return Err(Error::IndexOutOfRange { index: c, len: arity });
        }
        mask.set(r, c, 1.0);
    }
    Ok(logits.mul(logits.tape().constant(mask))?.sum())
}

/// `main + lambda * gs`; with `lambda == 0` the main loss is returned as is.
pub fn combined_loss<'t>(main: Var<'t>, gs: Var<'t>, lambda: f64) -> Result<Var<'t>> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(main);
    }
    main.add(gs.scale(lambda))
}

/// One supervised endpoint: the logit of `class` at example `endpoint`
/// should grow along `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct GsTerm {
    pub endpoint: usize,
    pub class: usize,
    pub target: Vec<f64>,
    /// `partner - endpoint` before orientation.
    pub raw: Vec<f64>,
}

/// Supervision terms of one pair.
///
/// At each endpoint the raw target is `partner - endpoint`; it is negated
/// when the partner is the side without the class, so the oriented target
/// always points toward the positive side.
pub fn pair_terms(dataset: &Dataset, pair: CounterfactualPair, config: &GsConfig) -> Result<Vec<GsTerm>> {
    pair.validate(dataset)?;
    let (a, b) = pair.endpoints();
    let (xa, xb) = (dataset.features(a)?, dataset.features(b)?);
    let classes = supervised_classes(dataset.labels(a), dataset.labels(b), config.class_selection)?;
    let endpoints: &[(usize, &[f64], &[f64], bool)] =
        if config.bidirectional { &[(a, xa, xb, true), (b, xb, xa, false)] } else { &[(a, xa, xb, true)] };
    let mut terms = Vec::new();
    for sc in &classes {
        for &(endpoint, here, there, is_a) in endpoints {
            let raw = target_gradient(here, there)?;
            let partner_positive = sc.positive_at_a != is_a;
            let target = if partner_positive { raw.clone() } else { raw.iter().map(|v| -v).collect() };
            terms.push(GsTerm { endpoint, class: sc.class, target, raw });
        }
    }
    Ok(terms)
}

/// Supervision terms packed as matrices for one vectorised evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct GsBatch {
    /// Endpoint features, `m x d`.
    pub inputs: Tensor,
    /// Oriented targets, `m x d`.
    pub targets: Tensor,
    pub classes: Vec<usize>,
}

impl GsBatch {
    pub fn from_terms(dataset: &Dataset, terms: &[&GsTerm]) -> Result<Self> {
        let width = dataset.feature_width().unwrap_or(0);
        let mut inputs = Vec::with_capacity(terms.len() * width);
        let mut targets = Vec::with_capacity(terms.len() * width);
        for t in terms {
            inputs.extend_from_slice(dataset.features(t.endpoint)?);
            targets.extend_from_slice(&t.target);
        }
        Ok(GsBatch {
            inputs: Tensor::new(terms.len(), width, inputs)?,
            targets: Tensor::new(terms.len(), width, targets)?,
            classes: terms.iter().map(|t| t.class).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Mean supervision loss over a batch of terms.
#[derive(Clone, Copy, Debug)]
pub struct GsLoss<'t> {
    pub value: Var<'t>,
    /// Set when there was nothing to supervise; `value` is then 0.
    pub empty: bool,
}

/// Per-term losses (`m x 1`) of `model` on `batch`. With `retain` the result
/// is differentiable with respect to the model's parameters.
pub fn gs_loss_terms<'t>(model: &ModelVars<'t>, batch: &GsBatch, norm_epsilon: f64, retain: bool) -> Result<Var<'t>> {
    let tape: &'t Tape = model.params()[0].tape();
    let inputs = tape.leaf(batch.inputs.clone());
    let logits = model.forward(inputs)?;
    let selected = select_supervised_output(logits, &batch.classes)?;
    let g = input_gradient(selected, inputs, retain)?;
    gs_loss_rows(g, &batch.targets, norm_epsilon)
}

/// Mean of the supervision terms in `batch`; an empty batch gives 0 and
/// sets [`GsLoss::empty`].
pub fn batch_gs_loss<'t>(
    model: &ModelVars<'t>,
    batch: &GsBatch,
    config: &GsConfig,
    retain: bool,
) -> Result<GsLoss<'t>> {
    config.validate()?;
    let tape: &'t Tape = model.params()[0].tape();
    if batch.is_empty() {
        return Ok(GsLoss { value: tape.constant(Tensor::scalar(0.0)), empty: true });
    }
    let per_term = gs_loss_terms(model, batch, config.norm_epsilon, retain)?;
    Ok(GsLoss { value: per_term.mean(), empty: false })
}

/// All supervision terms for `pairs` over `dataset`.
pub fn all_terms(dataset: &Dataset, pairs: &[CounterfactualPair], config: &GsConfig) -> Result<Vec<GsTerm>> {
    let mut terms = Vec::new();
    for &p in pairs {
        terms.extend(pair_terms(dataset, p, config)?);
    }
    Ok(terms)
}
