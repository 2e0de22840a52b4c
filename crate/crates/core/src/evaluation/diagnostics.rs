//! Geometric diagnostics: how well input gradients point along the
//! counterfactual directions, and how far a pair is from the first-order
//! picture.

use crate::autodiff::{input_gradient, Tape, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gs::{all_terms, gs_loss_rows, select_supervised_output, CounterfactualPair, GsBatch, GsConfig};
use crate::models::{Activation, ModelParams};
use crate::tensor::Tensor;

/// Mean of the members' logits for the rows of `x`, recorded on `tape`.
fn mean_logits<'t>(tape: &'t Tape, members: &[ModelParams], x: Var<'t>) -> Result<Var<'t>> {
    let first = members.first().ok_or(Error::Empty("ensemble"))?;
    let mut total = first.attach(tape).forward(x)?;
    for m in &members[1..] {
        if m.input_width() != first.input_width() || m.output_arity() != first.output_arity() {
            return Err(Error::shape("ensemble", "members have different shapes"));
        }
        total = total.add(m.attach(tape).forward(x)?)?;
    }
    Ok(total.scale(1.0 / members.len() as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    /// Mean cosine between input gradient and oriented target.
    pub mean_cosine: f64,
    pub pairs: usize,
    pub terms: usize,
}

/// Mean over supervised endpoints of `cos(g, g_hat)`, where `g` is the
/// input gradient of the supervised logit (averaged over members) and the
/// endpoints, classes and orientation follow the training rule in `config`.
pub fn gradient_alignment(
    members: &[ModelParams],
    pairs: &[CounterfactualPair],
    dataset: &Dataset,
    config: &GsConfig,
) -> Result<Alignment> {
    if pairs.is_empty() {
        return Err(Error::Empty("counterfactual pairs"));
    }
    let terms = all_terms(dataset, pairs, config)?;
    if terms.is_empty() {
        return Err(Error::Empty("supervised endpoints"));
    }
    let refs: Vec<_> = terms.iter().collect();
    let batch = GsBatch::from_terms(dataset, &refs)?;
    let tape = Tape::new();
    let x = tape.leaf(batch.inputs.clone());
    let selected = select_supervised_output(mean_logits(&tape, members, x)?, &batch.classes)?;
    let g = input_gradient(selected, x, false)?;
    let losses = gs_loss_rows(g, &batch.targets, config.norm_epsilon)?.value();
    let cosines: Vec<f64> = losses.data().iter().map(|l| 1.0 - l).collect();
    Ok(Alignment {
        mean_cosine: super::ap::pairwise_sum(&cosines) / cosines.len() as f64,
        pairs: pairs.len(),
        terms: cosines.len(),
    })
}

/// First-order remainder of logit `class` between `x_i` and `x_j`:
/// `gap = |f(x_j) - f(x_i) - grad f(x_i) . (x_j - x_i)|`, `step = |x_j - x_i|`.
///
/// Affine models have no remainder and report a gap of exactly 0.
pub fn linearization_gap(model: &ModelParams, x_i: &[f64], x_j: &[f64], class: usize) -> Result<(f64, f64)> {
    if x_i.len() != x_j.len() {
        return Err(Error::shape("linearization_gap", format!("{} vs {}", x_i.len(), x_j.len())));
    }
    if class >= model.output_arity() {
        return Err(Error::IndexOutOfRange { index: class, len: model.output_arity() });
    }
    let delta: Vec<f64> = x_j.iter().zip(x_i).map(|(b, a)| b - a).collect();
    let step = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
    if model.layers().iter().all(|l| l.activation == Activation::Identity) {
        model.logits(x_i)?;
        return Ok((0.0, step));
    }
    let tape = Tape::new();
    let x = tape.leaf(Tensor::row(x_i));
    let logits = model.attach(&tape).forward(x)?;
    let f_i = logits.value().get(0, class);
    let g = input_gradient(select_supervised_output(logits, &[class])?, x, false)?.value();
    let f_j = model.logits(x_j)?[class];
    let linear: f64 = g.data().iter().zip(&delta).map(|(a, b)| a * b).sum();
    Ok(((f_j - f_i - linear).abs(), step))
}
