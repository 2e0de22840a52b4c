use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{ModelParams, Scorer};

/// Models whose logits are averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    members: Vec<ModelParams>,
}

impl Ensemble {
    pub fn new(members: Vec<ModelParams>) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("ensemble"))?;
        let (width, arity) = (first.input_width(), first.output_arity());
        if let Some(bad) = members.iter().position(|m| m.output_arity() != arity || m.input_width() != width) {
            return Err(Error::shape("ensemble", format!("member {bad} does not match member 0 ({width} -> {arity})")));
        }
        Ok(Ensemble { members })
    }

    pub fn members(&self) -> &[ModelParams] {
        &self.members
    }
}

impl Scorer for Ensemble {
    fn input_width(&self) -> usize {
        self.members[0].input_width()
    }

    fn output_arity(&self) -> usize {
        self.members[0].output_arity()
    }

    fn logits_batch(&self, x: &Tensor) -> Result<Tensor> {
        let mut sum = self.members[0].logits_batch(x)?;
        for m in &self.members[1..] {
            let next = m.logits_batch(x)?;
            sum = sum.zip_map(&next, |a, b| a + b);
        }
        let k = self.members.len() as f64;
        Ok(sum.map(|v| v / k))
    }
}

/// Arithmetic mean of the members' logits at `x`.
pub fn ensemble_logits(models: &[ModelParams], x: &[f64]) -> Result<Vec<f64>> {
    let ensemble = Ensemble::new(models.to_vec())?;
    Ok(ensemble.logits_batch(&Tensor::row(x))?.into_data())
}
