//! Plain SGD and AdaDelta over [`ModelParams`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd { learning_rate: f64 },
    Adadelta { rho: f64, epsilon: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adadelta { rho: 0.95, epsilon: 1e-6 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerConfig::Sgd { learning_rate } if (learning_rate.is_nan() || learning_rate <= 0.0) => {
                Err(Error::InvalidConfig(format!("learning rate must be > 0, got {learning_rate}")))
            }
            OptimizerConfig::Adadelta { rho, .. } if !(0.0..1.0).contains(&rho) => {
                Err(Error::InvalidConfig(format!("AdaDelta decay must be in [0, 1), got {rho}")))
            }
            OptimizerConfig::Adadelta { epsilon, .. } if (epsilon.is_nan() || epsilon <= 0.0) => {
                Err(Error::InvalidConfig(format!("AdaDelta epsilon must be > 0, got {epsilon}")))
            }
            _ => Ok(()),
        }
    }
}

fn check_shapes(params: &ModelParams, grads: &[Tensor]) -> Result<()> {
    let tensors = params.tensors();
    if tensors.len() != grads.len() || tensors.iter().zip(grads).any(|(p, g)| p.shape() != g.shape()) {
        return Err(Error::shape("optimizer", "gradients do not match parameter shapes"));
    }
    Ok(())
}

/// `theta <- theta - lr * g`.
pub fn sgd_step(params: &ModelParams, grads: &[Tensor], learning_rate: f64) -> Result<ModelParams> {
    if learning_rate.is_nan() || learning_rate <= 0.0 {
        return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {learning_rate}")));
    }
    check_shapes(params, grads)?;
    let updated = params
        .tensors()
        .into_iter()
        .zip(grads)
        .map(|(p, g)| p.zip_map(g, |theta, grad| theta - learning_rate * grad))
        .collect();
    params.with_tensors(updated)
}

/// Running averages of squared gradients and squared updates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState {
    sq_grad: Vec<Tensor>,
    sq_delta: Vec<Tensor>,
}

impl AdadeltaState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        AdadeltaState { sq_grad: zeros.clone(), sq_delta: zeros }
    }
}

/// One AdaDelta update:
///
/// ```text
/// E[g^2]  <- rho E[g^2] + (1 - rho) g^2
/// delta   = -sqrt(E[d^2] + eps) / sqrt(E[g^2] + eps) * g
/// E[d^2]  <- rho E[d^2] + (1 - rho) delta^2
/// theta   <- theta + delta
/// ```
pub fn adadelta_step(
    params: &ModelParams,
    grads: &[Tensor],
    state: AdadeltaState,
    rho: f64,
    epsilon: f64,
) -> Result<(ModelParams, AdadeltaState)> {
    OptimizerConfig::Adadelta { rho, epsilon }.validate()?;
    check_shapes(params, grads)?;
    if state.sq_grad.len() != grads.len() || state.sq_grad.iter().zip(grads).any(|(s, g)| s.shape() != g.shape()) {
        return Err(Error::shape("adadelta", "state does not match parameter shapes"));
    }
    let AdadeltaState { mut sq_grad, mut sq_delta } = state;
    let mut updated = Vec::with_capacity(grads.len());
    for (((p, g), eg), ed) in params.tensors().into_iter().zip(grads).zip(&mut sq_grad).zip(&mut sq_delta) {
        let mut theta = p.clone();
        for k in 0..g.len() {
            let grad = g.data()[k];
            let acc_g = rho * eg.data()[k] + (1.0 - rho) * grad * grad;
            let delta = -(ed.data()[k] + epsilon).sqrt() / (acc_g + epsilon).sqrt() * grad;
            eg.data_mut()[k] = acc_g;
            ed.data_mut()[k] = rho * ed.data()[k] + (1.0 - rho) * delta * delta;
            theta.data_mut()[k] += delta;
        }
        updated.push(theta);
    }
    Ok((params.with_tensors(updated)?, AdadeltaState { sq_grad, sq_delta }))
}

/// An optimizer together with its state.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd { learning_rate: f64 },
    Adadelta { rho: f64, epsilon: f64, state: Option<AdadeltaState> },
}

impl Optimizer {
    pub fn new(config: &OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(match *config {
            OptimizerConfig::Sgd { learning_rate } => Optimizer::Sgd { learning_rate },
            OptimizerConfig::Adadelta { rho, epsilon } => Optimizer::Adadelta { rho, epsilon, state: None },
        })
    }

    pub fn step(&mut self, params: &ModelParams, grads: &[Tensor]) -> Result<ModelParams> {
        match self {
            Optimizer::Sgd { learning_rate } => sgd_step(params, grads, *learning_rate),
            Optimizer::Adadelta { rho, epsilon, state } => {
                let current = state.take().unwrap_or_else(|| AdadeltaState::new(params));
                let (next, new_state) = adadelta_step(params, grads, current, *rho, *epsilon)?;
                *state = Some(new_state);
                Ok(next)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(theta: f64) -> ModelParams {
        ModelParams::linear(&[theta], 0.0)
    }

    fn grads(g: f64) -> Vec<Tensor> {
        vec![Tensor::scalar(g), Tensor::scalar(0.0)]
    }

    fn weight(m: &ModelParams) -> f64 {
        m.tensors()[0].item()
    }

    #[test]
    fn sgd_examples() {
        let m = scalar_model(1.0);
        assert_eq!(sgd_step(&m, &grads(0.0), 0.5).unwrap(), m);
        assert_eq!(weight(&sgd_step(&m, &grads(2.0), 0.5).unwrap()), 0.0);
        let twice = sgd_step(&sgd_step(&m, &grads(0.3), 0.05).unwrap(), &grads(0.3), 0.05).unwrap();
        let once = sgd_step(&m, &grads(0.3), 0.1).unwrap();
        assert!((weight(&twice) - weight(&once)).abs() < 1e-15);
        assert!(sgd_step(&m, &[Tensor::scalar(1.0)], 0.1).is_err());
        assert!(sgd_step(&m, &grads(1.0), 0.0).is_err());
    }

    #[test]
    fn adadelta_zero_gradient_leaves_params() {
        let m = scalar_model(0.7);
        let (next, _) = adadelta_step(&m, &grads(0.0), AdadeltaState::new(&m), 0.95, 1e-6).unwrap();
        assert_eq!(next, m);
    }

    #[test]
    fn adadelta_first_step_closed_form() {
        let (rho, eps, g) = (0.95, 1e-6, 0.8);
        let m = scalar_model(0.0);
        let (next, _) = adadelta_step(&m, &grads(g), AdadeltaState::new(&m), rho, eps).unwrap();
        let expected = -eps.sqrt() / ((1.0 - rho) * g * g + eps).sqrt() * g;
        assert!((weight(&next) - expected).abs() < 1e-18);
    }

    #[test]
    fn adadelta_constant_gradient_steps_settle() {
        // Iterate the scalar recurrence independently and compare.
        let (rho, eps, g) = (0.95f64, 1e-6f64, 0.5f64);
        let (mut eg, mut ed, mut theta) = (0.0f64, 0.0f64, 0.0f64);
        let mut opt = Optimizer::new(&OptimizerConfig::Adadelta { rho, epsilon: eps }).unwrap();
        let mut m = scalar_model(0.0);
        let mut steps = Vec::new();
        for _ in 0..3000 {
            eg = rho * eg + (1.0 - rho) * g * g;
            let d = -(ed + eps).sqrt() / (eg + eps).sqrt() * g;
            ed = rho * ed + (1.0 - rho) * d * d;
            theta += d;
            let before = weight(&m);
            m = opt.step(&m, &grads(g)).unwrap();
            steps.push((weight(&m) - before).abs());
        }
        assert!((weight(&m) - theta).abs() < 1e-9);
        for w in steps[2000..].windows(2) {
            assert!((w[1] / w[0] - 1.0).abs() < 1e-3, "late steps vary: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn adadelta_rejects_bad_epsilon() {
        let m = scalar_model(0.0);
        assert!(adadelta_step(&m, &grads(1.0), AdadeltaState::new(&m), 0.9, 0.0).is_err());
        assert!(adadelta_step(&m, &grads(1.0), AdadeltaState::new(&m), 0.9, -1.0).is_err());
    }
}
