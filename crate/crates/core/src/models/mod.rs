//! Classifier families: linear models and MLPs (one struct covers both),
//! a bag-of-words text encoder, and logit-averaging ensembles.
//!
//! Every model produces logits; probability heads live in the losses.

mod bow;
mod checkpoint;
mod ensemble;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid_scalar;
use crate::autodiff::{affine, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use bow::{encode_bag_of_words, BowEncoder, BowEncoderConfig, Vocabulary};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use ensemble::{ensemble_logits, Ensemble};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid_scalar(x),
            Activation::Tanh => x.tanh(),
        }
    }

    fn apply_var<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.relu(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Tanh => x.tanh(),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidConfig(format!("unknown activation {other:?}"))),
        }
    }
}

/// One affine layer followed by an activation. `weight` is `outputs x inputs`,
/// `bias` is `1 x outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// Weights of a feed-forward classifier. A single layer is a linear model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
    seed: u64,
}

/// Builds a model with layer widths `sizes` (input first, outputs last).
///
/// Hidden layers use `hidden`; the last layer is always the identity so the
/// model emits logits. Weights are drawn from
/// `U(-sqrt(6 / (fan_in + fan_out)), +...)`, biases start at 0.
pub fn init_model(sizes: &[usize], hidden: Activation, seed: u64) -> Result<ModelParams> {
    if sizes.len() < 2 {
        return Err(Error::InvalidConfig("a model needs an input width and at least one layer".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidConfig(format!("zero-width layer in {sizes:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_layers = sizes.len() - 1;
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            Layer {
                weight: Tensor::new(fan_out, fan_in, data).expect("sized above"),
                bias: Tensor::zeros(1, fan_out),
                activation: if i + 1 == n_layers { Activation::Identity } else { hidden },
            }
        })
        .collect();
    Ok(ModelParams { layers, seed })
}

impl ModelParams {
    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("model has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != [1, l.weight.rows()] {
                return Err(Error::shape(
                    "model",
                    format!("layer {i}: bias {:?} for weight {:?}", l.bias.shape(), l.weight.shape()),
                ));
            }
            if i > 0 && layers[i - 1].weight.rows() != l.weight.cols() {
                return Err(Error::shape(
                    "model",
                    format!(
                        "layer {i} expects {} inputs, previous emits {}",
                        l.weight.cols(),
                        layers[i - 1].weight.rows()
                    ),
                ));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::InvalidConfig(format!("layer {i} has non-finite values")));
            }
        }
        Ok(ModelParams { layers, seed })
    }

    /// A linear model `w.x + b` with a single logit.
    pub fn linear(weights: &[f64], bias: f64) -> Self {
        ModelParams {
            layers: vec![Layer {
                weight: Tensor::row(weights),
                bias: Tensor::scalar(bias),
                activation: Activation::Identity,
            }],
            seed: 0,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_arity(&self) -> usize {
        self.layers.last().expect("non-empty").weight.rows()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_width()).chain(self.layers.iter().map(|l| l.weight.rows())).collect()
    }

    /// Parameter tensors in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Same architecture with the given tensors, in [`ModelParams::tensors`] order.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != 2 * self.layers.len() {
            return Err(Error::shape(
                "with_tensors",
                format!("{} tensors for {} layers", tensors.len(), self.layers.len()),
            ));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (weight, bias) = (it.next().expect("counted"), it.next().expect("counted"));
            if weight.shape() != l.weight.shape() || bias.shape() != l.bias.shape() {
                return Err(Error::shape("with_tensors", "tensor shape differs from model"));
            }
            layers.push(Layer { weight, bias, activation: l.activation });
        }
        Ok(ModelParams { layers, seed: self.seed })
    }

    /// Registers the parameters as differentiable leaves on `tape`.
    pub fn attach<'t>(&self, tape: &'t Tape) -> ModelVars<'t> {
        let params =
            self.layers.iter().flat_map(|l| [tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())]).collect();
        ModelVars { params, activations: self.layers.iter().map(|l| l.activation).collect() }
    }

    /// Uses `vars` (in [`ModelParams::tensors`] order) as this model's
    /// parameters, e.g. leaves or constants created by the caller.
    pub fn bind<'t>(&self, vars: &[Var<'t>]) -> Result<ModelVars<'t>> {
        let tensors = self.tensors();
        if vars.len() != tensors.len() || vars.iter().zip(&tensors).any(|(v, t)| v.shape() != t.shape()) {
            return Err(Error::shape("bind", "variables do not match the model's parameter shapes"));
        }
        Ok(ModelVars { params: vars.to_vec(), activations: self.layers.iter().map(|l| l.activation).collect() })
    }

    /// Logits for a batch of rows (`n x input_width`), without a tape.
    pub fn logits_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.check_width(x.cols())?;
        let mut h = x.clone();
        for l in &self.layers {
            let mut z = h.matmul(&l.weight.transpose())?;
            let cols = z.cols();
            for (k, v) in z.data_mut().iter_mut().enumerate() {
                *v = l.activation.apply(*v + l.bias.data()[k % cols]);
            }
            h = z;
        }
        Ok(h)
    }

    /// Logits for one input vector.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.logits_batch(&Tensor::row(x))?.into_data())
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.input_width() {
            return Err(Error::shape("forward", format!("input width {width}, model expects {}", self.input_width())));
        }
        Ok(())
    }
}

/// Model parameters living on a tape.
#[derive(Clone, Debug)]
pub struct ModelVars<'t> {
    params: Vec<Var<'t>>,
    activations: Vec<Activation>,
}

impl<'t> ModelVars<'t> {
    /// The parameter leaves, in [`ModelParams::tensors`] order.
    pub fn params(&self) -> &[Var<'t>] {
        &self.params
    }

    /// Logits for a batch `x` (`n x input_width`) recorded on the tape.
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (i, act) in self.activations.iter().enumerate() {
            h = act.apply_var(affine(h, self.params[2 * i], self.params[2 * i + 1])?);
        }
        Ok(h)
    }
}

/// Logits of `params` at `x` recorded on `tape`, with `x` as a differentiable
/// input when `retain` is set (so its gradient can be taken later).
pub fn forward<'t>(
    tape: &'t Tape,
    params: &ModelParams,
    x: &[f64],
    retain: bool,
) -> Result<(Var<'t>, Var<'t>, ModelVars<'t>)> {
    params.check_width(x.len())?;
    let vars = params.attach(tape);
    let input = if retain { tape.leaf(Tensor::row(x)) } else { tape.constant(Tensor::row(x)) };
    let logits = vars.forward(input)?;
    Ok((input, logits, vars))
}

/// Anything that maps input rows to logits.
pub trait Scorer {
    fn input_width(&self) -> usize;
    fn output_arity(&self) -> usize;
    fn logits_batch(&self, x: &Tensor) -> Result<Tensor>;
}

impl Scorer for ModelParams {
    fn input_width(&self) -> usize {
        ModelParams::input_width(self)
    }

    fn output_arity(&self) -> usize {
        ModelParams::output_arity(self)
    }

    fn logits_batch(&self, x: &Tensor) -> Result<Tensor> {
        ModelParams::logits_batch(self, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_examples() {
        let m = init_model(&[2, 1], Activation::Relu, 0).unwrap();
        assert_eq!(m.layers().len(), 1);
        assert_eq!(m.layers()[0].bias.data(), &[0.0]);
        assert_eq!(m.layers()[0].activation, Activation::Identity);

        let coco = init_model(&[2048, 64, 64, 64, 80], Activation::Relu, 3).unwrap();
        assert_eq!(coco.layer_sizes(), vec![2048, 64, 64, 64, 80]);
        assert_eq!(coco.output_arity(), 80);
        let bound = (6.0f64 / (2048.0 + 64.0)).sqrt();
        assert!(coco.layers()[0].weight.data().iter().all(|w| w.abs() <= bound));

        assert_eq!(
            init_model(&[5, 3, 2], Activation::Tanh, 9).unwrap(),
            init_model(&[5, 3, 2], Activation::Tanh, 9).unwrap()
        );
        assert_ne!(
            init_model(&[5, 3, 2], Activation::Tanh, 9).unwrap(),
            init_model(&[5, 3, 2], Activation::Tanh, 10).unwrap()
        );
        assert!(init_model(&[4], Activation::Relu, 0).is_err());
        assert!(init_model(&[], Activation::Relu, 0).is_err());
    }

    #[test]
    fn forward_examples() {
        let id = ModelParams::from_layers(
            vec![Layer { weight: Tensor::identity(3), bias: Tensor::zeros(1, 3), activation: Activation::Identity }],
            0,
        )
        .unwrap();
        assert_eq!(id.logits(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);

        let zero = ModelParams::from_layers(
            vec![Layer {
                weight: Tensor::zeros(2, 3),
                bias: Tensor::row(&[0.25, -4.0]),
                activation: Activation::Identity,
            }],
            0,
        )
        .unwrap();
        assert_eq!(zero.logits(&[9.0, 9.0, 9.0]).unwrap(), vec![0.25, -4.0]);

        let mlp = init_model(&[4, 8, 3], Activation::Sigmoid, 1).unwrap();
        let x = [0.1, -0.2, 0.3, 2.0];
        assert_eq!(mlp.logits(&x).unwrap(), mlp.logits(&x).unwrap());
        assert!(mlp.logits(&[1.0]).is_err());
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let mlp = init_model(&[3, 5, 5, 2], Activation::Tanh, 4).unwrap();
        let x = [0.4, -1.0, 2.5];
        let tape = Tape::new();
        let (_, logits, _) = forward(&tape, &mlp, &x, true).unwrap();
        assert_eq!(logits.value().into_data(), mlp.logits(&x).unwrap());
    }

    #[test]
    fn linear_model_is_positively_homogeneous() {
        let m = ModelParams::linear(&[0.3, -1.7, 2.2], 0.0);
        let x = [1.0, 2.0, -0.5];
        let cx: Vec<f64> = x.iter().map(|v| 2.5 * v).collect();
        let (a, b) = (m.logits(&x).unwrap()[0], m.logits(&cx).unwrap()[0]);
        assert!((b - 2.5 * a).abs() < 1e-12);
    }

    #[test]
    fn shape_validation() {
        let bad = vec![
            Layer { weight: Tensor::zeros(3, 2), bias: Tensor::zeros(1, 3), activation: Activation::Relu },
            Layer { weight: Tensor::zeros(1, 4), bias: Tensor::zeros(1, 1), activation: Activation::Identity },
        ];
        assert!(ModelParams::from_layers(bad, 0).is_err());
        let m = init_model(&[2, 3, 1], Activation::Relu, 0).unwrap();
        assert!(m.with_tensors(vec![Tensor::zeros(1, 1)]).is_err());
        let same = m.with_tensors(m.tensors().into_iter().cloned().collect()).unwrap();
        assert_eq!(same, m);
    }
}
