use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::tape::{Tape, Var};

/// Largest elementwise relative error between reverse-mode gradients of
/// `loss` and central finite differences with step `eps`.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_difference_check<F>(loss: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidConfig(format!("finite-difference step {eps} must be > 0")));
    }

    let analytic = {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = loss(&tape, &vars)?;
        if out.requires_grad() {
            super::parameter_gradient(out, &vars)?
        } else {
            // A loss that ignores its parameters has zero gradient.
            params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect()
        }
    };

    let evaluate = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| tape.constant(p.clone())).collect();
        Ok(loss(&tape, &vars)?.item())
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        for k in 0..params[pi].len() {
            let original = params[pi].data()[k];
            work[pi].data_mut()[k] = original + eps;
            let plus = evaluate(&work)?;
            work[pi].data_mut()[k] = original - eps;
            let minus = evaluate(&work)?;
            work[pi].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
