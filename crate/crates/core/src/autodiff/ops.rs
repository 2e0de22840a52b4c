use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::tape::{Tape, Var};

/// `x W^T + b` for a batch of rows `x` (`n x in`), weights `W` (`out x in`)
/// and a bias row `b` (`1 x out`).
pub fn affine<'t>(x: Var<'t>, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
    let [n, inputs] = x.shape();
    let [outputs, w_cols] = weight.shape();
    if w_cols != inputs {
        return Err(Error::shape("affine", format!("input width {inputs} but weight has {w_cols} columns")));
    }
    if bias.shape() != [1, outputs] {
        return Err(Error::shape("affine", format!("bias shape {:?} for {outputs} outputs", bias.shape())));
    }
    x.matmul(weight.transpose())?.add(bias.broadcast_to(n, outputs)?)
}

/// Mean binary cross-entropy over every entry of `logits`, using
/// `softplus(z) - t z`, which never evaluates `log(sigmoid(z))` directly.
pub fn binary_cross_entropy_from_logits<'t>(logits: Var<'t>, targets: &Tensor) -> Result<Var<'t>> {
    if logits.shape() != targets.shape() {
        return Err(Error::shape(
            "binary_cross_entropy",
            format!("logits {:?} vs targets {:?}", logits.shape(), targets.shape()),
        ));
    }
    let t = logits.tape().constant(targets.clone());
    Ok(logits.softplus().sub(logits.mul(t)?)?.mean())
}

/// Mean over rows of `-log softmax(z)[target]`.
pub fn softmax_cross_entropy_from_logits<'t>(logits: Var<'t>, targets: &[usize]) -> Result<Var<'t>> {
    let [n, classes] = logits.shape();
    if targets.len() != n {
        return Err(Error::shape("softmax_cross_entropy", format!("{n} rows but {} targets", targets.len())));
    }
    let mut onehot = Tensor::zeros(n, classes);
    for (r, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(Error::IndexOutOfRange { index: t, len: classes });
        }
        onehot.set(r, t, 1.0);
    }
    let picked = logits.mul(logits.tape().constant(onehot))?.sum_rows();
    Ok(logits.logsumexp_rows().sub(picked)?.mean())
}

/// `d output / d input`. With `retain`, the result stays on the graph and
/// can be differentiated with respect to whatever `output` depended on.
pub fn input_gradient<'t>(output: Var<'t>, input: Var<'t>, retain: bool) -> Result<Var<'t>> {
    let tape: &'t Tape = output.tape();
    Ok(tape.grad(output, &[input], retain)?.remove(0))
}

/// Gradients of a scalar loss with respect to each parameter, as plain tensors.
pub fn parameter_gradient<'t>(loss: Var<'t>, params: &[Var<'t>]) -> Result<Vec<Tensor>> {
    let grads = loss.tape().grad(loss, params, false)?;
    Ok(grads.iter().map(Var::value).collect())
}
