//! Reverse-mode automatic differentiation with retained graphs.
//!
//! A [`Tape`] records one forward pass. [`Tape::grad`] replays it backwards;
//! when asked to retain, the backward pass is itself recorded, so a loss
//! built from an input-gradient can be differentiated again with respect to
//! the parameters (double backprop).

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::finite_difference_check;
pub use ops::{
    affine, binary_cross_entropy_from_logits, input_gradient, parameter_gradient, softmax_cross_entropy_from_logits,
};
pub use tape::{Tape, Var};

pub(crate) use tape::sigmoid_scalar;
