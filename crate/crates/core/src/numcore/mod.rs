//! Dense arithmetic with reverse-mode gradients.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{
    compare_with_central_differences, compare_with_differences, finite_diff_check, loss_value, relative_error,
    value_and_grad, Stencil,
};
pub use matrix::{argmax, DenseMatrix};
pub use tape::{Gradients, Tape, Var};

pub(crate) use tape::softmax_in_place;

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;
