//! Small differentiable building blocks: dense layers with cached forward
//! passes and exact reverse-mode gradients, Adam, and a finite-difference
//! gradient checker.

mod adam;
mod dense;
pub mod gradcheck;

pub use adam::{Adam, AdamConfig};
pub use dense::{sigmoid, Activation, DenseCache, DenseGrads, DenseLayer, Mlp, MlpCache};

use ndarray::{ArrayD, ArrayViewMutD};

/// A model whose parameters can be updated by an optimizer. The order of
/// `params_mut` must match the order of the gradient list the model produces.
pub trait Trainable {
    fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>>;
}

/// Parameter gradients in `params_mut` order.
pub type Gradients = Vec<ArrayD<f64>>;
