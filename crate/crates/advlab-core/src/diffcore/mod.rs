//! Tensors, the two toy architectures, and reverse-mode gradients.

pub mod backprop;
pub mod model;
pub mod tensor;

pub use backprop::{
    argmax_rows, backward, finite_difference_gradient, max_gradient_discrepancy,
    per_sample_losses, GradientResult,
};
pub use model::{Architecture, Model, CONV1_CHANNELS, CONV2_CHANNELS, MLP_HIDDEN};
pub use tensor::{Element, Tensor};
