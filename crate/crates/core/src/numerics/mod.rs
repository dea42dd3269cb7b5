//! Dense `f64` tensors and a tape-based reverse-mode autodiff engine.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_difference_check, finite_difference_check_many, GradCheck};
pub(crate) use graph::gelu;
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("loss must be a one-element tensor, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("function value is not finite at the check point: {value}")]
    NonFinite { value: f64 },
}
