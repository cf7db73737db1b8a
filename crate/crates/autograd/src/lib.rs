//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Just enough machinery to train small convolutional/recurrent latent
//! models on a CPU: an eager tape ([`Graph`]), the handful of ops those
//! models need, a named parameter store and an Adam optimizer.

mod adam;
mod graph;
mod ops;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Grads, Graph, Var};
pub use ops::gemm;
pub use params::{BoundParams, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("shape {shape:?} does not hold {len} elements")]
    ElementCount { shape: Vec<usize>, len: usize },
    #[error("rows have differing lengths")]
    Ragged,
}
