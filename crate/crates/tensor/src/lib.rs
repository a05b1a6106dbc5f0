//! Dense tensors with tape-based reverse-mode differentiation, sized for
//! volumetric segmentation networks on the CPU.
//!
//! The [`Graph`] records 5-D activations `(N, C, D, H, W)` as operations run;
//! [`Graph::backward`] sweeps the tape once in reverse and deposits parameter
//! gradients into a [`ParameterStore`].

mod error;
pub mod gradcheck;
mod graph;
pub mod ops;
mod params;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{BnMode, Gradients, Graph, Var};
pub use params::{ParamEntry, ParamId, ParamKind, ParameterStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
