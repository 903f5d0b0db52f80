//! Dense tensors, reverse-mode differentiation, Adam and checkpoints.

mod checkpoint;
mod dense;
mod graph;
mod store;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use dense::{Tensor, TensorError, TensorResult};
#[allow(unused_imports)]
pub(crate) use graph::sigmoid;
pub use graph::{Graph, Var};
pub use store::{AdamConfig, AdamState, ParamGrads, Parameter, ParameterStore};
