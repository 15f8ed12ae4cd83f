//! Dense tensors, reverse-mode autodiff, random streams and checkpoints.

mod checkpoint;
mod graph;
pub mod ops;
mod rng;
mod scalar;
mod tensor;

pub use checkpoint::{Checkpoint, Entry, FORMAT_VERSION, MAGIC};
pub use graph::{Graph, Var};
pub use rng::{site, RngStream};
pub use scalar::{lit, Scalar};
pub use tensor::Tensor;
