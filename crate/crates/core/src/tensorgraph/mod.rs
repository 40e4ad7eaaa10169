//! Dense tensors and a reverse-mode computation graph covering the
//! operations used by the backbone, the detector and the losses.

mod checkpoint;
mod graph;
pub(crate) mod kernels;
mod scalar;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use graph::{Graph, SparseTarget, Var};
pub use scalar::Scalar;
pub use tensor::{Tensor, MAX_RANK};

#[cfg(test)]
mod tests;
