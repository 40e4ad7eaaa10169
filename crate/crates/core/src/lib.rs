//! Accurate, lightweight learned keypoints: a small reverse-mode tensor
//! engine, a multi-level convolutional backbone, differentiable sub-pixel
//! keypoint detection, the training losses that drive it, and the matching
//! and homography tools used to evaluate the result.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod detect;
mod error;
pub mod geometry;
pub mod imageio;
pub mod losses;
mod maps;
pub mod matchmetrics;
pub mod pipeline;
pub mod tensorgraph;
mod textfmt;
pub mod trainer;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use maps::{DescriptorMap, ScoreMap};
pub use tensorgraph::{Graph, Scalar, Tensor, Var};
