//! Toy-scale training on synthetic homography pairs: data generation,
//! keypoint sampling, Adam with linear warmup, gradient accumulation,
//! checkpointing and held-out evaluation.

mod adam;
mod config;
mod eval;
mod sampling;
mod synth;
mod train;
mod triplet;

pub use adam::{Adam, AdamConfig};
pub use config::{DescriptorMode, TrainConfig};
pub use eval::{evaluate_held_out, EvalSummary};
pub use sampling::{sample_non_salient, sample_training_keypoints, TrainingKeypoints};
pub use synth::{generate_pair, generate_pair_with, SynthConfig, SyntheticPair};
pub use train::{
    held_out_seed, moving_average, pair_gradient, pair_objective, pair_seed, synthetic_pair, train, train_from,
    CurveRow, PairGradient, TrainFiles, TrainOutcome,
};
pub use triplet::triplet_loss;
