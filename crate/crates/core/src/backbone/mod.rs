//! The multi-level feature network: a four-block encoder, 1×1 aggregation of
//! every level at full resolution, and a head producing the descriptor map
//! (L2-normalized) and the score map (sigmoid).

mod accounting;
mod config;
mod model;

pub use accounting::{count_flops, count_params, receptive_field, receptive_field_of, Stage};
pub use config::ModelConfig;
pub use model::{Model, ModelOutput, ModelVars};

/// Cumulative downsampling of the encoder (2·4·4).
pub const INPUT_MULTIPLE: usize = 32;
