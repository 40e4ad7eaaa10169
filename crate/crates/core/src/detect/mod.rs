//! Differentiable keypoint detection: window NMS, temperature softargmax
//! refinement to sub-pixel positions, and descriptor lookup.

mod descriptors;
mod dkd;
mod kptio;

pub use descriptors::{sample_descriptors, sample_descriptors_graph, similarity_map, SimilarityMap};
pub use dkd::{
    detect_keypoints, dkd_graph, keypoints_from_graph, nms, refine_seeds, softargmax_offset, softargmax_weights,
    window_grid, DetectorConfig, DkdOutput, Keypoint,
};
pub use kptio::{parse_keypoints, read_keypoints, write_keypoints, KeypointFile};
