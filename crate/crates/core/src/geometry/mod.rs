//! Ground-truth warps between two views, keypoint correspondences and the
//! bilinear reprojection target distribution.

mod correspond;
mod homography_io;
mod warp;

pub use correspond::{assign_correspondences, reprojection_probability, Correspondence};
pub use homography_io::{format_homography, parse_homography, read_homography};
pub use warp::{warp, warp_graph, DepthMap, Direction, Mat3, Rigid3d, WarpSpec, WarpedPoint};
