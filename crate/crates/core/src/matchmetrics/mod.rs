//! Mutual nearest-neighbour matching, repeatability / matching-score /
//! matching-accuracy counts, and robust homography estimation.

mod counts;
mod ransac;
mod report;

pub use counts::{compute_metrics, mutual_match, Match, MatchSet, MetricCounts, GT_THRESHOLD, THRESHOLDS};
pub use ransac::{
    corner_error, estimate_homography, fit_homography, homography_accuracy, HomographyEstimate, RansacConfig,
};
pub use report::{write_metrics_csv, PairMetrics};
