//! Whole-image feature extraction and evaluation of one image pair against
//! a ground-truth homography.

use crate::backbone::{Model, INPUT_MULTIPLE};
use crate::detect::{detect_keypoints, sample_descriptors, DetectorConfig, Keypoint};
use crate::error::Result;
use crate::geometry::{warp, Direction, Mat3, WarpSpec};
use crate::imageio::Image;
use crate::matchmetrics::{
    compute_metrics, corner_error, estimate_homography, mutual_match, MatchSet, MetricCounts, RansacConfig, THRESHOLDS,
};
use crate::tensorgraph::Scalar;

/// Keypoints with descriptors attached, in the pixel frame of the source
/// image.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub keypoints: Vec<Keypoint>,
}

impl Features {
    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.keypoints.iter().map(Keypoint::position).collect()
    }

    pub fn descriptors(&self) -> Vec<Vec<f64>> {
        self.keypoints
            .iter()
            .map(|k| k.descriptor.clone().unwrap_or_default())
            .collect()
    }
}

/// Runs the network on `image` zero-padded to a multiple of 32, crops the
/// maps back and detects and describes keypoints.
pub fn extract<T: Scalar>(model: &Model<T>, image: &Image, det: &DetectorConfig) -> Result<Features> {
    det.validate()?;
    let (w, h) = (image.width(), image.height());
    let up = |v: usize| v.max(1).div_ceil(INPUT_MULTIPLE) * INPUT_MULTIPLE;
    let padded = image.padded(up(w), up(h));
    let out = model.forward(&padded.to_tensor())?;
    let scores = out.score_map.cropped(w, h);
    let descs = out.descriptor_map.cropped(w, h);
    let mut keypoints = detect_keypoints(&scores, det);
    let descriptors = sample_descriptors(&descs, &keypoints)?;
    for (kp, d) in keypoints.iter_mut().zip(descriptors) {
        kp.descriptor = Some(d);
    }
    Ok(Features {
        width: w,
        height: h,
        dim: model.config().dim,
        keypoints,
    })
}

/// Matching quality of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairEvaluation {
    pub counts: MetricCounts,
    pub matches: MatchSet,
    /// Mean ground-truth reprojection distance of the matches that land
    /// within `max_error` pixels; `None` when none do.
    pub reprojection_error: Option<f64>,
    /// Number of matches behind `reprojection_error`.
    pub reprojection_count: usize,
    /// Estimated homography, when estimation was requested and succeeded.
    pub estimate: Option<Mat3>,
    /// Mean corner error within 1, 2 and 3 pixels, when estimation was
    /// requested; a failed estimate counts as incorrect.
    pub mha: Option<[bool; 3]>,
}

/// Mutual nearest-neighbour matching of `a` and `b`, metrics under
/// `h_gt` (A→B), and optionally RANSAC estimation.
pub fn evaluate_pair(
    a: &Features,
    b: &Features,
    h_gt: &Mat3,
    max_error: f64,
    estimate: Option<&RansacConfig>,
) -> Result<PairEvaluation> {
    let spec = WarpSpec::homography(*h_gt, (a.width, a.height), (b.width, b.height))?;
    let (pa, pb) = (a.positions(), b.positions());
    let matches = mutual_match(&a.descriptors(), &b.descriptors());
    let counts = compute_metrics(&pa, &pb, &matches, &spec);
    let errors: Vec<f64> = matches
        .pairs
        .iter()
        .filter_map(|m| {
            let w = warp(pa[m.a], &spec, Direction::AToB)?.p;
            let d = (w[0] - pb[m.b][0]).hypot(w[1] - pb[m.b][1]);
            (d <= max_error).then_some(d)
        })
        .collect();
    let reprojection_error = (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64);
    let (estimate, mha) = match estimate {
        None => (None, None),
        Some(cfg) => {
            let src: Vec<[f64; 2]> = matches.pairs.iter().map(|m| pa[m.a]).collect();
            let dst: Vec<[f64; 2]> = matches.pairs.iter().map(|m| pb[m.b]).collect();
            match estimate_homography(&src, &dst, cfg) {
                Ok(est) => {
                    let err = corner_error(&est.h, h_gt, a.width, a.height);
                    (Some(est.h), Some(THRESHOLDS.map(|t| err <= t)))
                }
                Err(_) => (None, Some([false; 3])),
            }
        }
    };
    Ok(PairEvaluation {
        counts,
        matches,
        reprojection_error,
        reprojection_count: errors.len(),
        estimate,
        mha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ModelConfig;

    #[test]
    fn extract_pads_and_crops() {
        let model = Model::<f32>::init(&ModelConfig::tiny(), 0);
        let img = Image::new(40, 33, 1, (0..40 * 33).map(|i| (i * 37 % 251) as u8).collect()).unwrap();
        let f = extract(&model, &img, &DetectorConfig::default()).unwrap();
        assert_eq!((f.width, f.height, f.dim), (40, 33, 64));
        for k in &f.keypoints {
            assert!(k.u >= 2.0 && k.u <= 37.0 && k.v >= 2.0 && k.v <= 30.0);
            let d = k.descriptor.as_ref().unwrap();
            assert_eq!(d.len(), 64);
            assert!((d.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    fn features(points: &[[f64; 2]]) -> Features {
        let keypoints = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut d = vec![0.0; points.len()];
                d[i] = 1.0;
                Keypoint {
                    descriptor: Some(d),
                    ..Keypoint::new(p[0], p[1], 0.5)
                }
            })
            .collect();
        Features {
            width: 64,
            height: 64,
            dim: points.len(),
            keypoints,
        }
    }

    #[test]
    fn identical_features_evaluate_perfectly() {
        let pts: Vec<[f64; 2]> = (0..12)
            .map(|i| [5.0 + 4.0 * i as f64, 8.0 + 3.7 * (i * i % 13) as f64])
            .collect();
        let f = features(&pts);
        let e = evaluate_pair(&f, &f, &Mat3::identity(), 5.0, Some(&RansacConfig::default())).unwrap();
        assert_eq!(e.counts.rep, Some(1.0));
        assert_eq!(e.counts.mma, [Some(1.0); 3]);
        assert_eq!(e.reprojection_error, Some(0.0));
        assert_eq!(e.mha, Some([true; 3]));
    }

    #[test]
    fn too_few_matches_fail_estimation() {
        let f = features(&[[3.0, 3.0], [9.0, 4.0], [20.0, 30.0]]);
        let e = evaluate_pair(&f, &f, &Mat3::identity(), 5.0, Some(&RansacConfig::default())).unwrap();
        assert_eq!(e.mha, Some([false; 3]));
        assert!(e.estimate.is_none());
    }
}
