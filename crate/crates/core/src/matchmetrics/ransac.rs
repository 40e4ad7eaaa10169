use nalgebra::{DMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Mat3;

#[derive(Clone, Debug, PartialEq)]
pub struct RansacConfig {
    /// Upper bound on hypotheses.
    pub max_iterations: usize,
    /// Transfer error (pixels) below which a correspondence is an inlier.
    pub threshold: f64,
    /// Stop once a better hypothesis is this unlikely to exist.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            threshold: 3.0,
            confidence: 0.999,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomographyEstimate {
    /// Maps source points to destination points, `h33 = 1` when possible.
    pub h: Mat3,
    pub inliers: Vec<bool>,
}

impl HomographyEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn transfer(h: &Mat3, p: [f64; 2]) -> Option<[f64; 2]> {
    let y = h * Vector3::new(p[0], p[1], 1.0);
    (y.z.abs() > 1e-12).then(|| [y.x / y.z, y.y / y.z])
}

fn transfer_error(h: &Mat3, p: [f64; 2], q: [f64; 2]) -> f64 {
    transfer(h, p).map_or(f64::INFINITY, |t| (t[0] - q[0]).hypot(t[1] - q[1]))
}

/// Similarity moving the centroid to the origin with mean distance √2.
fn normalizer(pts: &[[f64; 2]]) -> Option<Mat3> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean = pts.iter().map(|p| (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / n;
    if !(mean > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Some(Mat3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply(t: &Mat3, p: [f64; 2]) -> [f64; 2] {
    [t[(0, 0)] * p[0] + t[(0, 2)], t[(1, 1)] * p[1] + t[(1, 2)]]
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// True when every point lies within `tol` (relative to the spread) of one
/// line.
fn collinear(pts: &[[f64; 2]]) -> bool {
    let Some(t) = normalizer(pts) else { return true };
    let p: Vec<[f64; 2]> = pts.iter().map(|&q| apply(&t, q)).collect();
    let (mut i, mut j, mut best) = (0, 0, 0.0);
    for a in 0..p.len() {
        for b in a + 1..p.len() {
            let d = (p[a][0] - p[b][0]).hypot(p[a][1] - p[b][1]);
            if d > best {
                (i, j, best) = (a, b, d);
            }
        }
    }
    p.iter().all(|&q| (cross(p[i], p[j], q) / best).abs() < 1e-6)
}

/// Any three of four points (nearly) on one line.
fn degenerate_sample(pts: &[[f64; 2]; 4]) -> bool {
    (0..4).any(|skip| {
        let tri: Vec<[f64; 2]> = (0..4).filter(|&k| k != skip).map(|k| pts[k]).collect();
        collinear(&tri)
    })
}

/// Least-squares DLT with point normalization, `h33` scaled to 1 when
/// `|h33| > 1e-12`.
pub fn fit_homography(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Mat3> {
    if src.len() != dst.len() || src.len() < 4 {
        return Err(Error::Estimation(format!(
            "DLT needs at least 4 point pairs, got {}",
            src.len().min(dst.len())
        )));
    }
    if collinear(src) || collinear(dst) {
        return Err(Error::Estimation("points are collinear".into()));
    }
    let (ts, td) = (normalizer(src).expect("spread"), normalizer(dst).expect("spread"));
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, (&p, &q)) in src.iter().zip(dst).enumerate() {
        let [x, y] = apply(&ts, p);
        let [u, v] = apply(&td, q);
        let r = 2 * k;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Estimation("SVD failed".into()))?;
    let smallest = svd
        .singular_values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s < svd.singular_values[best] { i } else { best });
    let h = v_t.row(smallest);
    let hn = Mat3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().expect("similarity is invertible");
    let mut out = td_inv * hn * ts;
    if out[(2, 2)].abs() > 1e-12 {
        out /= out[(2, 2)];
    }
    if !out.iter().all(|v| v.is_finite()) || out.determinant().abs() < 1e-15 {
        return Err(Error::Estimation("degenerate homography".into()));
    }
    Ok(out)
}

fn inlier_mask(h: &Mat3, src: &[[f64; 2]], dst: &[[f64; 2]], threshold: f64) -> Vec<bool> {
    src.iter()
        .zip(dst)
        .map(|(&p, &q)| transfer_error(h, p, q) <= threshold)
        .collect()
}

/// RANSAC over 4-point samples followed by a DLT refit on the consensus set.
pub fn estimate_homography(src: &[[f64; 2]], dst: &[[f64; 2]], cfg: &RansacConfig) -> Result<HomographyEstimate> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::Usage(format!(
            "{n} source points but {} destination points",
            dst.len()
        )));
    }
    if n < 4 {
        return Err(Error::Estimation(format!("need at least 4 matches, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, f64, Vec<bool>)> = None;
    let mut needed = cfg.max_iterations as f64;
    let mut iter = 0;
    while iter < cfg.max_iterations && (iter as f64) < needed {
        iter += 1;
        let idx = rand::seq::index::sample(&mut rng, n, 4);
        let s: [[f64; 2]; 4] = std::array::from_fn(|k| src[idx.index(k)]);
        let d: [[f64; 2]; 4] = std::array::from_fn(|k| dst[idx.index(k)]);
        if degenerate_sample(&s) || degenerate_sample(&d) {
            continue;
        }
        let Ok(h) = fit_homography(&s, &d) else { continue };
        let mask = inlier_mask(&h, src, dst, cfg.threshold);
        let count = mask.iter().filter(|&&b| b).count();
        let err: f64 = src
            .iter()
            .zip(dst)
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|((&p, &q), _)| transfer_error(&h, p, q))
            .sum();
        let better = best
            .as_ref()
            .is_none_or(|(c, e, _)| count > *c || (count == *c && err < *e));
        if better {
            let w = count as f64 / n as f64;
            let miss = 1.0 - w.powi(4);
            needed = if miss <= 0.0 {
                0.0
            } else if miss >= 1.0 {
                f64::INFINITY
            } else {
                (1.0 - cfg.confidence).ln() / miss.ln()
            };
            best = Some((count, err, mask));
        }
    }
    let (count, _, mask) = best.ok_or_else(|| Error::Estimation("every sample was degenerate".into()))?;
    if count < 4 {
        return Err(Error::Estimation(format!("consensus of {count} points is too small")));
    }
    let pick =
        |pts: &[[f64; 2]]| -> Vec<[f64; 2]> { pts.iter().zip(&mask).filter(|(_, &m)| m).map(|(&p, _)| p).collect() };
    let h = fit_homography(&pick(src), &pick(dst))?;
    let inliers = inlier_mask(&h, src, dst, cfg.threshold);
    Ok(HomographyEstimate { h, inliers })
}

/// Mean distance between the four image corners mapped by `h_est` and by
/// `h_gt`; infinite when either maps a corner to infinity.
pub fn corner_error(h_est: &Mat3, h_gt: &Mat3, width: usize, height: usize) -> f64 {
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    let corners = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]];
    corners
        .iter()
        .map(|&c| match (transfer(h_est, c), transfer(h_gt, c)) {
            (Some(a), Some(b)) => (a[0] - b[0]).hypot(a[1] - b[1]),
            _ => f64::INFINITY,
        })
        .sum::<f64>()
        / 4.0
}

/// Whether the mean corner error is within `theta` pixels.
pub fn homography_accuracy(h_est: &Mat3, h_gt: &Mat3, width: usize, height: usize, theta: f64) -> bool {
    corner_error(h_est, h_gt, width, height) <= theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_h(rng: &mut ChaCha8Rng) -> Mat3 {
        let a = rng.gen_range(-0.4..0.4f64);
        let s = rng.gen_range(0.8..1.25);
        Mat3::new(
            s * a.cos(),
            -s * a.sin(),
            rng.gen_range(-20.0..20.0),
            s * a.sin(),
            s * a.cos(),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-1e-3..1e-3),
            rng.gen_range(-1e-3..1e-3),
            1.0,
        )
    }

    fn points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|_| [rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0)])
            .collect()
    }

    #[test]
    fn exact_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in [4, 5, 20] {
            let h = random_h(&mut rng);
            let src = points(&mut rng, n);
            let dst: Vec<[f64; 2]> = src.iter().map(|&p| transfer(&h, p).unwrap()).collect();
            let est = estimate_homography(&src, &dst, &RansacConfig::default()).unwrap();
            assert!(corner_error(&est.h, &h, 320, 240) < 1e-6);
            assert_eq!(est.inlier_count(), n);
        }
    }

    #[test]
    fn identity_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = points(&mut rng, 10);
        let est = estimate_homography(&src, &src, &RansacConfig::default()).unwrap();
        assert!((est.h - Mat3::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn failures() {
        let four = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            estimate_homography(&four, &four, &RansacConfig::default()),
            Err(Error::Estimation(_))
        ));
        let line: Vec<[f64; 2]> = (0..8).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(
            estimate_homography(&line, &line, &RansacConfig::default()),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_h(&mut rng);
        let src = points(&mut rng, 30);
        let mut dst: Vec<[f64; 2]> = src.iter().map(|&p| transfer(&h, p).unwrap()).collect();
        for d in dst.iter_mut().take(10) {
            *d = [rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0)];
        }
        let cfg = RansacConfig {
            seed: 5,
            ..Default::default()
        };
        assert_eq!(
            estimate_homography(&src, &dst, &cfg).unwrap(),
            estimate_homography(&src, &dst, &cfg).unwrap()
        );
    }

    #[test]
    fn corner_accuracy() {
        let h = Mat3::new(1.1, 0.05, 3.0, -0.02, 0.95, 1.0, 1e-4, 0.0, 1.0);
        assert!(homography_accuracy(&h, &h, 64, 48, 1e-9));
        let shifted = Mat3::new(1.0, 0.0, 3.0, 0.0, 1.0, 4.0, 0.0, 0.0, 1.0) * h;
        assert!((corner_error(&shifted, &h, 64, 48) - 5.0).abs() < 1e-9);
        assert!(!homography_accuracy(&shifted, &h, 64, 48, 3.0));
        assert!(homography_accuracy(&shifted, &h, 64, 48, 5.0));
    }

    #[test]
    fn robust_to_outliers_and_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut good = 0;
        for trial in 0..50 {
            let h = random_h(&mut rng);
            let src = points(&mut rng, 100);
            let dst: Vec<[f64; 2]> = src
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    if i % 10 < 3 {
                        [rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0)]
                    } else {
                        let t = transfer(&h, p).unwrap();
                        [t[0] + rng.gen_range(-0.5..0.5), t[1] + rng.gen_range(-0.5..0.5)]
                    }
                })
                .collect();
            let cfg = RansacConfig {
                seed: trial,
                ..Default::default()
            };
            if let Ok(est) = estimate_homography(&src, &dst, &cfg) {
                if corner_error(&est.h, &h, 320, 240) < 3.0 {
                    good += 1;
                }
            }
        }
        assert!(good >= 49, "{good}/50");
    }
}
