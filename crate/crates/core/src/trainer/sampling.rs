use rand::Rng;

use crate::detect::{nms, refine_seeds, DetectorConfig, Keypoint};
use crate::maps::ScoreMap;

/// Salient detections plus non-salient positions for one training image.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingKeypoints {
    /// NMS seeds `(row, col)` of the salient keypoints.
    pub seeds: Vec<(usize, usize)>,
    pub salient: Vec<Keypoint>,
    pub random: Vec<[f64; 2]>,
    pub warning: Option<String>,
}

/// Top-`cfg.top_k` DKD keypoints and `n_random` uniform positions inside the
/// margin, each at Chebyshev distance at least `cfg.window` from every
/// salient keypoint.
pub fn sample_training_keypoints(
    score_map: &ScoreMap,
    cfg: &DetectorConfig,
    n_random: usize,
    rng: &mut impl Rng,
) -> TrainingKeypoints {
    let seeds = nms(score_map, cfg);
    let salient = refine_seeds(score_map, &seeds, cfg);
    let positions: Vec<[f64; 2]> = salient.iter().map(Keypoint::position).collect();
    let (random, warning) = sample_non_salient(&positions, score_map.width(), score_map.height(), cfg, n_random, rng);
    TrainingKeypoints {
        seeds,
        salient,
        random,
        warning,
    }
}

/// Attempts per requested point before giving up.
const ATTEMPTS_PER_POINT: usize = 50;

/// Rejection sampling of positions away from `avoid`; returns a warning when
/// fewer than `n` fit.
pub fn sample_non_salient(
    avoid: &[[f64; 2]],
    width: usize,
    height: usize,
    cfg: &DetectorConfig,
    n: usize,
    rng: &mut impl Rng,
) -> (Vec<[f64; 2]>, Option<String>) {
    let m = cfg.margin as f64;
    let (hi_u, hi_v) = (width as f64 - 1.0 - m, height as f64 - 1.0 - m);
    if n == 0 {
        return (Vec::new(), None);
    }
    if hi_u < m || hi_v < m {
        return (
            Vec::new(),
            Some(format!("{width}×{height} image has no room inside the margin")),
        );
    }
    let min_dist = cfg.window as f64;
    let grid = Buckets::new(avoid, min_dist);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n * ATTEMPTS_PER_POINT {
        if out.len() == n {
            break;
        }
        let p = [rng.gen_range(m..=hi_u), rng.gen_range(m..=hi_v)];
        if grid.far_from_all(p, min_dist) {
            out.push(p);
        }
    }
    let warning = (out.len() < n).then(|| format!("placed {} of {n} non-salient keypoints", out.len()));
    (out, warning)
}

/// Points hashed into square cells of side `cell`.
struct Buckets {
    cell: f64,
    map: std::collections::HashMap<(i64, i64), Vec<[f64; 2]>>,
}

impl Buckets {
    fn new(points: &[[f64; 2]], cell: f64) -> Self {
        let mut map = std::collections::HashMap::<_, Vec<_>>::new();
        for &p in points {
            map.entry(Self::key(p, cell)).or_default().push(p);
        }
        Self { cell, map }
    }

    fn key(p: [f64; 2], cell: f64) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    fn far_from_all(&self, p: [f64; 2], dist: f64) -> bool {
        let (cx, cy) = Self::key(p, self.cell);
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(pts) = self.map.get(&(cx + dx, cy + dy)) {
                    if pts.iter().any(|q| (q[0] - p[0]).abs().max((q[1] - p[1]).abs()) < dist) {
                        return false;
                    }
                }
            }
        }
        true
    }
}
