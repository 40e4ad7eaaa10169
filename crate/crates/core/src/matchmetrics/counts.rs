use crate::geometry::{warp, Direction, WarpSpec};

/// Pixel thresholds of the per-pair inlier counts.
pub const THRESHOLDS: [f64; 3] = [1.0, 2.0, 3.0];
/// Reprojection distance below which a keypoint counts as repeated.
pub const GT_THRESHOLD: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

/// Mutual nearest neighbours, ordered by index in A.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pairs `(i, j)` where `j` is the most similar B descriptor of `i` and
/// vice versa; ties go to the lower index.
pub fn mutual_match(desc_a: &[Vec<f64>], desc_b: &[Vec<f64>]) -> MatchSet {
    if desc_a.is_empty() || desc_b.is_empty() {
        return MatchSet::default();
    }
    let sim: Vec<Vec<f64>> = desc_a
        .iter()
        .map(|a| desc_b.iter().map(|b| dot(a, b)).collect())
        .collect();
    let argmax = |it: &mut dyn Iterator<Item = f64>| {
        it.enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (i, v)| if v > best.1 { (i, v) } else { best },
            )
            .0
    };
    let best_b: Vec<usize> = sim.iter().map(|row| argmax(&mut row.iter().copied())).collect();
    let best_a: Vec<usize> = (0..desc_b.len())
        .map(|j| argmax(&mut sim.iter().map(|row| row[j])))
        .collect();
    let pairs = best_b
        .iter()
        .enumerate()
        .filter(|&(i, &j)| best_a[j] == i)
        .map(|(i, &j)| Match {
            a: i,
            b: j,
            similarity: sim[i][j],
        })
        .collect();
    MatchSet { pairs }
}

/// Keypoint and match tallies of one image pair and the ratios built on
/// them; ratios with a zero denominator are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricCounts {
    /// Mean number of covisible keypoints of the two images.
    pub n_cov: f64,
    /// Mean number of covisible keypoints whose reprojection lies within
    /// [`GT_THRESHOLD`] of a keypoint of the other image.
    pub n_gt: f64,
    pub n_putative: usize,
    /// Matches with reprojection distance within each of [`THRESHOLDS`].
    pub n_inlier: [usize; 3],
    pub rep: Option<f64>,
    pub ms: Option<f64>,
    pub mma: [Option<f64>; 3],
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// Counts for keypoints `kps_a`, `kps_b` and their matches under the ground
/// truth warp. A keypoint is covisible when its warp is not OUT; a match can
/// only be an inlier when both of its keypoints are covisible.
pub fn compute_metrics(kps_a: &[[f64; 2]], kps_b: &[[f64; 2]], matches: &MatchSet, spec: &WarpSpec) -> MetricCounts {
    let warped_a: Vec<Option<[f64; 2]>> = kps_a
        .iter()
        .map(|&p| warp(p, spec, Direction::AToB).map(|w| w.p))
        .collect();
    let warped_b: Vec<Option<[f64; 2]>> = kps_b
        .iter()
        .map(|&p| warp(p, spec, Direction::BToA).map(|w| w.p))
        .collect();
    let dist = |p: [f64; 2], q: [f64; 2]| (p[0] - q[0]).hypot(p[1] - q[1]);
    let repeated = |warped: &[Option<[f64; 2]>], targets: &[[f64; 2]]| {
        warped
            .iter()
            .flatten()
            .filter(|&&w| targets.iter().any(|&q| dist(w, q) < GT_THRESHOLD))
            .count()
    };
    let cov_a = warped_a.iter().flatten().count();
    let cov_b = warped_b.iter().flatten().count();
    let n_cov = (cov_a + cov_b) as f64 / 2.0;
    let n_gt = (repeated(&warped_a, kps_b) + repeated(&warped_b, kps_a)) as f64 / 2.0;
    let mut n_inlier = [0; 3];
    for m in &matches.pairs {
        let (Some(w), Some(_)) = (warped_a[m.a], warped_b[m.b]) else {
            continue;
        };
        let d = dist(w, kps_b[m.b]);
        for (count, &th) in n_inlier.iter_mut().zip(&THRESHOLDS) {
            if d <= th {
                *count += 1;
            }
        }
    }
    let n_putative = matches.len();
    MetricCounts {
        n_cov,
        n_gt,
        n_putative,
        n_inlier,
        rep: ratio(n_gt, n_cov),
        ms: ratio(n_inlier[2] as f64, n_cov),
        mma: n_inlier.map(|n| ratio(n as f64, n_putative as f64)),
    }
}
