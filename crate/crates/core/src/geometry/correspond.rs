use super::{warp, Direction, WarpSpec};
use crate::tensorgraph::kernels::axis_taps;

/// A source keypoint whose warp lands within the distance threshold of a
/// target keypoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    /// The source keypoint warped into the target view.
    pub warped: [f64; 2],
    /// Euclidean pixel distance from `warped` to the target keypoint.
    pub distance: f64,
}

/// For every source keypoint of `dir` that stays in view, its nearest
/// target keypoint if no farther than `th_gt`. Ties go to the lower target
/// index.
pub fn assign_correspondences(
    sources: &[[f64; 2]],
    targets: &[[f64; 2]],
    spec: &WarpSpec,
    dir: Direction,
    th_gt: f64,
) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for (i, &p) in sources.iter().enumerate() {
        let Some(w) = warp(p, spec, dir) else { continue };
        let mut best: Option<(usize, f64)> = None;
        for (j, q) in targets.iter().enumerate() {
            let d = (w.p[0] - q[0]).hypot(w.p[1] - q[1]);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, d)) = best {
            if d <= th_gt {
                out.push(Correspondence {
                    source: i,
                    target: j,
                    warped: w.p,
                    distance: d,
                });
            }
        }
    }
    out
}

/// Sparse target distribution over the `H·W + 1` bins of a `width×height`
/// image (bin `y·W + x`, outlier bin `H·W`): the four bilinear weights of
/// `p`, or all mass on the outlier bin when `p` is OUT. Zero weights are
/// omitted.
pub fn reprojection_probability(p: Option<[f64; 2]>, width: usize, height: usize) -> Vec<(usize, f64)> {
    let outlier = vec![(width * height, 1.0)];
    let Some([u, v]) = p else { return outlier };
    if !(u >= 0.0 && v >= 0.0 && u <= (width - 1) as f64 && v <= (height - 1) as f64) {
        return outlier;
    }
    let (x0, x1, fx) = axis_taps(u, width);
    let (y0, y1, fy) = axis_taps(v, height);
    let taps = [
        (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
        (y1 * width + x0, (1.0 - fx) * fy),
        (y0 * width + x1, fx * (1.0 - fy)),
        (y1 * width + x1, fx * fy),
    ];
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(4);
    for (bin, w) in taps {
        if w == 0.0 {
            continue;
        }
        match out.iter_mut().find(|(b, _)| *b == bin) {
            Some(slot) => slot.1 += w,
            None => out.push((bin, w)),
        }
    }
    out
}
