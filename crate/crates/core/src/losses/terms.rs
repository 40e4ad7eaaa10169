use super::LossConfig;
use crate::detect::{sample_descriptors_graph, window_grid, DkdOutput};
use crate::error::{Error, Result};
use crate::geometry::{assign_correspondences, reprojection_probability, warp, warp_graph, Direction, WarpSpec};
use crate::maps::DescriptorMap;
use crate::tensorgraph::{Graph, Scalar, SparseTarget, Tensor, Var};

/// A symmetric loss term with per-direction bookkeeping.
#[derive(Clone, Copy, Debug)]
pub struct Term {
    pub var: Var,
    /// Items averaged in the A→B and B→A halves.
    pub counts: [usize; 2],
}

impl Term {
    /// Directions that had nothing to average and contributed zero.
    pub fn empty_directions(&self) -> impl Iterator<Item = Direction> + '_ {
        [Direction::AToB, Direction::BToA]
            .into_iter()
            .zip(self.counts)
            .filter(|(_, n)| *n == 0)
            .map(|(d, _)| d)
    }
}

fn zero<T: Scalar>(g: &mut Graph<T>) -> Var {
    g.constant(Tensor::scalar(T::zero()))
}

pub(crate) fn points<T: Scalar>(g: &Graph<T>, coords: Var) -> Vec<[f64; 2]> {
    g.data(coords)
        .chunks(2)
        .map(|c| [c[0].to_f64_lossy(), c[1].to_f64_lossy()])
        .collect()
}

fn hw<T: Scalar>(g: &Graph<T>, map: Var) -> (usize, usize) {
    let s = g.shape(map);
    (s[s.len() - 2], s[s.len() - 1])
}

/// Mean `‖warped − target‖_p` over the rows of two `[M,2]` tensors.
pub fn reprojection_term<T: Scalar>(g: &mut Graph<T>, warped: Var, targets: Var, p: f64) -> Result<Var> {
    let diff = g.sub(warped, targets)?;
    let dist = g.row_norm(diff, T::lit(p))?;
    g.mean(dist)
}

/// `½(ab + ba)` with a missing half counted as zero.
pub fn symmetric_mean<T: Scalar>(g: &mut Graph<T>, ab: Option<Var>, ba: Option<Var>) -> Result<Var> {
    let sum = match (ab, ba) {
        (Some(a), Some(b)) => g.add(a, b)?,
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => return Ok(zero(g)),
    };
    Ok(g.scale(sum, T::lit(0.5)))
}

/// Symmetric reprojection loss between detected keypoints `[K,2]` of both
/// views, over the ground-truth correspondences of each direction.
pub fn reprojection_loss<T: Scalar>(
    g: &mut Graph<T>,
    coords_a: Var,
    coords_b: Var,
    spec: &WarpSpec,
    cfg: &LossConfig,
) -> Result<Term> {
    let mut halves = [None, None];
    let mut counts = [0, 0];
    for (k, (dir, src, dst)) in [
        (Direction::AToB, coords_a, coords_b),
        (Direction::BToA, coords_b, coords_a),
    ]
    .into_iter()
    .enumerate()
    {
        let corr = assign_correspondences(&points(g, src), &points(g, dst), spec, dir, cfg.th_gt);
        counts[k] = corr.len();
        if corr.is_empty() {
            continue;
        }
        let (warped, idx) = warp_graph(g, src, spec, dir)?.expect("correspondences imply warped points");
        let rows: Vec<usize> = corr
            .iter()
            .map(|c| idx.binary_search(&c.source).expect("source was warped"))
            .collect();
        let targets: Vec<usize> = corr.iter().map(|c| c.target).collect();
        let w = g.index_select(warped, &rows)?;
        let t = g.index_select(dst, &targets)?;
        halves[k] = Some(reprojection_term(g, w, t, cfg.norm_p)?);
    }
    let var = symmetric_mean(g, halves[0], halves[1])?;
    Ok(Term { var, counts })
}

/// `Σ_ij ‖(i,j) − offset‖_p · s′(i,j) / N²` summed over the keypoints of one
/// detection.
fn peak_sum<T: Scalar>(g: &mut Graph<T>, det: &DkdOutput, window: usize, p: f64) -> Result<Var> {
    let k = det.seeds.len();
    let n2 = window * window;
    let grid: Vec<T> = window_grid(window)
        .iter()
        .flat_map(|c| [T::lit(c[0]), T::lit(c[1])])
        .collect();
    let grid = g.constant(Tensor::new(&[1, n2, 2], grid)?);
    let off = g.reshape(det.offsets, &[k, 1, 2])?;
    let diff = g.sub(grid, off)?;
    let diff = g.reshape(diff, &[k * n2, 2])?;
    let dist = g.row_norm(diff, T::lit(p))?;
    let dist = g.reshape(dist, &[k, n2])?;
    let weighted = g.mul(dist, det.weights)?;
    let total = g.sum(weighted);
    Ok(g.scale(total, T::lit(1.0 / n2 as f64)))
}

/// Dispersity peak loss averaged over every keypoint of the given
/// detections; `None` when they hold no keypoints.
pub fn dispersity_peak_loss<T: Scalar>(
    g: &mut Graph<T>,
    detections: &[&DkdOutput],
    window: usize,
    norm_p: f64,
) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    let mut count = 0;
    for det in detections {
        if det.seeds.is_empty() {
            continue;
        }
        count += det.seeds.len();
        let s = peak_sum(g, det, window, norm_p)?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    Ok(total.map(|t| g.scale(t, T::lit(1.0 / count as f64))))
}

/// `[K, H·W]` dot products of query rows `[K,dim]` with every pixel of
/// `desc [1,dim,H,W]`.
pub(crate) fn similarity_rows<T: Scalar>(g: &mut Graph<T>, query: Var, desc: Var) -> Result<Var> {
    let s = g.shape(desc).to_vec();
    let flat = g.reshape(desc, &[s[1], s[2] * s[3]])?;
    g.matmul(query, flat)
}

/// Bilinear reprojection targets of `sources` warped along `dir` into a
/// `width×height` view.
fn nre_targets<T: Scalar>(sources: &[[f64; 2]], spec: &WarpSpec, dir: Direction) -> Vec<SparseTarget<T>> {
    let (w, h) = spec.target_size(dir);
    sources
        .iter()
        .map(|&p| {
            reprojection_probability(warp(p, spec, dir).map(|q| q.p), w, h)
                .into_iter()
                .map(|(bin, wt)| (bin, T::lit(wt)))
                .collect()
        })
        .collect()
}

/// Sum over query rows of the cross-entropy between the reprojection
/// targets and `softmax((C̄ − 1) / t_des)` over the pixels plus the outlier
/// bin.
pub(crate) fn nre_sum<T: Scalar>(
    g: &mut Graph<T>,
    sim: Var,
    sources: &[[f64; 2]],
    spec: &WarpSpec,
    dir: Direction,
    cfg: &LossConfig,
) -> Result<Var> {
    let k = g.shape(sim)[0];
    let outlier = g.constant(Tensor::full(&[k, 1], T::lit(cfg.outlier_bin)));
    let all = g.concat(&[sim, outlier], 1)?;
    let shifted = g.add_scalar(all, -T::one());
    let logits = g.scale(shifted, T::lit(1.0 / cfg.t_des));
    let ce = g.sparse_cross_entropy(logits, nre_targets(sources, spec, dir))?;
    Ok(g.sum(ce))
}

/// Symmetric NRE descriptor loss; keypoints are `[K,2]` positions, maps are
/// `[1,dim,H,W]`. Normalized by the total keypoint count.
pub fn nre_descriptor_loss<T: Scalar>(
    g: &mut Graph<T>,
    (coords_a, desc_a): (Var, Var),
    (coords_b, desc_b): (Var, Var),
    spec: &WarpSpec,
    cfg: &LossConfig,
) -> Result<Var> {
    let qa = sample_descriptors_graph(g, desc_a, coords_a)?;
    let qb = sample_descriptors_graph(g, desc_b, coords_b)?;
    let sim_ab = similarity_rows(g, qa, desc_b)?;
    let sim_ba = similarity_rows(g, qb, desc_a)?;
    let (pa, pb) = (points(g, coords_a), points(g, coords_b));
    let ab = nre_sum(g, sim_ab, &pa, spec, Direction::AToB, cfg)?;
    let ba = nre_sum(g, sim_ba, &pb, spec, Direction::BToA, cfg)?;
    let total = g.add(ab, ba)?;
    Ok(g.scale(total, T::lit(1.0 / (pa.len() + pb.len()).max(1) as f64)))
}

/// Dense matching distribution of one query over the `H·W + 1` bins.
pub fn matching_probability(query: &[f64], map: &DescriptorMap, t_des: f64, outlier_bin: f64) -> Result<Vec<f64>> {
    let sim = crate::detect::similarity_map(query, map, outlier_bin)?;
    let logits: Vec<f64> = sim
        .values
        .iter()
        .chain(std::iter::once(&sim.outlier_bin))
        .map(|c| (c - 1.0) / t_des)
        .collect();
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// NRE of a single query against `map` for a reprojection `p_ab` (`None`
/// is OUT), using only the nonzero target bins.
pub fn nre_value(
    query: &[f64],
    map: &DescriptorMap,
    p_ab: Option<[f64; 2]>,
    t_des: f64,
    outlier_bin: f64,
) -> Result<f64> {
    let sim = crate::detect::similarity_map(query, map, outlier_bin)?;
    let logit = |bin: usize| (sim.values.get(bin).copied().unwrap_or(sim.outlier_bin) - 1.0) / t_des;
    let n = sim.values.len() + 1;
    let top = (0..n).fold(0, |best, b| if logit(b) > logit(best) { b } else { best });
    let m = logit(top);
    // ln(1 + rest) keeps tail mass far below machine epsilon
    let rest: f64 = (0..n).filter(|&b| b != top).map(|b| (logit(b) - m).exp()).sum();
    let lse = m + rest.ln_1p();
    Ok(reprojection_probability(p_ab, map.width(), map.height())
        .into_iter()
        .map(|(bin, w)| -w * (logit(bin) - lse))
        .sum())
}

/// One direction of the reliability loss: the score-weighted mean of
/// `1 − r`, `r` being `exp((C − 1)/t_rel)` sampled at the reprojection.
/// `None` when no keypoint stays in view or the weights vanish.
#[allow(clippy::too_many_arguments)]
pub(crate) fn reliability_side<T: Scalar>(
    g: &mut Graph<T>,
    sim: Var,
    coords: Var,
    scores: Var,
    score_dst: Var,
    spec: &WarpSpec,
    dir: Direction,
    cfg: &LossConfig,
) -> Result<(Option<Var>, usize)> {
    let Some((warped, idx)) = warp_graph(g, coords, spec, dir)? else {
        return Ok((None, 0));
    };
    let (h, w) = hw(g, score_dst);
    let m = idx.len();
    let rows = g.index_select(sim, &idx)?;
    let shifted = g.add_scalar(rows, -T::one());
    let scaled = g.scale(shifted, T::lit(1.0 / cfg.t_rel));
    let reliability = g.exp(scaled);
    let r = g.sample_rows_bilinear(reliability, warped, h, w)?;
    let s_src = g.index_select(scores, &idx)?;
    let s_src = g.reshape(s_src, &[m])?;
    let s_dst = g.sample_bilinear(score_dst, warped)?;
    let s_dst = g.reshape(s_dst, &[m])?;
    let weights = g.mul(s_src, s_dst)?;
    let norm = g.sum(weights);
    if !(g.value(norm).item().expect("scalar").to_f64_lossy() > 0.0) {
        return Ok((None, 0));
    }
    let neg = g.scale(r, -T::one());
    let miss = g.add_scalar(neg, T::one());
    let weighted = g.mul(weights, miss)?;
    let num = g.sum(weighted);
    Ok((Some(g.div(num, norm)?), m))
}

/// Symmetric reliability loss. Keypoints `[K,2]`, descriptor maps
/// `[1,dim,H,W]`, score maps `[1,1,H,W]`; keypoint scores are bilinear
/// samples of the score maps.
pub fn reliability_loss<T: Scalar>(
    g: &mut Graph<T>,
    (coords_a, desc_a, score_a): (Var, Var, Var),
    (coords_b, desc_b, score_b): (Var, Var, Var),
    spec: &WarpSpec,
    cfg: &LossConfig,
) -> Result<Term> {
    let qa = sample_descriptors_graph(g, desc_a, coords_a)?;
    let qb = sample_descriptors_graph(g, desc_b, coords_b)?;
    let sim_ab = similarity_rows(g, qa, desc_b)?;
    let sim_ba = similarity_rows(g, qb, desc_a)?;
    let sa = g.sample_bilinear(score_a, coords_a)?;
    let sb = g.sample_bilinear(score_b, coords_b)?;
    let (ab, na) = reliability_side(g, sim_ab, coords_a, sa, score_b, spec, Direction::AToB, cfg)?;
    let (ba, nb) = reliability_side(g, sim_ba, coords_b, sb, score_a, spec, Direction::BToA, cfg)?;
    let var = symmetric_mean(g, ab, ba)?;
    Ok(Term { var, counts: [na, nb] })
}

/// `w_rp·rp + w_pk·pk + w_rl·rl + w_de·de` on scalar graph values.
pub fn total_loss<T: Scalar>(g: &mut Graph<T>, [rp, pk, rl, de]: [Var; 4], cfg: &LossConfig) -> Result<Var> {
    for v in [rp, pk, rl, de] {
        if g.value(v).len() != 1 {
            return Err(Error::Usage(format!(
                "loss components must be scalars, got {:?}",
                g.shape(v)
            )));
        }
    }
    let a = g.scale(rp, T::lit(cfg.w_rp));
    let b = g.scale(pk, T::lit(cfg.w_pk));
    let c = g.scale(rl, T::lit(cfg.w_rl));
    let d = g.scale(de, T::lit(cfg.w_de));
    let ab = g.add(a, b)?;
    let cd = g.add(c, d)?;
    g.add(ab, cd)
}
