use crate::detect::sample_descriptors_graph;
use crate::error::Result;
use crate::geometry::{warp, Direction, WarpSpec};
use crate::tensorgraph::{Graph, Scalar, Tensor, Var};

/// Margin triplet loss over keypoints of one direction that stay in view.
///
/// The anchor is the source descriptor, the positive the target descriptor
/// at the warped position, and the negative the most similar positive of a
/// different anchor. Distances are Euclidean between unit descriptors.
/// Returns `None` with fewer than two in-view keypoints.
pub fn triplet_loss<T: Scalar>(
    g: &mut Graph<T>,
    (coords, desc): (Var, Var),
    target_desc: Var,
    spec: &WarpSpec,
    dir: Direction,
    margin: f64,
) -> Result<Option<Var>> {
    let pts = g
        .data(coords)
        .chunks(2)
        .map(|c| [c[0].to_f64_lossy(), c[1].to_f64_lossy()]);
    let (mut keep, mut warped) = (Vec::new(), Vec::new());
    for (i, p) in pts.enumerate() {
        if let Some(w) = warp(p, spec, dir) {
            keep.push(i);
            warped.extend([T::lit(w.p[0]), T::lit(w.p[1])]);
        }
    }
    let m = keep.len();
    if m < 2 {
        return Ok(None);
    }
    let anchor_coords = g.index_select(coords, &keep)?;
    let anchors = sample_descriptors_graph(g, desc, anchor_coords)?;
    let warped = g.constant(Tensor::new(&[m, 2], warped)?);
    let positives = sample_descriptors_graph(g, target_desc, warped)?;

    let sims = g.matmul_t(anchors, false, positives, true)?;
    let hardest: Vec<usize> = g
        .data(sims)
        .chunks(m)
        .enumerate()
        .map(|(i, row)| {
            let mut best = if i == 0 { 1 } else { 0 };
            for (j, s) in row.iter().enumerate() {
                if j != i && s.to_f64_lossy() > row[best].to_f64_lossy() {
                    best = j;
                }
            }
            best
        })
        .collect();
    let negatives = g.index_select(positives, &hardest)?;

    let d_pos = unit_distance(g, anchors, positives)?;
    let d_neg = unit_distance(g, anchors, negatives)?;
    let gap = g.sub(d_pos, d_neg)?;
    let shifted = g.add_scalar(gap, T::lit(margin));
    let hinge = g.relu(shifted);
    Ok(Some(g.mean(hinge)?))
}

/// `sqrt(2 − 2 a·b + ε)` per row.
fn unit_distance<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let prod = g.mul(a, b)?;
    let dot = g.sum_axis(prod, 1)?;
    let sq = g.scale(dot, T::lit(-2.0));
    let sq = g.add_scalar(sq, T::lit(2.0 + 1e-8));
    let sq = g.relu(sq);
    Ok(g.sqrt(sq))
}
