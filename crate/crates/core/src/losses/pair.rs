use super::terms::{nre_sum, points, reliability_side, similarity_rows, symmetric_mean};
use super::{dispersity_peak_loss, reprojection_loss, total_loss, LossConfig, LossReport};
use crate::detect::{sample_descriptors_graph, DetectorConfig, DkdOutput};
use crate::error::Result;
use crate::geometry::{Direction, WarpSpec};
use crate::tensorgraph::{Graph, Scalar, Tensor, Var};

/// Network outputs and keypoints of one image on the graph.
#[derive(Clone, Debug)]
pub struct ViewGraph {
    /// `[1,1,H,W]`.
    pub score: Var,
    /// `[1,dim,H,W]`.
    pub desc: Var,
    /// Detected keypoints; they enter every term.
    pub detected: Option<DkdOutput>,
    /// Extra positions that enter only the descriptor and reliability terms.
    pub random: Vec<[f64; 2]>,
}

impl ViewGraph {
    /// `[K,2]` positions of the detected then random keypoints.
    fn all_coords<T: Scalar>(&self, g: &mut Graph<T>) -> Result<Option<Var>> {
        let random = (!self.random.is_empty())
            .then(|| {
                let data = self.random.iter().flat_map(|p| [T::lit(p[0]), T::lit(p[1])]).collect();
                Tensor::new(&[self.random.len(), 2], data).map(|t| g.constant(t))
            })
            .transpose()?;
        Ok(match (self.detected.as_ref().map(|d| d.coords), random) {
            (Some(d), Some(r)) => Some(g.concat(&[d, r], 0)?),
            (d, r) => d.or(r),
        })
    }
}

#[derive(Clone, Debug)]
pub struct PairLoss {
    pub total: Var,
    pub components: [Var; 4],
    pub report: LossReport,
}

/// All four losses of an image pair and their weighted total.
pub fn pair_loss<T: Scalar>(
    g: &mut Graph<T>,
    a: &ViewGraph,
    b: &ViewGraph,
    spec: &WarpSpec,
    det: &DetectorConfig,
    cfg: &LossConfig,
) -> Result<PairLoss> {
    let mut warnings = Vec::new();
    let zero = |g: &mut Graph<T>| g.constant(Tensor::scalar(T::zero()));

    let (rp, matched) = match (&a.detected, &b.detected) {
        (Some(da), Some(db)) => {
            let term = reprojection_loss(g, da.coords, db.coords, spec, cfg)?;
            for d in term.empty_directions() {
                warnings.push(format!("reprojection: no correspondences {d:?}"));
            }
            (term.var, term.counts)
        }
        _ => {
            warnings.push("reprojection: no detections".into());
            (zero(g), [0, 0])
        }
    };

    let dets: Vec<&DkdOutput> = [&a.detected, &b.detected].into_iter().flatten().collect();
    let pk = match dispersity_peak_loss(g, &dets, det.window, cfg.norm_p)? {
        Some(v) => v,
        None => {
            warnings.push("peak: no detections".into());
            zero(g)
        }
    };

    let (ca, cb) = (a.all_coords(g)?, b.all_coords(g)?);
    let mut nre_total: Option<Var> = None;
    let mut count = 0;
    let mut rel = [None, None];
    for (k, (dir, src, coords, dst)) in [(Direction::AToB, a, ca, b), (Direction::BToA, b, cb, a)]
        .into_iter()
        .enumerate()
    {
        let Some(coords) = coords else { continue };
        let pts = points(g, coords);
        count += pts.len();
        let query = sample_descriptors_graph(g, src.desc, coords)?;
        let sim = similarity_rows(g, query, dst.desc)?;
        let nre = nre_sum(g, sim, &pts, spec, dir, cfg)?;
        nre_total = Some(match nre_total {
            Some(t) => g.add(t, nre)?,
            None => nre,
        });
        let scores = g.sample_bilinear(src.score, coords)?;
        let (side, _) = reliability_side(g, sim, coords, scores, dst.score, spec, dir, cfg)?;
        if side.is_none() {
            warnings.push(format!("reliability: no weighted keypoints {dir:?}"));
        }
        rel[k] = side;
    }
    let de = match nre_total {
        Some(t) => g.scale(t, T::lit(1.0 / count as f64)),
        None => {
            warnings.push("descriptor: no keypoints".into());
            zero(g)
        }
    };
    let rl = symmetric_mean(g, rel[0], rel[1])?;

    let components = [rp, pk, rl, de];
    let total = total_loss(g, components, cfg)?;
    let value = |g: &Graph<T>, v: Var| g.value(v).item().expect("scalar").to_f64_lossy();
    let mut report = LossReport::from_components(components.map(|v| value(g, v)), cfg);
    report.total = value(g, total);
    report.matched = matched;
    report.warnings = warnings;
    Ok(PairLoss {
        total,
        components,
        report,
    })
}
