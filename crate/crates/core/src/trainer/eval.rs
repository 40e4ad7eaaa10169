use super::config::TrainConfig;
use super::train::{held_out_seed, synthetic_pair};
use crate::backbone::Model;
use crate::detect::DetectorConfig;
use crate::error::Result;
use crate::matchmetrics::RansacConfig;
use crate::pipeline::{evaluate_pair, extract, PairEvaluation};
use crate::tensorgraph::Scalar;

/// Aggregate matching quality over held-out synthetic pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub pairs: usize,
    /// Matches pooled over all pairs.
    pub matches: usize,
    /// Mean reprojection distance of the pooled matches within the
    /// correspondence threshold.
    pub reprojection_error: Option<f64>,
    /// Per-pair means; pairs with an undefined value are left out.
    pub rep: Option<f64>,
    pub ms: Option<f64>,
    pub mma: [Option<f64>; 3],
    /// Fraction of pairs whose estimated homography is correct at 1, 2 and
    /// 3 pixels.
    pub mha: [f64; 3],
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (s, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Evaluates `model` on `n_pairs` held-out pairs of `cfg`'s generator.
pub fn evaluate_held_out<T: Scalar>(
    model: &Model<T>,
    cfg: &TrainConfig,
    n_pairs: usize,
    det: &DetectorConfig,
    ransac: &RansacConfig,
) -> Result<(EvalSummary, Vec<PairEvaluation>)> {
    let mut evals = Vec::with_capacity(n_pairs);
    let (mut err_sum, mut err_n) = (0.0, 0usize);
    for i in 0..n_pairs {
        let pair = synthetic_pair(cfg, held_out_seed(cfg.seed, i as u64))?;
        let fa = extract(model, &pair.image_a, det)?;
        let fb = extract(model, &pair.image_b, det)?;
        let e = evaluate_pair(&fa, &fb, &pair.homography, cfg.loss.th_gt, Some(ransac))?;
        if let Some(r) = e.reprojection_error {
            err_sum += r * e.reprojection_count as f64;
            err_n += e.reprojection_count;
        }
        evals.push(e);
    }
    let summary = EvalSummary {
        pairs: n_pairs,
        matches: evals.iter().map(|e| e.matches.len()).sum(),
        reprojection_error: (err_n > 0).then(|| err_sum / err_n as f64),
        rep: mean(evals.iter().map(|e| e.counts.rep)),
        ms: mean(evals.iter().map(|e| e.counts.ms)),
        mma: [0, 1, 2].map(|k| mean(evals.iter().map(|e| e.counts.mma[k]))),
        mha: [0, 1, 2].map(|k| {
            let ok = evals.iter().filter(|e| e.mha.is_some_and(|m| m[k])).count();
            if n_pairs == 0 {
                0.0
            } else {
                ok as f64 / n_pairs as f64
            }
        }),
    };
    Ok((summary, evals))
}
