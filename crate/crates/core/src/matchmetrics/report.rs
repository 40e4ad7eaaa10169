use std::io::Write;

use super::MetricCounts;

/// Metrics of one evaluated pair; `mha` is present when a homography was
/// estimated (`Some(false)` entries for a failed estimate).
#[derive(Clone, Debug, PartialEq)]
pub struct PairMetrics {
    pub id: String,
    pub counts: MetricCounts,
    pub mha: Option<[bool; 3]>,
}

const HEADER: &str =
    "pair,n_cov,n_gt,n_putative,n_inlier@1,n_inlier@2,n_inlier@3,rep,ms,mma@1,mma@2,mma@3,mha@1,mha@2,mha@3";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// One row per pair and a final `mean` row; undefined values are empty
/// cells and are left out of the means.
pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[PairMetrics]) -> std::io::Result<()> {
    writeln!(out, "{HEADER}")?;
    let mha = |r: &PairMetrics, k: usize| r.mha.map(|m| if m[k] { 1.0 } else { 0.0 });
    for r in rows {
        let c = &r.counts;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.id,
            c.n_cov,
            c.n_gt,
            c.n_putative,
            c.n_inlier[0],
            c.n_inlier[1],
            c.n_inlier[2],
            opt(c.rep),
            opt(c.ms),
            opt(c.mma[0]),
            opt(c.mma[1]),
            opt(c.mma[2]),
            opt(mha(r, 0)),
            opt(mha(r, 1)),
            opt(mha(r, 2)),
        )?;
    }
    let col = |f: &dyn Fn(&PairMetrics) -> Option<f64>| opt(mean(rows.iter().map(f)));
    let mut cells = vec!["mean".to_owned()];
    cells.push(col(&|r| Some(r.counts.n_cov)));
    cells.push(col(&|r| Some(r.counts.n_gt)));
    cells.push(col(&|r| Some(r.counts.n_putative as f64)));
    for k in 0..3 {
        cells.push(col(&|r| Some(r.counts.n_inlier[k] as f64)));
    }
    cells.push(col(&|r| r.counts.rep));
    cells.push(col(&|r| r.counts.ms));
    for k in 0..3 {
        cells.push(col(&|r| r.counts.mma[k]));
    }
    for k in 0..3 {
        cells.push(col(&|r| mha(r, k)));
    }
    writeln!(out, "{}", cells.join(","))
}
