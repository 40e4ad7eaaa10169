use crate::error::{Error, Result};
use crate::maps::ScoreMap;
use crate::tensorgraph::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Odd window side `N` for NMS and softargmax.
    pub window: usize,
    pub t_det: f64,
    /// Scores must be strictly above this.
    pub threshold: f64,
    pub top_k: usize,
    /// Minimum distance of every keypoint from the image border.
    pub margin: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 5,
            t_det: 0.1,
            threshold: 0.2,
            top_k: 5000,
            margin: 2,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.window;
        if n < 3 || n.is_multiple_of(2) {
            return Err(Error::Config(format!("window must be odd and at least 3, got {n}")));
        }
        if !(self.t_det > 0.0) {
            return Err(Error::Config(format!("t_det must be positive, got {}", self.t_det)));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0, 1), got {}",
                self.threshold
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.margin < self.radius() {
            return Err(Error::Config(format!(
                "margin {} is smaller than the window radius {}",
                self.margin,
                self.radius()
            )));
        }
        Ok(())
    }

    pub fn radius(&self) -> usize {
        self.window / 2
    }

    /// Seeds keep this distance from the border so that neither the window
    /// nor the refined keypoint crosses the margin.
    pub fn seed_border(&self) -> usize {
        self.margin + self.radius()
    }
}

/// Sub-pixel keypoint; `u` is the column and `v` the row, pixel centers at
/// integers.
#[derive(Clone, Debug, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub score: f64,
    pub descriptor: Option<Vec<f64>>,
}

impl Keypoint {
    pub fn new(u: f64, v: f64, score: f64) -> Self {
        Self {
            u,
            v,
            score,
            descriptor: None,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.u, self.v]
    }
}

/// Local maxima `(row, col)`, sorted by score descending then row-major,
/// truncated to `top_k`.
///
/// A pixel survives when no pixel of its window (clipped to the image) is
/// larger, no earlier pixel in row-major order ties with it, its score is
/// above the threshold and it lies at least [`DetectorConfig::seed_border`]
/// from every edge.
pub fn nms(score_map: &ScoreMap, cfg: &DetectorConfig) -> Vec<(usize, usize)> {
    let (w, h) = (score_map.width(), score_map.height());
    let (r, border) = (cfg.radius(), cfg.seed_border());
    let s = score_map.data();
    let mut out = Vec::new();
    if w <= 2 * border || h <= 2 * border {
        return out;
    }
    for y in border..h - border {
        for x in border..w - border {
            let c = s[y * w + x];
            if !(c > cfg.threshold) {
                continue;
            }
            let mut keep = true;
            'window: for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    let o = s[yy * w + xx];
                    let earlier = (yy, xx) < (y, x);
                    if o > c || (o == c && earlier) {
                        keep = false;
                        break 'window;
                    }
                }
            }
            if keep {
                out.push((y, x));
            }
        }
    }
    out.sort_by(|a, b| s[b.0 * w + b.1].total_cmp(&s[a.0 * w + a.1]).then(a.cmp(b)));
    out.truncate(cfg.top_k);
    out
}

/// Centered `(dx, dy)` coordinates of an `n×n` window, row-major.
pub fn window_grid(n: usize) -> Vec<[f64; 2]> {
    let r = (n / 2) as f64;
    (0..n * n).map(|i| [(i % n) as f64 - r, (i / n) as f64 - r]).collect()
}

/// `softmax((s − max s) / t_det)` over a row-major `n×n` patch.
pub fn softargmax_weights(patch: &[f64], t_det: f64) -> Vec<f64> {
    let m = patch.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let e: Vec<f64> = patch.iter().map(|&s| ((s - m) / t_det).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Expected centered window coordinate `[dx, dy]` under the softargmax
/// weights of a row-major `n×n` patch.
pub fn softargmax_offset(patch: &[f64], n: usize, t_det: f64) -> [f64; 2] {
    assert_eq!(patch.len(), n * n, "patch must hold n² scores");
    let wts = softargmax_weights(patch, t_det);
    let mut off = [0.0; 2];
    for (wt, c) in wts.iter().zip(window_grid(n)) {
        off[0] += wt * c[0];
        off[1] += wt * c[1];
    }
    off
}

fn patch(score_map: &ScoreMap, (row, col): (usize, usize), n: usize) -> Vec<f64> {
    let r = n / 2;
    let mut p = Vec::with_capacity(n * n);
    for y in row - r..=row + r {
        for x in col - r..=col + r {
            p.push(score_map.get(x, y));
        }
    }
    p
}

/// NMS seeds refined by the softargmax offset; scores are bilinear samples
/// at the refined position.
pub fn detect_keypoints(score_map: &ScoreMap, cfg: &DetectorConfig) -> Vec<Keypoint> {
    refine_seeds(score_map, &nms(score_map, cfg), cfg)
}

/// Softargmax refinement of given `(row, col)` seeds, which must keep
/// [`DetectorConfig::seed_border`] from every edge.
pub fn refine_seeds(score_map: &ScoreMap, seeds: &[(usize, usize)], cfg: &DetectorConfig) -> Vec<Keypoint> {
    seeds
        .iter()
        .map(|&seed| {
            let [dx, dy] = softargmax_offset(&patch(score_map, seed, cfg.window), cfg.window, cfg.t_det);
            let (u, v) = (seed.1 as f64 + dx, seed.0 as f64 + dy);
            let score = score_map.sample(u, v).expect("seed border keeps keypoints inside");
            Keypoint::new(u, v, score)
        })
        .collect()
}

/// Graph form of the detector for a fixed seed set.
#[derive(Clone, Debug)]
pub struct DkdOutput {
    pub seeds: Vec<(usize, usize)>,
    /// `[K, N²]` softmax weights of each window.
    pub weights: Var,
    /// `[K, 2]` centered offsets `(dx, dy)`.
    pub offsets: Var,
    /// `[K, 2]` keypoint positions `(u, v)`.
    pub coords: Var,
    /// `[K, 1]` scores sampled at `coords`.
    pub scores: Var,
}

/// Builds softargmax refinement of `seeds` on `score [1,1,H,W]`.
pub fn dkd_graph<T: Scalar>(
    g: &mut Graph<T>,
    score: Var,
    seeds: &[(usize, usize)],
    cfg: &DetectorConfig,
) -> Result<DkdOutput> {
    if seeds.is_empty() {
        return Err(Error::Usage("dkd_graph needs at least one seed".into()));
    }
    let n = cfg.window;
    let windows = g.gather_windows(score, seeds, n)?;
    let sharpened = g.scale(windows, T::lit(1.0 / cfg.t_det));
    let weights = g.softmax(sharpened, 1)?;
    let grid: Vec<T> = window_grid(n)
        .iter()
        .flat_map(|c| [T::lit(c[0]), T::lit(c[1])])
        .collect();
    let grid = g.constant(Tensor::new(&[n * n, 2], grid)?);
    let offsets = g.matmul(weights, grid)?;
    let base: Vec<T> = seeds
        .iter()
        .flat_map(|&(row, col)| [T::lit(col as f64), T::lit(row as f64)])
        .collect();
    let base = g.constant(Tensor::new(&[seeds.len(), 2], base)?);
    let coords = g.add(base, offsets)?;
    let scores = g.sample_bilinear(score, coords)?;
    Ok(DkdOutput {
        seeds: seeds.to_vec(),
        weights,
        offsets,
        coords,
        scores,
    })
}

/// Reads the keypoints held by a graph detection.
pub fn keypoints_from_graph<T: Scalar>(g: &Graph<T>, out: &DkdOutput) -> Vec<Keypoint> {
    g.data(out.coords)
        .chunks(2)
        .zip(g.data(out.scores))
        .map(|(c, s)| Keypoint::new(c[0].to_f64_lossy(), c[1].to_f64_lossy(), s.to_f64_lossy()))
        .collect()
}
