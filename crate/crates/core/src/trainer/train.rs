use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamConfig};
use super::config::{DescriptorMode, TrainConfig};
use super::sampling::sample_training_keypoints;
use super::synth::{generate_pair_with, SynthConfig, SyntheticPair};
use super::triplet::triplet_loss;
use crate::backbone::Model;
use crate::detect::dkd_graph;
use crate::error::{Error, Result};
use crate::geometry::{Direction, WarpSpec};
use crate::losses::{pair_loss, symmetric_mean, LossReport, PairLoss, ViewGraph};
use crate::maps::ScoreMap;
use crate::tensorgraph::{Graph, Scalar, Var};
use crate::textfmt::fmt_sig;

/// Seed of the `index`-th training pair.
pub fn pair_seed(seed: u64, index: u64) -> u64 {
    splitmix(splitmix(seed) ^ index)
}

/// Seed of the `index`-th held-out pair, disjoint in practice from the
/// training stream.
pub fn held_out_seed(seed: u64, index: u64) -> u64 {
    splitmix(splitmix(seed ^ 0x5e_ed0f_e7a1) ^ (index | 1 << 63))
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The synthetic pair a training or evaluation seed stands for.
pub fn synthetic_pair(cfg: &TrainConfig, seed: u64) -> Result<SyntheticPair> {
    generate_pair_with(
        seed,
        &SynthConfig {
            photometric: cfg.photometric,
            ..SynthConfig::new(cfg.width, cfg.height)
        },
    )
}

/// Builds the training objective of one pair on `g`.
///
/// Salient keypoints come from NMS on the current score maps and are refined
/// on the graph; non-salient positions are drawn from a stream seeded by the
/// pair seed.
pub fn pair_objective<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<T>,
    params: &[Var],
    pair: &SyntheticPair,
    cfg: &TrainConfig,
) -> Result<PairLoss> {
    let spec = WarpSpec::homography(
        pair.homography,
        (cfg.width, cfg.height),
        (pair.image_b.width(), pair.image_b.height()),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(pair.seed ^ 0x6b65_7970_6f69_6e74);
    let mut views = Vec::with_capacity(2);
    for image in [&pair.image_a, &pair.image_b] {
        let input = g.constant(image.to_tensor());
        let out = model.forward_graph(g, input, params)?;
        let [_, _, h, w] = g.shape(out.score).try_into().expect("score map is rank 4");
        let values = g.data(out.score).iter().map(|v| v.to_f64_lossy()).collect();
        let map = ScoreMap::new(w, h, values)?;
        let kps = sample_training_keypoints(&map, &cfg.detector, cfg.n_random, &mut rng);
        if let Some(w) = &kps.warning {
            log::debug!("pair {}: {w}", pair.seed);
        }
        let detected = if kps.seeds.is_empty() {
            None
        } else {
            Some(dkd_graph(g, out.score, &kps.seeds, &cfg.detector)?)
        };
        views.push(ViewGraph {
            score: out.score,
            desc: out.desc,
            detected,
            random: kps.random,
        });
    }
    let (a, b) = (&views[0], &views[1]);
    match cfg.descriptor_mode {
        DescriptorMode::Nre => pair_loss(g, a, b, &spec, &cfg.detector, &cfg.loss),
        DescriptorMode::Triplet => {
            let without_nre = crate::losses::LossConfig {
                w_de: 0.0,
                ..cfg.loss.clone()
            };
            let mut loss = pair_loss(g, a, b, &spec, &cfg.detector, &without_nre)?;
            let mut sides = [None, None];
            for (k, (dir, src, dst)) in [(Direction::AToB, a, b), (Direction::BToA, b, a)]
                .into_iter()
                .enumerate()
            {
                if let Some(d) = &src.detected {
                    sides[k] = triplet_loss(g, (d.coords, src.desc), dst.desc, &spec, dir, cfg.triplet_margin)?;
                }
            }
            let de = symmetric_mean(g, sides[0], sides[1])?;
            let weighted = g.scale(de, T::lit(cfg.loss.w_de));
            loss.total = g.add(loss.total, weighted)?;
            loss.components[3] = de;
            loss.report.de = g.value(de).item().expect("scalar").to_f64_lossy();
            loss.report.total = g.value(loss.total).item().expect("scalar").to_f64_lossy();
            Ok(loss)
        }
    }
}

/// Loss report and parameter gradients of `scale · loss` for one pair.
#[derive(Clone, Debug)]
pub struct PairGradient {
    pub report: LossReport,
    pub grads: Vec<Vec<f64>>,
}

pub fn pair_gradient<T: Scalar>(
    model: &Model<T>,
    pair: &SyntheticPair,
    cfg: &TrainConfig,
    scale: f64,
) -> Result<PairGradient> {
    let mut g = Graph::new();
    let params = model.bind(&mut g, true);
    let loss = pair_objective(&mut g, model, &params, pair, cfg)?;
    let report = loss.report;
    if !report.total.is_finite() {
        return Ok(PairGradient {
            report,
            grads: Vec::new(),
        });
    }
    let root = g.scale(loss.total, T::lit(scale));
    g.backward(root)?;
    let grads = params
        .iter()
        .map(|&p| match g.grad(p) {
            Some(gr) => gr.iter().map(|v| v.to_f64_lossy()).collect(),
            None => vec![0.0; g.value(p).len()],
        })
        .collect();
    Ok(PairGradient { report, grads })
}

/// One row of the loss curve: the learning rate used and the mean pair
/// losses of the accumulation window.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub step: usize,
    pub lr: f64,
    pub rp: f64,
    pub pk: f64,
    pub rl: f64,
    pub de: f64,
    pub total: f64,
}

impl CurveRow {
    pub const HEADER: &'static str = "step,lr,rp,pk,rl,de,total";

    pub fn to_csv(&self) -> String {
        let f = |x: f64| fmt_sig(x, 9);
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            f(self.lr),
            f(self.rp),
            f(self.pk),
            f(self.rl),
            f(self.de),
            f(self.total)
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub curve: Vec<CurveRow>,
}

/// Mean of the last `window` totals ending at row `end` (exclusive).
pub fn moving_average(curve: &[CurveRow], end: usize, window: usize) -> Option<f64> {
    let end = end.min(curve.len());
    let start = end.saturating_sub(window);
    (end > start).then(|| curve[start..end].iter().map(|r| r.total).sum::<f64>() / (end - start) as f64)
}

/// Files written by [`train`] into its output directory.
pub struct TrainFiles;

impl TrainFiles {
    pub const CURVE: &'static str = "loss.csv";
    pub const FINAL: &'static str = "model.ckpt";
    pub const CONFIG: &'static str = "train.cfg";
    pub const DUMP: &'static str = "nonfinite.txt";

    pub fn checkpoint(step: usize) -> String {
        format!("step_{step:06}.ckpt")
    }
}

struct Output {
    dir: PathBuf,
    curve: BufWriter<File>,
    kept: Vec<PathBuf>,
}

impl Output {
    fn create(dir: &Path, cfg: &TrainConfig) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join(TrainFiles::CONFIG);
        fs::write(&cfg_path, cfg.to_kv()).map_err(|e| Error::io(&cfg_path, e))?;
        let path = dir.join(TrainFiles::CURVE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut curve = BufWriter::new(file);
        writeln!(curve, "{}", CurveRow::HEADER).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            curve,
            kept: Vec::new(),
        })
    }

    fn row(&mut self, row: &CurveRow) -> Result<()> {
        let path = self.dir.join(TrainFiles::CURVE);
        writeln!(self.curve, "{}", row.to_csv())
            .and_then(|_| self.curve.flush())
            .map_err(|e| Error::io(path, e))
    }

    fn checkpoint(&mut self, model: &Model<f32>, step: usize, keep: usize) -> Result<()> {
        let path = self.dir.join(TrainFiles::checkpoint(step));
        model.save(&path)?;
        self.kept.push(path);
        while self.kept.len() > keep {
            let old = self.kept.remove(0);
            fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
        }
        Ok(())
    }

    fn dump(&self, step: usize, seed: u64, report: &LossReport) {
        let path = self.dir.join(TrainFiles::DUMP);
        let text = format!(
            "step = {step}\npair_seed = {seed}\nrp = {}\npk = {}\nrl = {}\nde = {}\ntotal = {}\nwarnings = {:?}\n",
            report.rp, report.pk, report.rl, report.de, report.total, report.warnings
        );
        if let Err(e) = fs::write(&path, text) {
            log::error!("{}: {e}", path.display());
        }
    }
}

/// Trains a fresh model from `cfg.seed` and returns it with its loss curve;
/// with `out`, also writes the curve, periodic checkpoints and the final
/// model there.
pub fn train(cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Model::<f32>::init(&cfg.model, cfg.seed);
    train_from(cfg, model, out)
}

/// Continues training `model` with the schedule of `cfg` from step 0.
pub fn train_from(cfg: &TrainConfig, mut model: Model<f32>, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut output = out.map(|d| Output::create(d, cfg)).transpose()?;
    let sizes: Vec<usize> = model.params().iter().map(|(_, t)| t.len()).collect();
    let mut adam = Adam::new(AdamConfig::default(), &sizes);
    let mut curve = Vec::with_capacity(cfg.steps);
    let scale = 1.0 / cfg.accumulation as f64;

    for step in 1..=cfg.steps {
        let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        let mut sums = [0.0; 5];
        for k in 0..cfg.accumulation {
            let seed = pair_seed(cfg.seed, ((step - 1) * cfg.accumulation + k) as u64);
            let pair = synthetic_pair(cfg, seed)?;
            let pg = pair_gradient(&model, &pair, cfg, scale)?;
            let finite = pg.report.total.is_finite() && pg.grads.iter().flatten().all(|v| v.is_finite());
            if !finite {
                if let Some(o) = &output {
                    o.dump(step, seed, &pg.report);
                }
                return Err(Error::NonFinite { step, pair_seed: seed });
            }
            for (acc, g) in grads.iter_mut().zip(&pg.grads) {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            let r = &pg.report;
            for (s, v) in sums.iter_mut().zip([r.rp, r.pk, r.rl, r.de, r.total]) {
                *s += v;
            }
        }
        let lr = cfg.learning_rate(step);
        adam.step(model.params_mut(), &grads, lr);
        let [rp, pk, rl, de, total] = sums.map(|s| s * scale);
        let row = CurveRow {
            step,
            lr,
            rp,
            pk,
            rl,
            de,
            total,
        };
        if step % 50 == 0 || step == 1 {
            log::info!("step {step}: {}", row.to_csv());
        }
        if let Some(o) = &mut output {
            o.row(&row)?;
            if step % cfg.checkpoint_every == 0 {
                o.checkpoint(&model, step, cfg.keep_checkpoints)?;
            }
        }
        curve.push(row);
    }
    if let Some(o) = &output {
        model.save(&o.dir.join(TrainFiles::FINAL))?;
    }
    Ok(TrainOutcome { model, curve })
}
