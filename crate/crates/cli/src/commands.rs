use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use alikekit::backbone::{count_flops, count_params, receptive_field, Model, ModelConfig};
use alikekit::detect::{read_keypoints, write_keypoints, DetectorConfig};
use alikekit::geometry::{format_homography, read_homography};
use alikekit::imageio::{read_pnm, write_pnm};
use alikekit::matchmetrics::{mutual_match, write_metrics_csv, PairMetrics, RansacConfig};
use alikekit::pipeline::{evaluate_pair, extract};
use alikekit::trainer::{generate_pair, train, TrainConfig};
use alikekit::Error;

use crate::viz::side_by_side;

/// Failure of a command; usage errors exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Usage(_)) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn detector(top_k: usize, threshold: f64) -> Result<DetectorConfig> {
    let det = DetectorConfig {
        top_k,
        threshold,
        ..DetectorConfig::default()
    };
    det.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(det)
}

pub fn model_info(name: &str) -> Result<()> {
    let cfg = ModelConfig::preset(name).ok_or_else(|| CliError::Usage(format!("unknown preset `{name}`")))?;
    let params = count_params(&cfg);
    let gflops = count_flops(&cfg, 640, 480) as f64 / 1e9;
    println!("name: {}", cfg.name);
    println!("channels: {:?} dim: {}", cfg.channels(), cfg.dim);
    println!("params: {params} ({:.3}M)", params as f64 / 1e6);
    println!("gflops@640x480: {gflops:.3}");
    println!("receptive_field: {}", receptive_field(&cfg));
    Ok(())
}

pub fn detect(image: &Path, checkpoint: &Path, top_k: usize, threshold: f64, out: &Path) -> Result<()> {
    let det = detector(top_k, threshold)?;
    let model = Model::<f32>::load(checkpoint)?;
    let img = read_pnm(image)?;
    let features = extract(&model, &img, &det)?;
    let mut w = create(out)?;
    write_keypoints(&mut w, &features.keypoints, features.dim)
        .and_then(|_| w.flush())
        .map_err(io_err(out))?;
    eprintln!("{} keypoints -> {}", features.keypoints.len(), out.display());
    Ok(())
}

pub fn match_files(kpts_a: &Path, kpts_b: &Path, viz: Option<(PathBuf, PathBuf, PathBuf)>, out: &Path) -> Result<()> {
    let a = read_keypoints(kpts_a)?;
    let b = read_keypoints(kpts_b)?;
    if a.dim != b.dim {
        return Err(CliError::Data(format!(
            "descriptor dimensions differ: {} has {}, {} has {}",
            kpts_a.display(),
            a.dim,
            kpts_b.display(),
            b.dim
        )));
    }
    let desc = |f: &alikekit::detect::KeypointFile| -> Vec<Vec<f64>> {
        f.keypoints
            .iter()
            .map(|k| k.descriptor.clone().unwrap_or_else(|| vec![0.0; f.dim]))
            .collect()
    };
    let matches = mutual_match(&desc(&a), &desc(&b));
    let mut w = create(out)?;
    for m in &matches.pairs {
        writeln!(w, "{} {} {:.6}", m.a, m.b, m.similarity).map_err(io_err(out))?;
    }
    w.flush().map_err(io_err(out))?;
    if let Some((img_a, img_b, viz_out)) = viz {
        let (ia, ib) = (read_pnm(&img_a)?, read_pnm(&img_b)?);
        let lines: Vec<([f64; 2], [f64; 2])> = matches
            .pairs
            .iter()
            .map(|m| (a.keypoints[m.a].position(), b.keypoints[m.b].position()))
            .collect();
        write_pnm(&viz_out, &side_by_side(&ia, &ib, &lines))?;
    }
    eprintln!("{} matches -> {}", matches.len(), out.display());
    Ok(())
}

struct ManifestEntry {
    line: usize,
    image_a: PathBuf,
    image_b: PathBuf,
    homography: PathBuf,
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [a, b, h] = fields[..] else {
            return Err(CliError::Data(format!(
                "{}:{}: expected `imageA imageB homographyFile`",
                path.display(),
                i + 1
            )));
        };
        entries.push(ManifestEntry {
            line: i + 1,
            image_a: base.join(a),
            image_b: base.join(b),
            homography: base.join(h),
        });
    }
    if entries.is_empty() {
        return Err(CliError::Data(format!("{}: manifest lists no pairs", path.display())));
    }
    Ok(entries)
}

fn pair_id(e: &ManifestEntry) -> String {
    let dir = |p: &Path| {
        p.parent()
            .and_then(|d| d.file_name())
            .map(|n| n.to_string_lossy().into_owned())
    };
    match (dir(&e.image_a), dir(&e.image_b)) {
        (Some(a), Some(b)) if a == b && !a.contains(',') => a,
        _ => format!("line{}", e.line),
    }
}

pub fn eval_homography(
    manifest: &Path,
    checkpoint: &Path,
    out: &Path,
    estimate: bool,
    top_k: usize,
    threshold: f64,
) -> Result<()> {
    let det = detector(top_k, threshold)?;
    let entries = read_manifest(manifest)?;
    let model = Model::<f32>::load(checkpoint)?;
    let ransac = RansacConfig::default();
    let mut rows = Vec::new();
    for e in &entries {
        let evaluated = (|| -> std::result::Result<PairMetrics, Error> {
            let h = read_homography(&e.homography)?;
            let fa = extract(&model, &read_pnm(&e.image_a)?, &det)?;
            let fb = extract(&model, &read_pnm(&e.image_b)?, &det)?;
            let ev = evaluate_pair(&fa, &fb, &h, 5.0, estimate.then_some(&ransac))?;
            Ok(PairMetrics {
                id: pair_id(e),
                counts: ev.counts,
                mha: ev.mha,
            })
        })();
        match evaluated {
            Ok(row) => rows.push(row),
            Err(err) => eprintln!("skipping manifest line {}: {err}", e.line),
        }
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!(
            "no pair of {} could be evaluated",
            manifest.display()
        )));
    }
    let mut w = create(out)?;
    write_metrics_csv(&mut w, &rows)
        .and_then(|_| w.flush())
        .map_err(io_err(out))?;
    eprintln!(
        "evaluated {} of {} pairs -> {}",
        rows.len(),
        entries.len(),
        out.display()
    );
    Ok(())
}

pub fn train_toy(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = match config {
        Some(p) => TrainConfig::read(p)?,
        None => TrainConfig::default(),
    };
    let outcome = train(&cfg, Some(out))?;
    if let Some(last) = outcome.curve.last() {
        eprintln!("step {} total loss {:.6}", last.step, last.total);
    }
    eprintln!(
        "model written to {}",
        out.join(alikekit::trainer::TrainFiles::FINAL).display()
    );
    Ok(())
}

pub fn synth_gen(seed: u64, count: usize, width: usize, height: usize, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    for i in 0..count {
        let pair = generate_pair(seed.wrapping_add(i as u64), width, height).map_err(|e| match e {
            Error::Input(m) => CliError::Usage(m),
            other => CliError::Core(other),
        })?;
        let dir = out.join(format!("pair_{i:04}"));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_pnm(&dir.join("imageA.ppm"), &pair.image_a)?;
        write_pnm(&dir.join("imageB.ppm"), &pair.image_b)?;
        let h_path = dir.join("H.txt");
        fs::write(&h_path, format_homography(&pair.homography)).map_err(io_err(&h_path))?;
    }
    eprintln!("{count} pairs -> {}", out.display());
    Ok(())
}
