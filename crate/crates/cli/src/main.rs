//! `alikekit` command-line front end.

mod commands;
mod viz;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "alikekit",
    version,
    about = "Learned keypoint detection, description and matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print parameter count, GFLOPs at 640×480 and receptive field of a preset.
    ModelInfo {
        #[arg(long, value_parser = ["tiny", "small", "normal", "large"])]
        config: String,
    },
    /// Detect and describe keypoints in a PGM/PPM image.
    Detect {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5000)]
        top_k: usize,
        #[arg(long, default_value_t = 0.2)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mutual nearest-neighbour matching of two keypoint files.
    Match {
        #[arg(long)]
        kpts_a: PathBuf,
        #[arg(long)]
        kpts_b: PathBuf,
        #[arg(long, requires_all = ["image_b", "viz_out"])]
        image_a: Option<PathBuf>,
        #[arg(long, requires_all = ["image_a", "viz_out"])]
        image_b: Option<PathBuf>,
        /// Side-by-side PPM with a line per match.
        #[arg(long, requires_all = ["image_a", "image_b"])]
        viz_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeatability, matching score and accuracy over a manifest of pairs.
    EvalHomography {
        /// Lines of `imageA imageB homographyFile`, relative to the manifest.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also estimate a homography with RANSAC and report MHA.
        #[arg(long)]
        estimate: bool,
        #[arg(long, default_value_t = 5000)]
        top_k: usize,
        #[arg(long, default_value_t = 0.2)]
        threshold: f64,
    },
    /// Train a model on synthetic pairs.
    TrainToy {
        /// `key = value` training configuration; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic pairs as `pair_NNNN/{imageA.ppm,imageB.ppm,H.txt}`.
    SynthGen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 96)]
        width: usize,
        #[arg(long, default_value_t = 96)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ModelInfo { config } => commands::model_info(&config),
        Command::Detect {
            image,
            checkpoint,
            top_k,
            threshold,
            out,
        } => commands::detect(&image, &checkpoint, top_k, threshold, &out),
        Command::Match {
            kpts_a,
            kpts_b,
            image_a,
            image_b,
            viz_out,
            out,
        } => {
            let viz = match (image_a, image_b, viz_out) {
                (Some(a), Some(b), Some(v)) => Some((a, b, v)),
                _ => None,
            };
            commands::match_files(&kpts_a, &kpts_b, viz, &out)
        }
        Command::EvalHomography {
            pairs,
            checkpoint,
            out,
            estimate,
            top_k,
            threshold,
        } => commands::eval_homography(&pairs, &checkpoint, &out, estimate, top_k, threshold),
        Command::TrainToy { config, out } => commands::train_toy(config.as_deref(), &out),
        Command::SynthGen {
            seed,
            count,
            width,
            height,
            out,
        } => commands::synth_gen(seed, count, width, height, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("alikekit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
