use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cascade_seg::config::RunConfig;
use cascade_seg::io::{load_image, save_image, save_mask, MaskImage};
use cascade_seg::metrics::{evaluate_dataset, EvalOptions};
use cascade_seg::gradcheck::{model_gradcheck, ModelGradcheck};
use cascade_seg::network::{load_checkpoint, save_checkpoint};
use cascade_seg::training::{synth_dataset, train_toy_with, write_loss_curve};

/// Gradient checks fail at or above this relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "cascade-seg", version, about = "Cascaded GIGM saliency network: train, infer, evaluate")]
struct Cli {
    /// key = value run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic shapes; writes checkpoint.bin and loss.csv
    Train {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one 8-bit saliency PNG per input image
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Score predicted masks against ground truth; writes metrics.csv
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Fail on size mismatches instead of resizing predictions
        #[arg(long)]
        strict_size: bool,
        /// Also write the mean precision/recall/F curve to curve.csv
        #[arg(long)]
        curve: bool,
    },
    /// Finite-difference check of the full model gradient
    Gradcheck,
    /// Write a synthetic dataset as images/ and masks/
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }

    match cli.command {
        Command::Train { out } => {
            create_dir(&out)?;
            let outcome = train_toy_with(&cfg.train, |r| {
                if r.iter % 20 == 0 {
                    eprintln!("iter {:>5} total {:.6} bce {:.6} iou {:.6}", r.iter, r.total, r.bce, r.iou);
                }
            })?;
            save_checkpoint(out.join("checkpoint.bin"), &outcome.model)?;
            write_loss_curve(out.join("loss.csv"), &outcome.curve)?;
            let h = outcome.holdout;
            let last = outcome.curve.last().map_or(f64::NAN, |r| r.total);
            println!(
                "iterations={} final_loss={last:.6} holdout_maxF={:.6} holdout_mae={:.6} holdout_smeasure={:.6}",
                outcome.curve.len(),
                h.max_f,
                h.mae,
                h.s_measure
            );
        }
        Command::Infer { checkpoint, out, images } => {
            let model = load_checkpoint(&checkpoint)?;
            create_dir(&out)?;
            for path in images {
                let image = load_image(&path)?;
                let map = model
                    .predict(&image)
                    .with_context(|| format!("inference on {}", path.display()))?
                    .remove(0);
                let stem = path
                    .file_stem()
                    .with_context(|| format!("{} has no file name", path.display()))?;
                let target = out.join(stem).with_extension("png");
                save_mask(&target, &MaskImage::from_map(&map))?;
            }
        }
        Command::Eval { pred, gt, out, strict_size, curve } => {
            let report = evaluate_dataset(&pred, &gt, &cfg.metrics, EvalOptions { strict_size })?;
            create_dir(&out)?;
            let csv = out.join("metrics.csv");
            fs::write(&csv, report.to_csv()).with_context(|| format!("cannot write {}", csv.display()))?;
            if curve {
                let path = out.join("curve.csv");
                fs::write(&path, report.curve_csv()).with_context(|| format!("cannot write {}", path.display()))?;
            }
            println!("{}", report.summary_line());
        }
        Command::Gradcheck => {
            let opts = ModelGradcheck { seed: cfg.train.seed, ..ModelGradcheck::default() };
            let r = model_gradcheck(&cfg.train.cascade, &opts)?;
            println!(
                "max_relative_error={:e} coordinates={} instances={} rejected_instances={} kink_skips={}",
                r.max_relative_error, r.checked, r.instances, r.rejected_instances, r.kink_rejections
            );
            if !r.passed(GRADCHECK_TOLERANCE) {
                eprintln!("gradcheck failed at {}", r.worst);
                return Ok(false);
            }
        }
        Command::Synth { out, count } => {
            if count == 0 {
                bail!("--count must be at least 1");
            }
            let (images, masks) = (out.join("images"), out.join("masks"));
            create_dir(&images)?;
            create_dir(&masks)?;
            for (i, sample) in synth_dataset(cfg.train.seed, count, cfg.train.image_size).iter().enumerate() {
                let name = format!("{i:04}.png");
                save_image(images.join(&name), &sample.image)?;
                save_mask(masks.join(&name), &MaskImage::from_map(&sample.mask))?;
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
