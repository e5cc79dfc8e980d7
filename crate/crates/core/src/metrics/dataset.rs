use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{evaluate_pair, MetricConfig, MetricReport};
use crate::error::{Error, Result};
use crate::io::load_mask;

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    /// Fail on size mismatch instead of resizing the prediction to the ground truth.
    pub strict_size: bool,
}

/// PNG files in `dir` keyed by lower-cased stem.
fn png_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(dir.to_path_buf()),
        _ => Error::io(dir, e),
    })?;
    let mut files = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !path.is_file() || !is_png {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if let Some(prev) = files.insert(stem.to_lowercase(), path.clone()) {
            return Err(Error::Dataset(format!(
                "{} and {} share a stem",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(files)
}

/// Score every prediction in `pred_dir` against the same-stem mask in `gt_dir`.
pub fn evaluate_dataset(
    pred_dir: impl AsRef<Path>,
    gt_dir: impl AsRef<Path>,
    cfg: &MetricConfig,
    opts: EvalOptions,
) -> Result<MetricReport> {
    cfg.validate()?;
    let preds = png_files(pred_dir.as_ref())?;
    if preds.is_empty() {
        return Err(Error::Dataset(format!("no prediction files in {}", pred_dir.as_ref().display())));
    }
    let gts = png_files(gt_dir.as_ref())?;
    let unmatched: Vec<String> = preds
        .iter()
        .filter(|(stem, _)| !gts.contains_key(*stem))
        .map(|(_, p)| p.display().to_string())
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Dataset(format!("no ground truth for: {}", unmatched.join(", "))));
    }

    let jobs: Vec<(&PathBuf, &PathBuf)> = preds.iter().map(|(stem, p)| (p, &gts[stem])).collect();
    let pairs = jobs
        .par_iter()
        .map(|&(pred_path, gt_path)| {
            let gt = load_mask(gt_path)?.to_map();
            let mut pred = load_mask(pred_path)?.to_map();
            if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
                if opts.strict_size {
                    return Err(Error::Dataset(format!(
                        "{} is {}x{} but {} is {}x{}",
                        pred_path.display(),
                        pred.height(),
                        pred.width(),
                        gt_path.display(),
                        gt.height(),
                        gt.width()
                    )));
                }
                pred = pred.resized(gt.height(), gt.width())?;
            }
            let name = pred_path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            evaluate_pair(name, &pred, &gt, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_pairs(pairs)
}
