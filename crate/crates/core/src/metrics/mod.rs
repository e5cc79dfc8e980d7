//! Salient object detection metrics: F-measure over a threshold sweep,
//! mean absolute error and the structure measure.

mod dataset;
mod structure;

pub use dataset::{evaluate_dataset, EvalOptions};
pub use structure::{combine as combine_structure, structure_score, StructureScore};

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::SaliencyMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricConfig {
    /// Precision weight in the F-measure.
    pub beta2: f64,
    /// Object-aware weight in the structure measure.
    pub gamma: f64,
    /// Number of uniform thresholds `k / (thresholds - 1)` in the F sweep.
    pub thresholds: usize,
    /// Ground-truth values above this count as foreground.
    pub gt_binarize: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { beta2: 0.3, gamma: 0.5, thresholds: 256, gt_binarize: 0.5 }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta2 > 0.0) || !self.beta2.is_finite() {
            return Err(Error::Config(format!("beta2 must be positive, got {}", self.beta2)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.thresholds < 2 {
            return Err(Error::Config(format!("need at least 2 thresholds, got {}", self.thresholds)));
        }
        if !(0.0..1.0).contains(&self.gt_binarize) {
            return Err(Error::Config(format!("gt_binarize must lie in [0, 1), got {}", self.gt_binarize)));
        }
        Ok(())
    }

    /// Strictly increasing thresholds from 0 to 1.
    pub fn threshold_values(&self) -> Vec<f64> {
        let last = (self.thresholds - 1) as f64;
        (0..self.thresholds).map(|k| k as f64 / last).collect()
    }

    pub fn binarize(&self, gt: &SaliencyMap) -> Vec<bool> {
        gt.values().iter().map(|&v| v > self.gt_binarize).collect()
    }
}

fn same_dims(op: &'static str, a: &SaliencyMap, b: &SaliencyMap) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::shape(
            op,
            format!("prediction {}x{} vs ground truth {}x{}", a.height(), a.width(), b.height(), b.width()),
        ));
    }
    Ok(())
}

/// `(1 + b2) P R / (b2 P + R)`, 0 when the denominator vanishes.
pub fn f_beta(precision: f64, recall: f64, beta2: f64) -> f64 {
    let denom = beta2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / denom
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FBetaCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f: Vec<f64>,
    pub max_f: f64,
    pub mean_f: f64,
}

/// Precision, recall and F at every threshold, predicting foreground where `pred >= t`.
pub fn f_beta_curve(pred: &SaliencyMap, gt: &SaliencyMap, cfg: &MetricConfig) -> Result<FBetaCurve> {
    same_dims("f_beta_curve", pred, gt)?;
    cfg.validate()?;
    let thresholds = cfg.threshold_values();
    let fg = cfg.binarize(gt);
    // hits[k]: pixels whose highest threshold not exceeding them is k
    let mut hits_fg = vec![0usize; thresholds.len()];
    let mut hits_bg = vec![0usize; thresholds.len()];
    for (&p, &f) in pred.values().iter().zip(&fg) {
        let top = thresholds.partition_point(|&t| t <= p);
        if top == 0 {
            continue;
        }
        if f {
            hits_fg[top - 1] += 1;
        } else {
            hits_bg[top - 1] += 1;
        }
    }
    let positives = fg.iter().filter(|&&f| f).count();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut precision = vec![0.0; thresholds.len()];
    let mut recall = vec![0.0; thresholds.len()];
    for k in (0..thresholds.len()).rev() {
        tp += hits_fg[k];
        fp += hits_bg[k];
        precision[k] = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        recall[k] = if positives == 0 { 0.0 } else { tp as f64 / positives as f64 };
    }
    let f: Vec<f64> = precision.iter().zip(&recall).map(|(&p, &r)| f_beta(p, r, cfg.beta2)).collect();
    let max_f = f.iter().copied().fold(0.0, f64::max);
    let mean_f = f.iter().sum::<f64>() / f.len() as f64;
    Ok(FBetaCurve { thresholds, precision, recall, f, max_f, mean_f })
}

/// Mean absolute difference between two maps.
pub fn mae(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    same_dims("mae", pred, gt)?;
    let n = pred.values().len() as f64;
    Ok(pred.values().iter().zip(gt.values()).map(|(p, g)| (p - g).abs()).sum::<f64>() / n)
}

pub fn s_measure(pred: &SaliencyMap, gt: &SaliencyMap, cfg: &MetricConfig) -> Result<f64> {
    same_dims("s_measure", pred, gt)?;
    Ok(structure_score(pred, &cfg.binarize(gt), cfg.gamma).combined)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub name: String,
    pub max_f: f64,
    pub mean_f: f64,
    pub mae: f64,
    pub s_measure: f64,
}

#[derive(Clone, Debug)]
pub struct PairEvaluation {
    pub record: ImageRecord,
    pub curve: FBetaCurve,
}

pub fn evaluate_pair(name: &str, pred: &SaliencyMap, gt: &SaliencyMap, cfg: &MetricConfig) -> Result<PairEvaluation> {
    let curve = f_beta_curve(pred, gt, cfg)?;
    let record = ImageRecord {
        name: name.to_string(),
        max_f: curve.max_f,
        mean_f: curve.mean_f,
        mae: mae(pred, gt)?,
        s_measure: s_measure(pred, gt, cfg)?,
    };
    Ok(PairEvaluation { record, curve })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Aggregate {
    pub max_f: f64,
    pub mean_f: f64,
    pub mae: f64,
    pub s_measure: f64,
}

/// Per-image records in name order plus their arithmetic means.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub records: Vec<ImageRecord>,
    pub mean: Aggregate,
    /// Mean precision / recall / F over images at each threshold.
    pub mean_curve: FBetaCurve,
}

impl MetricReport {
    pub fn from_pairs(mut pairs: Vec<PairEvaluation>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Dataset("no image pairs to report".into()));
        }
        pairs.sort_by(|a, b| a.record.name.cmp(&b.record.name));
        let n = pairs.len() as f64;
        let mean_of = |f: fn(&ImageRecord) -> f64| pairs.iter().map(|p| f(&p.record)).sum::<f64>() / n;
        let mean = Aggregate {
            max_f: mean_of(|r| r.max_f),
            mean_f: mean_of(|r| r.mean_f),
            mae: mean_of(|r| r.mae),
            s_measure: mean_of(|r| r.s_measure),
        };
        let len = pairs[0].curve.thresholds.len();
        let avg = |pick: fn(&FBetaCurve) -> &Vec<f64>| -> Vec<f64> {
            (0..len).map(|k| pairs.iter().map(|p| pick(&p.curve)[k]).sum::<f64>() / n).collect()
        };
        let f = avg(|c| &c.f);
        let mean_curve = FBetaCurve {
            thresholds: pairs[0].curve.thresholds.clone(),
            precision: avg(|c| &c.precision),
            recall: avg(|c| &c.recall),
            max_f: f.iter().copied().fold(0.0, f64::max),
            mean_f: f.iter().sum::<f64>() / len as f64,
            f,
        };
        let records = pairs.into_iter().map(|p| p.record).collect();
        Ok(Self { records, mean, mean_curve })
    }

    pub fn count(&self) -> usize {
        self.records.len()
    }

    /// `name,maxF,meanF,mae,smeasure` rows plus a closing `__mean__` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,maxF,meanF,mae,smeasure\n");
        let mut row = |name: &str, a: f64, b: f64, c: f64, d: f64| {
            writeln!(out, "{name},{a:.6},{b:.6},{c:.6},{d:.6}").expect("write to string");
        };
        for r in &self.records {
            row(&r.name, r.max_f, r.mean_f, r.mae, r.s_measure);
        }
        let m = self.mean;
        row("__mean__", m.max_f, m.mean_f, m.mae, m.s_measure);
        out
    }

    /// `threshold,precision,recall,f` for the dataset-mean curve.
    pub fn curve_csv(&self) -> String {
        let c = &self.mean_curve;
        let mut out = String::from("threshold,precision,recall,f\n");
        for k in 0..c.thresholds.len() {
            writeln!(out, "{:.6},{:.6},{:.6},{:.6}", c.thresholds[k], c.precision[k], c.recall[k], c.f[k])
                .expect("write to string");
        }
        out
    }

    pub fn summary_line(&self) -> String {
        let m = self.mean;
        format!(
            "images={} maxF={:.6} meanF={:.6} mae={:.6} smeasure={:.6}",
            self.count(),
            m.max_f,
            m.mean_f,
            m.mae,
            m.s_measure
        )
    }
}
