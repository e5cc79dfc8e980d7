//! SGD-momentum training on synthetic shapes.

mod optim;
mod synth;

pub use optim::{sgd_momentum_step, OptimizerState, SgdConfig};
pub use synth::{batch_tensors, synth_dataset, synth_sample, Sample, MAX_FOREGROUND, MIN_FOREGROUND};

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::losses::total_loss_logits_node;
use crate::metrics::{evaluate_pair, MetricConfig, MetricReport};
use crate::network::{forward_logits, CascadeConfig, Model, STRIDE_MULTIPLE};

/// Held-out samples live far from the training indices in the same stream space.
const HOLDOUT_OFFSET: u64 = 1 << 40;
/// Keeps data streams independent of the parameter initialisation stream.
const DATA_SALT: u64 = 0x5eed_da7a;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub batch: usize,
    pub seed: u64,
    pub image_size: usize,
    /// Number of held-out synthetic samples scored after training.
    pub holdout: usize,
    pub cascade: CascadeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        Self {
            lr: sgd.lr,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            iterations: 200,
            batch: 4,
            seed: 0,
            image_size: 64,
            holdout: 16,
            cascade: CascadeConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(STRIDE_MULTIPLE) {
            return bad(format!("image_size must be a positive multiple of {STRIDE_MULTIPLE}, got {}", self.image_size));
        }
        if self.holdout == 0 {
            return bad("holdout must be at least 1".into());
        }
        self.cascade.validate()
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig { lr: self.lr, momentum: self.momentum, weight_decay: self.weight_decay }
    }

    fn data_seed(&self) -> u64 {
        self.seed ^ DATA_SALT
    }

    /// Training batch `iter`, taken in index order.
    pub fn batch_samples(&self, iter: usize) -> Vec<Sample> {
        let start = (iter * self.batch) as u64;
        synth::synth_range(self.data_seed(), start, self.batch, self.image_size)
    }

    pub fn holdout_samples(&self) -> Vec<Sample> {
        synth::synth_range(self.data_seed(), HOLDOUT_OFFSET, self.holdout, self.image_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub total: f64,
    pub bce: f64,
    pub iou: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HoldoutMetrics {
    /// Maximum over thresholds of the mean F-measure curve.
    pub max_f: f64,
    pub mean_f: f64,
    pub mae: f64,
    pub s_measure: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub curve: Vec<LossRecord>,
    pub holdout: HoldoutMetrics,
}

impl TrainOutcome {
    pub fn mean_total(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.curve[range];
        slice.iter().map(|r| r.total).sum::<f64>() / slice.len() as f64
    }
}

pub fn train_toy(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_toy_with(cfg, |_| {})
}

/// [`train_toy`] with a callback after every iteration.
pub fn train_toy_with(cfg: &TrainConfig, mut on_step: impl FnMut(&LossRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = Model::init(cfg.cascade, cfg.seed)?;
    let mut state = OptimizerState::new(&model.params);
    let sgd = cfg.sgd();
    let mut curve = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let (images, masks) = batch_tensors(&cfg.batch_samples(iter));
        let mut graph = Graph::new();
        let bound = model.params.bind(&mut graph, true);
        let x = graph.constant(images);
        // the loss is evaluated from logits, see `total_loss_logits`
        let logits = forward_logits(&mut graph, x, &model.cfg, &bound)?;
        let (loss, value) = total_loss_logits_node(&mut graph, logits, &masks)?;
        if !value.total.is_finite() {
            return Err(Error::NonFiniteLoss(iter));
        }
        graph.backward(loss)?;
        let grads = bound.gradients(&graph);
        sgd_momentum_step(&mut model.params, &grads, &mut state, &sgd)?;
        let record = LossRecord { iter, total: value.total, bce: value.bce, iou: value.iou };
        on_step(&record);
        curve.push(record);
    }
    let holdout = evaluate_holdout(&model, cfg)?;
    Ok(TrainOutcome { model, curve, holdout })
}

pub fn evaluate_holdout(model: &Model, cfg: &TrainConfig) -> Result<HoldoutMetrics> {
    let metric = MetricConfig::default();
    let samples = cfg.holdout_samples();
    let mut pairs = Vec::with_capacity(samples.len());
    for (k, chunk) in samples.chunks(cfg.batch).enumerate() {
        let (images, _) = batch_tensors(chunk);
        for (j, (pred, s)) in model.predict(&images)?.iter().zip(chunk).enumerate() {
            let name = format!("holdout_{:04}", k * cfg.batch + j);
            pairs.push(evaluate_pair(&name, pred, &s.mask, &metric)?);
        }
    }
    let report = MetricReport::from_pairs(pairs)?;
    Ok(HoldoutMetrics {
        max_f: report.mean_curve.max_f,
        mean_f: report.mean_curve.mean_f,
        mae: report.mean.mae,
        s_measure: report.mean.s_measure,
    })
}

/// `iter,total,bce,iou` with full round-trip precision.
pub fn loss_curve_csv(curve: &[LossRecord]) -> String {
    let mut out = String::from("iter,total,bce,iou\n");
    for r in curve {
        writeln!(out, "{},{},{},{}", r.iter, r.total, r.bce, r.iou).expect("write to string");
    }
    out
}

pub fn write_loss_curve(path: impl AsRef<Path>, curve: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, loss_curve_csv(curve)).map_err(|e| Error::io(path, e))
}
