//! `key = value` run configuration with `#` comments.
//!
//! Every key is optional and falls back to its default:
//!
//! | key            | default | meaning                                   |
//! |----------------|---------|-------------------------------------------|
//! | `seed`         | 0       | seeds initialisation and synthetic data   |
//! | `iterations`   | 200     | training iterations                       |
//! | `batch`        | 4       | samples per iteration                     |
//! | `image_size`   | 64      | synthetic image side, multiple of 32      |
//! | `holdout`      | 16      | held-out synthetic samples                |
//! | `lr`           | 0.005   | learning rate                             |
//! | `momentum`     | 0.9     | SGD momentum                              |
//! | `weight_decay` | 5e-5    | L2 penalty added to the gradient          |
//! | `depth`        | 2       | cascade passes                            |
//! | `channels`     | 32      | unified channel width                     |
//! | `beta2`        | 0.3     | F-measure precision weight                |
//! | `gamma`        | 0.5     | structure measure object weight           |
//! | `thresholds`   | 256     | F-measure threshold count                 |
//! | `gt_binarize`  | 0.5     | ground truth foreground cut               |

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::training::TrainConfig;

pub const KEYS: [&str; 14] = [
    "seed",
    "iterations",
    "batch",
    "image_size",
    "holdout",
    "lr",
    "momentum",
    "weight_decay",
    "depth",
    "channels",
    "beta2",
    "gamma",
    "thresholds",
    "gt_binarize",
];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub metrics: MetricConfig,
}

fn number<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("line {line}: `{key}` has invalid value `{raw}`")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {line}: `{key}` given more than once")));
            }
            let t = &mut cfg.train;
            let m = &mut cfg.metrics;
            match key {
                "seed" => t.seed = number(line, key, value)?,
                "iterations" => t.iterations = number(line, key, value)?,
                "batch" => t.batch = number(line, key, value)?,
                "image_size" => t.image_size = number(line, key, value)?,
                "holdout" => t.holdout = number(line, key, value)?,
                "lr" => t.lr = number(line, key, value)?,
                "momentum" => t.momentum = number(line, key, value)?,
                "weight_decay" => t.weight_decay = number(line, key, value)?,
                "depth" => t.cascade.depth = number(line, key, value)?,
                "channels" => t.cascade.channels = number(line, key, value)?,
                "beta2" => m.beta2 = number(line, key, value)?,
                "gamma" => m.gamma = number(line, key, value)?,
                "thresholds" => m.thresholds = number(line, key, value)?,
                "gt_binarize" => m.gt_binarize = number(line, key, value)?,
                _ => return Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.metrics.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// All keys in a fixed order. Floats use shortest round-trip formatting.
    pub fn serialize(&self) -> String {
        let t = &self.train;
        let m = &self.metrics;
        let mut out = String::from("# cascade-seg run configuration\n");
        let values: [String; 14] = [
            t.seed.to_string(),
            t.iterations.to_string(),
            t.batch.to_string(),
            t.image_size.to_string(),
            t.holdout.to_string(),
            t.lr.to_string(),
            t.momentum.to_string(),
            t.weight_decay.to_string(),
            t.cascade.depth.to_string(),
            t.cascade.channels.to_string(),
            m.beta2.to_string(),
            m.gamma.to_string(),
            m.thresholds.to_string(),
            m.gt_binarize.to_string(),
        ];
        for (k, v) in KEYS.iter().zip(values) {
            writeln!(out, "{k} = {v}").expect("write to string");
        }
        out
    }
}
