//! The cascaded information-interaction network.
//!
//! Pipeline: a five-stage strided-conv encoder produces a pyramid
//! `E_1..E_5`; per-level 1x1 convs unify the channel width; `depth` top-down
//! passes of the global information guidance module (GIGM) refine every
//! level using a channel gate squeezed from the level above; a 3x3 head on
//! the finest level produces the saliency map.
//!
//! Inside one GIGM, the higher level is reduced to a gate
//! `G = sigmoid(GMP(F_next))` of shape `(N, C, 1, 1)` and the lower level is
//! refined as `D = R_outer(G * R_inner(F) + F)`, where `R(x) = conv1x1(x) + x`.

mod checkpoint;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use params::{BoundParams, Conv, ModelParams};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Pyramid depth.
pub const LEVELS: usize = 5;
/// Encoder output channels per level.
pub const ENCODER_CHANNELS: [usize; LEVELS] = [8, 16, 32, 64, 128];
pub const INPUT_CHANNELS: usize = 3;
/// Input extents must be multiples of the coarsest stride.
pub const STRIDE_MULTIPLE: usize = 1 << LEVELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CascadeConfig {
    /// Number of top-down interaction passes.
    pub depth: usize,
    /// Unified channel width of every pyramid level.
    pub channels: usize,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self { depth: 2, channels: 32 }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config(format!("cascade depth must be >= 1, got {}", self.depth)));
        }
        if self.channels < 1 {
            return Err(Error::Config(format!("unified channels must be >= 1, got {}", self.channels)));
        }
        Ok(())
    }
}

/// Channel-unified pyramid, finest level first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    levels: Vec<Var>,
}

impl FeaturePyramid {
    pub fn new(graph: &Graph, levels: Vec<Var>) -> Result<Self> {
        if levels.len() != LEVELS {
            return Err(Error::shape("pyramid", format!("expected {LEVELS} levels, got {}", levels.len())));
        }
        let c = graph.value(levels[0]).shape().c;
        for pair in levels.windows(2) {
            let (fine, coarse) = (graph.value(pair[0]).shape(), graph.value(pair[1]).shape());
            if coarse.c != c || fine.c != c {
                return Err(Error::shape("pyramid", "levels have different channel widths"));
            }
            if coarse.h * 2 != fine.h || coarse.w * 2 != fine.w {
                return Err(Error::shape(
                    "pyramid",
                    format!("level extents {fine} -> {coarse} do not halve"),
                ));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[Var] {
        &self.levels
    }
}

/// Single-channel prediction with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::shape(
                "saliency map",
                format!("{height}x{width} map given {} values", values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("saliency map", format!("value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, values })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// One map per batch entry of a `(N, 1, H, W)` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Vec<Self>> {
        let s = t.shape();
        if s.c != 1 {
            return Err(Error::shape("saliency map", format!("expected one channel, got {s}")));
        }
        t.data()
            .chunks_exact(s.plane())
            .map(|chunk| Self::new(s.h, s.w, chunk.to_vec()))
            .collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape { n: 1, c: 1, h: self.height, w: self.width }, self.values.clone())
            .expect("map extents are positive")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Half-pixel bilinear resize to `height x width`.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("resize", "target extent must be positive"));
        }
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let out = crate::autodiff::resample_bilinear(&self.to_tensor(), Shape { n: 1, c: 1, h: height, w: width });
        Self::new(height, width, out.into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

fn check_channels(graph: &Graph, image: Var) -> Result<Shape> {
    let s = graph.value(image).shape();
    if s.c != INPUT_CHANNELS {
        return Err(Error::shape("encode", format!("expected {INPUT_CHANNELS} input channels, got {s}")));
    }
    Ok(s)
}

fn check_input(graph: &Graph, image: Var) -> Result<Shape> {
    let s = check_channels(graph, image)?;
    for (name, extent) in [("height", s.h), ("width", s.w)] {
        if extent % STRIDE_MULTIPLE != 0 {
            return Err(Error::shape(
                "encode",
                format!("input {name} {extent} is not divisible by {STRIDE_MULTIPLE}"),
            ));
        }
    }
    Ok(s)
}

/// Five stride-2 3x3 conv + relu stages; returns the raw pyramid, finest first.
pub fn encode(graph: &mut Graph, image: Var, params: &BoundParams) -> Result<Vec<Var>> {
    check_input(graph, image)?;
    encode_levels(graph, image, params)
}

fn encode_levels(graph: &mut Graph, image: Var, params: &BoundParams) -> Result<Vec<Var>> {
    let mut x = image;
    let mut raw = Vec::with_capacity(LEVELS);
    for level in 1..=LEVELS {
        let conv = params.conv(&params::encoder_id(level))?;
        let y = graph.conv2d(x, conv.weight, conv.bias, 2, 1)?;
        x = graph.relu(y);
        raw.push(x);
    }
    Ok(raw)
}

/// Per-level 1x1 convs to the unified width.
pub fn unify_channels(graph: &mut Graph, raw: &[Var], params: &BoundParams) -> Result<FeaturePyramid> {
    if raw.len() != LEVELS {
        return Err(Error::shape("unify_channels", format!("expected {LEVELS} levels, got {}", raw.len())));
    }
    let mut levels = Vec::with_capacity(LEVELS);
    for (i, &x) in raw.iter().enumerate() {
        let conv = params.conv(&params::unify_id(i + 1))?;
        let (have, want) = (graph.value(x).shape().c, graph.value(conv.weight).shape().c);
        if have != want {
            return Err(Error::shape(
                "unify_channels",
                format!("level {} has {have} channels, its conv expects {want}", i + 1),
            ));
        }
        levels.push(graph.conv2d(x, conv.weight, conv.bias, 1, 0)?);
    }
    FeaturePyramid::new(graph, levels)
}

/// `sigmoid(global_max_pool(f_next))`, shape `(N, C, 1, 1)`.
pub fn gigm_gate(graph: &mut Graph, f_next: Var) -> Var {
    let pooled = graph.global_max_pool(f_next);
    graph.sigmoid(pooled)
}

/// `conv(x) + x`.
pub fn residual(graph: &mut Graph, x: Var, conv: Conv) -> Result<Var> {
    let y = graph.conv2d(x, conv.weight, conv.bias, 1, 0)?;
    graph.add(y, x)
}

/// `R_outer(gate * R_inner(f) + f)`.
pub fn gigm_fuse(graph: &mut Graph, f: Var, gate: Var, inner: Conv, outer: Conv) -> Result<Var> {
    let (fs, gs) = (graph.value(f).shape(), graph.value(gate).shape());
    if gs != (Shape { h: 1, w: 1, ..fs }) {
        return Err(Error::shape("gigm_fuse", format!("gate {gs} does not match features {fs}")));
    }
    let calibrated = residual(graph, f, inner)?;
    let gated = graph.mul(calibrated, gate)?;
    let guided = graph.add(gated, f)?;
    residual(graph, guided, outer)
}

/// `cfg.depth` top-down passes over the pyramid; returns `D_1..D_5`.
///
/// Within a pass the top level only gets its residual transform, and each
/// lower level `i` is fused with the gate of the already-updated level
/// `i + 1`. Hence `D_j` depends on `E_j..E_5` only.
pub fn cascade(
    graph: &mut Graph,
    pyramid: &FeaturePyramid,
    cfg: &CascadeConfig,
    params: &BoundParams,
) -> Result<Vec<Var>> {
    cfg.validate()?;
    let mut current = pyramid.levels().to_vec();
    for pass in 1..=cfg.depth {
        let mut next = current.clone();
        next[LEVELS - 1] = residual(graph, current[LEVELS - 1], params.conv(&params::top_id(pass))?)?;
        for i in (0..LEVELS - 1).rev() {
            let gate = gigm_gate(graph, next[i + 1]);
            let inner = params.conv(&params::gigm_id(pass, i + 1, false))?;
            let outer = params.conv(&params::gigm_id(pass, i + 1, true))?;
            next[i] = gigm_fuse(graph, current[i], gate, inner, outer)?;
        }
        current = next;
    }
    Ok(current)
}

/// 3x3 conv to one channel, bilinear upsample to the input size, sigmoid.
pub fn predict_head(graph: &mut Graph, d1: Var, params: &BoundParams, out_h: usize, out_w: usize) -> Result<Var> {
    let logits = predict_head_logits(graph, d1, params, out_h, out_w)?;
    Ok(graph.sigmoid(logits))
}

/// [`predict_head`] without the final sigmoid.
pub fn predict_head_logits(
    graph: &mut Graph,
    d1: Var,
    params: &BoundParams,
    out_h: usize,
    out_w: usize,
) -> Result<Var> {
    let s = graph.value(d1).shape();
    if s.h * 2 != out_h || s.w * 2 != out_w {
        return Err(Error::shape(
            "predict_head",
            format!("finest level {}x{} is not at stride 2 of {out_h}x{out_w}", s.h, s.w),
        ));
    }
    let head = params.conv(params::HEAD_ID)?;
    let logits = graph.conv2d(d1, head.weight, head.bias, 1, 1)?;
    graph.upsample_bilinear(logits, out_h, out_w)
}

/// Full forward pass; returns the `(N, 1, H, W)` saliency node.
pub fn forward(graph: &mut Graph, image: Var, cfg: &CascadeConfig, params: &BoundParams) -> Result<Var> {
    let logits = forward_logits(graph, image, cfg, params)?;
    Ok(graph.sigmoid(logits))
}

/// [`forward`] without the final sigmoid, for losses evaluated on logits.
pub fn forward_logits(graph: &mut Graph, image: Var, cfg: &CascadeConfig, params: &BoundParams) -> Result<Var> {
    let s = check_input(graph, image)?;
    let raw = encode_levels(graph, image, params)?;
    let pyramid = unify_channels(graph, &raw, params)?;
    let decoded = cascade(graph, &pyramid, cfg, params)?;
    predict_head_logits(graph, decoded[0], params, s.h, s.w)
}

/// Configuration plus weights, for inference outside a training loop.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: CascadeConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(cfg: CascadeConfig, params: ModelParams) -> Result<Self> {
        params.validate(&cfg)?;
        Ok(Self { cfg, params })
    }

    pub fn init(cfg: CascadeConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&cfg, seed)?;
        Ok(Self { cfg, params })
    }

    /// Saliency maps for a `(N, 3, H, W)` batch.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<SaliencyMap>> {
        let mut graph = Graph::new();
        let bound = self.params.bind(&mut graph, false);
        let x = graph.constant(images.clone());
        let out = forward(&mut graph, x, &self.cfg, &bound)?;
        SaliencyMap::from_tensor(graph.value(out))
    }
}
