use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CascadeConfig, ENCODER_CHANNELS, INPUT_CHANNELS, LEVELS};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// All learnable tensors of the network, keyed by stable identifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

pub(crate) fn encoder_id(level: usize) -> String {
    format!("encoder.{level}")
}

pub(crate) fn unify_id(level: usize) -> String {
    format!("unify.{level}")
}

/// Residual 1x1 conv applied to the top level in cascade pass `pass`.
pub(crate) fn top_id(pass: usize) -> String {
    format!("cascade.{pass}.top")
}

/// Inner or outer Conv1 of the guidance module fusing `level` in `pass`.
pub(crate) fn gigm_id(pass: usize, level: usize, outer: bool) -> String {
    format!("cascade.{pass}.level{level}.{}", if outer { "outer" } else { "inner" })
}

pub(crate) const HEAD_ID: &str = "head";

/// Expected `(prefix, Cout, Cin, k)` for every conv in the model, in a fixed order.
pub(crate) fn conv_layout(cfg: &CascadeConfig) -> Vec<(String, usize, usize, usize)> {
    let cu = cfg.channels;
    let mut layout = Vec::new();
    let mut cin = INPUT_CHANNELS;
    for (i, &cout) in ENCODER_CHANNELS.iter().enumerate() {
        layout.push((encoder_id(i + 1), cout, cin, 3));
        cin = cout;
    }
    for (i, &c) in ENCODER_CHANNELS.iter().enumerate() {
        layout.push((unify_id(i + 1), cu, c, 1));
    }
    for pass in 1..=cfg.depth {
        layout.push((top_id(pass), cu, cu, 1));
        for level in 1..LEVELS {
            layout.push((gigm_id(pass, level, false), cu, cu, 1));
            layout.push((gigm_id(pass, level, true), cu, cu, 1));
        }
    }
    layout.push((HEAD_ID.to_string(), 1, cu, 3));
    layout
}

/// Residual branches start close to the identity so that repeated fusion
/// does not blow up activations.
const RESIDUAL_INIT_SCALE: f64 = 0.1;

/// Uniform init bound for the conv `prefix` with the given fan-in.
fn init_bound(prefix: &str, fan_in: usize) -> f64 {
    let he = (6.0 / fan_in as f64).sqrt();
    let lecun = (3.0 / fan_in as f64).sqrt();
    if prefix.starts_with("encoder.") {
        he
    } else if prefix.starts_with("cascade.") {
        RESIDUAL_INIT_SCALE * he
    } else {
        lecun
    }
}

fn weight_shape(cout: usize, cin: usize, k: usize) -> Shape {
    Shape { n: cout, c: cin, h: k, w: k }
}

fn bias_shape(cout: usize) -> Shape {
    Shape { n: 1, c: cout, h: 1, w: 1 }
}

impl ModelParams {
    /// Uniform weights and zero biases. The relu encoder uses `±sqrt(6 / fan_in)`,
    /// the linear unify and head convs `±sqrt(3 / fan_in)`, and the residual
    /// convs inside the cascade a tenth of the encoder bound.
    pub fn init(cfg: &CascadeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (prefix, cout, cin, k) in conv_layout(cfg) {
            let bound = init_bound(&prefix, cin * k * k);
            let w = Tensor::uniform(weight_shape(cout, cin, k), -bound, bound, &mut rng);
            tensors.insert(format!("{prefix}.weight"), w);
            tensors.insert(format!("{prefix}.bias"), Tensor::zeros(bias_shape(cout)));
        }
        Ok(Self { tensors })
    }

    /// Build from raw entries, checking they match `cfg` exactly.
    pub fn from_tensors(cfg: &CascadeConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let params = Self { tensors };
        params.validate(cfg)?;
        Ok(params)
    }

    pub fn validate(&self, cfg: &CascadeConfig) -> Result<()> {
        cfg.validate()?;
        let mut expected = BTreeMap::new();
        for (prefix, cout, cin, k) in conv_layout(cfg) {
            expected.insert(format!("{prefix}.weight"), weight_shape(cout, cin, k));
            expected.insert(format!("{prefix}.bias"), bias_shape(cout));
        }
        for (id, shape) in &expected {
            match self.tensors.get(id) {
                None => return Err(Error::UnknownParameter(id.clone())),
                Some(t) if t.shape() != *shape => {
                    return Err(Error::shape(
                        "params",
                        format!("`{id}` has shape {}, expected {shape}", t.shape()),
                    ))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::UnknownParameter(extra.clone()));
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Tensor> {
        self.tensors.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.data().len()).sum()
    }

    /// Put every tensor on `graph`, as gradient-tracking leaves when `trainable`.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(id, t)| {
                let v = if trainable { graph.variable(t.clone()) } else { graph.constant(t.clone()) };
                (id.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }
}

/// A conv layer's weight and bias as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: Var,
    pub bias: Var,
}

/// [`ModelParams`] placed on one graph.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, id: &str) -> Result<Var> {
        self.vars.get(id).copied().ok_or_else(|| Error::UnknownParameter(id.to_string()))
    }

    pub fn conv(&self, prefix: &str) -> Result<Conv> {
        Ok(Conv {
            weight: self.var(&format!("{prefix}.weight"))?,
            bias: self.var(&format!("{prefix}.bias"))?,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Gradients gathered after `graph.backward`. Parameters that received none are omitted.
    pub fn gradients(&self, graph: &Graph) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(id, &v)| graph.grad(v).map(|g| (id.clone(), g.clone())))
            .collect()
    }
}
