use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::network::ModelParams;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 0.005, momentum: 0.9, weight_decay: 5e-5 }
    }
}

/// One velocity buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    velocity: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let velocity = params.iter().map(|(id, t)| (id.to_string(), Tensor::zeros(t.shape()))).collect();
        Self { velocity }
    }

    pub fn velocity(&self, id: &str) -> Option<&Tensor> {
        self.velocity.get(id)
    }
}

/// Classic SGD with momentum and L2 weight decay folded into the gradient:
/// `v <- momentum * v + (g + wd * w)`, `w <- w - lr * v`.
///
/// Nothing is updated unless every parameter has a gradient of matching shape.
pub fn sgd_momentum_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
    cfg: &SgdConfig,
) -> Result<()> {
    for (id, w) in params.iter() {
        let g = grads.get(id).ok_or_else(|| Error::MissingGradient(id.to_string()))?;
        if g.shape() != w.shape() {
            return Err(Error::shape("sgd", format!("gradient of `{id}` is {}, parameter is {}", g.shape(), w.shape())));
        }
        if state.velocity.get(id).map(Tensor::shape) != Some(w.shape()) {
            return Err(Error::shape("sgd", format!("optimizer state does not match parameter `{id}`")));
        }
    }
    for (id, w) in params.iter_mut() {
        let g = &grads[id];
        let v = state.velocity.get_mut(id).expect("checked above");
        for ((wi, vi), gi) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = cfg.momentum * *vi + (gi + cfg.weight_decay * *wi);
            *wi -= cfg.lr * *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::CascadeConfig;

    fn setup() -> (ModelParams, OptimizerState) {
        let params = ModelParams::init(&CascadeConfig { depth: 1, channels: 2 }, 3).unwrap();
        let state = OptimizerState::new(&params);
        (params, state)
    }

    fn grads_like(params: &ModelParams, f: impl Fn(&str, usize) -> f64) -> BTreeMap<String, Tensor> {
        params
            .iter()
            .map(|(id, t)| {
                let mut g = Tensor::zeros(t.shape());
                g.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = f(id, i));
                (id.to_string(), g)
            })
            .collect()
    }

    #[test]
    fn plain_gradient_step() {
        let (mut params, mut state) = setup();
        let before = params.clone();
        let grads = grads_like(&params, |_, i| (i as f64).sin());
        let cfg = SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0 };
        sgd_momentum_step(&mut params, &grads, &mut state, &cfg).unwrap();
        for (id, w) in params.iter() {
            let (w0, g) = (before.get(id).unwrap(), &grads[id]);
            for i in 0..w.data().len() {
                assert_eq!(w.data()[i], w0.data()[i] - 0.1 * g.data()[i]);
            }
        }
    }

    #[test]
    fn coasting_on_velocity() {
        let (mut params, mut state) = setup();
        let v0 = 0.25;
        state.velocity.values_mut().for_each(|v| v.data_mut().fill(v0));
        let before = params.clone();
        let zero = grads_like(&params, |_, _| 0.0);
        let cfg = SgdConfig { lr: 0.01, momentum: 0.9, weight_decay: 0.0 };
        sgd_momentum_step(&mut params, &zero, &mut state, &cfg).unwrap();
        for (id, w) in params.iter() {
            assert!(state.velocity(id).unwrap().data().iter().all(|&v| v == 0.9 * v0));
            for (a, b) in w.data().iter().zip(before.get(id).unwrap().data()) {
                assert_eq!(*a, b - 0.01 * (0.9 * v0));
            }
        }
    }

    #[test]
    fn two_steps_match_hand_recurrence() {
        let (mut params, mut state) = setup();
        let id = "head.weight";
        let w0 = params.get(id).unwrap().data()[0];
        let cfg = SgdConfig::default();
        let (g1, g2) = (0.3, -0.7);
        let (first, second) = (grads_like(&params, |_, _| g1), grads_like(&params, |_, _| g2));
        sgd_momentum_step(&mut params, &first, &mut state, &cfg).unwrap();
        sgd_momentum_step(&mut params, &second, &mut state, &cfg).unwrap();
        let v1 = g1 + 5e-5 * w0;
        let w1 = w0 - 0.005 * v1;
        let v2 = 0.9 * v1 + (g2 + 5e-5 * w1);
        let w2 = w1 - 0.005 * v2;
        assert!((params.get(id).unwrap().data()[0] - w2).abs() < 1e-15);
        assert!((state.velocity(id).unwrap().data()[0] - v2).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_alone_shrinks_norm() {
        let (mut params, mut state) = setup();
        let zero = grads_like(&params, |_, _| 0.0);
        let cfg = SgdConfig { lr: 0.005, momentum: 0.0, weight_decay: 5e-5 };
        let norm = |p: &ModelParams| p.iter().flat_map(|(_, t)| t.data().to_vec()).map(|v| v * v).sum::<f64>();
        let mut last = norm(&params);
        for _ in 0..5 {
            sgd_momentum_step(&mut params, &zero, &mut state, &cfg).unwrap();
            let now = norm(&params);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let (mut params, mut state) = setup();
        let before = params.clone();
        let mut grads = grads_like(&params, |_, _| 1.0);
        grads.remove("unify.3.bias");
        let err = sgd_momentum_step(&mut params, &grads, &mut state, &SgdConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::MissingGradient(id) if id == "unify.3.bias"));
        assert_eq!(params, before);
    }
}
