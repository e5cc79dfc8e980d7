//! Training objective: soft IoU loss plus binary cross-entropy.
//!
//! Inputs are `(N, 1, H, W)` predictions and labels. Both losses are
//! computed per image and averaged over the batch.

use crate::autodiff::{sigmoid, Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Predictions are clamped to `[EPS, 1 - EPS]` before taking logarithms.
pub const EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub bce: f64,
    pub iou: f64,
    /// Pixels per image.
    pub n: usize,
}

fn check(op: &'static str, pred: &Tensor, label: &Tensor) -> Result<Shape> {
    let (ps, ls) = (pred.shape(), label.shape());
    if ps != ls {
        return Err(Error::shape(op, format!("prediction {ps} vs label {ls}")));
    }
    if ps.c != 1 {
        return Err(Error::shape(op, format!("expected single-channel maps, got {ps}")));
    }
    Ok(ps)
}

fn images(t: &Tensor) -> impl Iterator<Item = &[f64]> {
    t.data().chunks_exact(t.shape().plane())
}

/// Neumaier-compensated running sum. Keeps the loss accurate to a few ulps,
/// which finite-difference checks of small gradients rely on.
#[derive(Clone, Copy, Default)]
struct Accumulator {
    sum: f64,
    carry: f64,
}

impl Accumulator {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        self.carry += if self.sum.abs() >= x.abs() { (self.sum - t) + x } else { (x - t) + self.sum };
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

/// Mean binary cross-entropy of one image.
pub fn bce_image(pred: &[f64], label: &[f64]) -> f64 {
    let mut total = Accumulator::default();
    for (&p, &l) in pred.iter().zip(label) {
        let p = p.clamp(EPS, 1.0 - EPS);
        total.add(-(l * p.ln() + (1.0 - l) * (1.0 - p).ln()));
    }
    total.value() / pred.len() as f64
}

/// `1 - sum(l p) / sum(l + p - l p)` for one image; 0 when both maps are empty.
pub fn iou_image(pred: &[f64], label: &[f64]) -> f64 {
    let (inter, union) = iou_sums(pred, label);
    if union == 0.0 {
        0.0
    } else {
        1.0 - inter / union
    }
}

fn iou_sums(pred: &[f64], label: &[f64]) -> (f64, f64) {
    let (mut inter, mut union) = (Accumulator::default(), Accumulator::default());
    for (&p, &l) in pred.iter().zip(label) {
        inter.add(l * p);
        union.add(l + p - l * p);
    }
    (inter.value(), union.value())
}

pub fn bce_loss(pred: &Tensor, label: &Tensor) -> Result<f64> {
    let s = check("bce_loss", pred, label)?;
    Ok(images(pred).zip(images(label)).map(|(p, l)| bce_image(p, l)).sum::<f64>() / s.n as f64)
}

pub fn iou_loss(pred: &Tensor, label: &Tensor) -> Result<f64> {
    let s = check("iou_loss", pred, label)?;
    Ok(images(pred).zip(images(label)).map(|(p, l)| iou_image(p, l)).sum::<f64>() / s.n as f64)
}

pub fn total_loss(pred: &Tensor, label: &Tensor) -> Result<LossValue> {
    let bce = bce_loss(pred, label)?;
    let iou = iou_loss(pred, label)?;
    Ok(LossValue { total: bce + iou, bce, iou, n: pred.shape().plane() })
}

/// Logit bound matching the probability clamp: `sigmoid(±LOGIT_BOUND)` is
/// `1 - EPS` and `EPS`.
fn logit_bound() -> f64 {
    ((1.0 - EPS) / EPS).ln()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// [`bce_image`] of `sigmoid(z)`, computed from the logits so that `ln(1 - p)`
/// keeps full precision for `p` near 1.
pub fn bce_logits_image(logits: &[f64], label: &[f64]) -> f64 {
    let bound = logit_bound();
    let mut total = Accumulator::default();
    for (&z, &l) in logits.iter().zip(label) {
        let z = z.clamp(-bound, bound);
        total.add(l * softplus(-z) + (1.0 - l) * softplus(z));
    }
    total.value() / logits.len() as f64
}

fn probabilities(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&z| sigmoid(z)).collect()
}

/// [`total_loss`] of `sigmoid(logits)`.
pub fn total_loss_logits(logits: &Tensor, label: &Tensor) -> Result<LossValue> {
    let s = check("total_loss_logits", logits, label)?;
    let (mut bce, mut iou) = (0.0, 0.0);
    for (z, l) in images(logits).zip(images(label)) {
        bce += bce_logits_image(z, l);
        iou += iou_image(&probabilities(z), l);
    }
    let (bce, iou) = (bce / s.n as f64, iou / s.n as f64);
    Ok(LossValue { total: bce + iou, bce, iou, n: s.plane() })
}

struct BceBackward {
    label: Tensor,
}

impl Backward for BceBackward {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let pred = inputs[0];
        let s = pred.shape();
        let scale = grad.data()[0] / (s.numel() as f64);
        let data = pred
            .data()
            .iter()
            .zip(self.label.data())
            .map(|(&p, &l)| {
                // the clamp is flat outside [EPS, 1 - EPS]
                if !(EPS..=1.0 - EPS).contains(&p) {
                    return 0.0;
                }
                -scale * (l / p - (1.0 - l) / (1.0 - p))
            })
            .collect();
        vec![Some(Tensor::from_vec(s, data).expect("prediction shape"))]
    }
}

struct IouBackward {
    label: Tensor,
}

impl Backward for IouBackward {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let pred = inputs[0];
        let s = pred.shape();
        let scale = grad.data()[0] / s.n as f64;
        let mut out = Vec::with_capacity(s.numel());
        for (p, l) in images(pred).zip(images(&self.label)) {
            let (inter, union) = iou_sums(p, l);
            if union == 0.0 {
                out.extend(std::iter::repeat_n(0.0, p.len()));
                continue;
            }
            // d/dp_k [1 - I/U] = -(l_k U - I (1 - l_k)) / U^2
            let u2 = union * union;
            out.extend(l.iter().map(|&lk| -scale * (lk * union - inter * (1.0 - lk)) / u2));
        }
        vec![Some(Tensor::from_vec(s, out).expect("prediction shape"))]
    }
}

struct BceLogitsBackward {
    label: Tensor,
}

impl Backward for BceLogitsBackward {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let logits = inputs[0];
        let s = logits.shape();
        let scale = grad.data()[0] / (s.numel() as f64);
        let bound = logit_bound();
        let data = logits
            .data()
            .iter()
            .zip(self.label.data())
            .map(|(&z, &l)| if z.abs() > bound { 0.0 } else { scale * (sigmoid(z) - l) })
            .collect();
        vec![Some(Tensor::from_vec(s, data).expect("logit shape"))]
    }
}

struct IouLogitsBackward {
    label: Tensor,
}

impl Backward for IouLogitsBackward {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let logits = inputs[0];
        let s = logits.shape();
        let scale = grad.data()[0] / s.n as f64;
        let mut out = Vec::with_capacity(s.numel());
        for (z, l) in images(logits).zip(images(&self.label)) {
            let p = probabilities(z);
            let (inter, union) = iou_sums(&p, l);
            if union == 0.0 {
                out.extend(std::iter::repeat_n(0.0, z.len()));
                continue;
            }
            let u2 = union * union;
            out.extend(z.iter().zip(l).map(|(&zk, &lk)| {
                let dp = sigmoid(zk) * sigmoid(-zk);
                -scale * (lk * union - inter * (1.0 - lk)) / u2 * dp
            }));
        }
        vec![Some(Tensor::from_vec(s, out).expect("logit shape"))]
    }
}

/// `bce + iou` of `sigmoid(logits)` as a graph node on the logits.
pub fn total_loss_logits_node(graph: &mut Graph, logits: Var, label: &Tensor) -> Result<(Var, LossValue)> {
    let value = total_loss_logits(graph.value(logits), label)?;
    let bce = graph.record(Tensor::scalar(value.bce), &[logits], BceLogitsBackward { label: label.clone() });
    let iou = graph.record(Tensor::scalar(value.iou), &[logits], IouLogitsBackward { label: label.clone() });
    let total = graph.add(bce, iou)?;
    let value = LossValue { total: graph.value(total).data()[0], ..value };
    Ok((total, value))
}

/// Record the BCE loss of `pred` against a fixed label on the graph.
pub fn bce_loss_node(graph: &mut Graph, pred: Var, label: &Tensor) -> Result<Var> {
    let value = bce_loss(graph.value(pred), label)?;
    Ok(graph.record(Tensor::scalar(value), &[pred], BceBackward { label: label.clone() }))
}

pub fn iou_loss_node(graph: &mut Graph, pred: Var, label: &Tensor) -> Result<Var> {
    let value = iou_loss(graph.value(pred), label)?;
    Ok(graph.record(Tensor::scalar(value), &[pred], IouBackward { label: label.clone() }))
}

/// `bce + iou` as a graph node, with the component values.
pub fn total_loss_node(graph: &mut Graph, pred: Var, label: &Tensor) -> Result<(Var, LossValue)> {
    let bce = bce_loss_node(graph, pred, label)?;
    let iou = iou_loss_node(graph, pred, label)?;
    let total = graph.add(bce, iou)?;
    let value = LossValue {
        total: graph.value(total).data()[0],
        bce: graph.value(bce).data()[0],
        iou: graph.value(iou).data()[0],
        n: label.shape().plane(),
    };
    Ok((total, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_gradcheck, DEFAULT_STEP};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(h: usize, w: usize, data: Vec<f64>) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, h, w).unwrap(), data).unwrap()
    }

    fn half_ones(n: usize) -> Vec<f64> {
        (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn bce_examples() {
        let l = map(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let v = bce_loss(&l, &l).unwrap();
        assert!(v <= -(1.0 - EPS).ln() + 1e-18 && v > 0.0);
        let half = map(2, 2, vec![0.5; 4]);
        assert!((bce_loss(&half, &l).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(&half, &map(1, 4, vec![0.0; 4])).is_err());
    }

    #[test]
    fn bce_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let l: Vec<f64> = (0..64).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect();
        let mut acc = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                let k = y * 8 + x;
                let pk = p[k].clamp(EPS, 1.0 - EPS);
                acc += l[k] * pk.ln() + (1.0 - l[k]) * (1.0 - pk).ln();
            }
        }
        let expected = -acc / 64.0;
        assert!((bce_loss(&map(8, 8, p), &map(8, 8, l)).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn iou_examples() {
        let ones = map(3, 3, vec![1.0; 9]);
        let zeros = map(3, 3, vec![0.0; 9]);
        assert_eq!(iou_loss(&ones, &ones).unwrap(), 0.0);
        assert_eq!(iou_loss(&zeros, &ones).unwrap(), 1.0);
        assert_eq!(iou_loss(&zeros, &zeros).unwrap(), 0.0);
        let half = map(4, 4, vec![0.5; 16]);
        let lab = map(4, 4, half_ones(16));
        assert!((iou_loss(&half, &lab).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn total_examples() {
        let l = map(2, 4, half_ones(8));
        assert!(total_loss(&l, &l).unwrap().total <= 2e-7);
        let v = total_loss(&map(2, 4, vec![0.5; 8]), &l).unwrap();
        assert!((v.total - 1.359_814).abs() < 1e-6);
        assert_eq!(v.total, v.bce + v.iou);
        assert_eq!(v.n, 8);
    }

    #[test]
    fn batch_average_is_per_image() {
        let a = map(2, 2, vec![0.2, 0.9, 0.4, 0.7]);
        let b = map(2, 2, vec![0.0, 0.0, 0.0, 0.0]);
        let la = map(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let lb = map(2, 2, vec![0.0, 0.0, 0.0, 0.0]);
        let p = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        let l = Tensor::stack(&[la.clone(), lb.clone()]).unwrap();
        let expected = (iou_loss(&a, &la).unwrap() + iou_loss(&b, &lb).unwrap()) / 2.0;
        assert!((iou_loss(&p, &l).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let p = Tensor::uniform(Shape::new(2, 1, 4, 4).unwrap(), 0.05, 0.95, &mut rng);
            let l = Tensor::from_vec(p.shape(), (0..32).map(|_| f64::from(rng.gen_bool(0.4) as u8)).collect()).unwrap();
            let report = finite_diff_gradcheck(
                |g, x| total_loss_node(g, x, &l).map(|(v, _)| v),
                &p,
                DEFAULT_STEP,
            )
            .unwrap();
            assert!(report.max_relative_error < 1e-4, "{}", report.max_relative_error);
        }
    }

    #[test]
    fn logit_losses_match_probability_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let z = Tensor::uniform(Shape::new(3, 1, 5, 5).unwrap(), -6.0, 6.0, &mut rng);
            let l = Tensor::from_vec(z.shape(), (0..75).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect()).unwrap();
            let from_logits = total_loss_logits(&z, &l).unwrap();
            let from_probs = total_loss(&z.map(sigmoid), &l).unwrap();
            assert!((from_logits.bce - from_probs.bce).abs() < 1e-12);
            assert!((from_logits.iou - from_probs.iou).abs() < 1e-12);
        }
    }

    #[test]
    fn logit_bce_respects_the_clamp() {
        let l = map(1, 2, vec![1.0, 0.0]);
        let far = total_loss_logits(&map(1, 2, vec![-100.0, 100.0]), &l).unwrap();
        assert!((far.bce + EPS.ln()).abs() < 1e-9, "{}", far.bce);
        let mut g = Graph::new();
        let z = g.variable(map(1, 2, vec![-100.0, 100.0]));
        let (loss, _) = total_loss_logits_node(&mut g, z, &l).unwrap();
        g.backward(loss).unwrap();
        // only the IoU term, whose sigmoid is saturated, is left
        assert!(g.grad(z).unwrap().data().iter().all(|v| v.abs() < 1e-30));
    }

    #[test]
    fn logit_loss_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let z = Tensor::uniform(Shape::new(2, 1, 4, 4).unwrap(), -4.0, 4.0, &mut rng);
            let l = Tensor::from_vec(z.shape(), (0..32).map(|_| f64::from(rng.gen_bool(0.4) as u8)).collect()).unwrap();
            let report = finite_diff_gradcheck(
                |g, x| total_loss_logits_node(g, x, &l).map(|(v, _)| v),
                &z,
                DEFAULT_STEP,
            )
            .unwrap();
            assert!(report.max_relative_error < 1e-4, "{}", report.max_relative_error);
        }
    }

    #[test]
    fn logit_bce_keeps_precision_near_one() {
        // 1 - sigmoid(12) = 6.1e-6 carries only absolute precision in the
        // probability form; from the logit it is exact to a few ulps
        let exact = 12.0 + (-12.0f64).exp().ln_1p();
        let v = bce_logits_image(&[12.0], &[0.0]);
        assert!((v - exact).abs() < 4.0 * f64::EPSILON * exact);
    }

    #[test]
    fn bce_is_monotone_per_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..16).map(|_| rng.gen_range(0.1..0.9)).collect();
        let l: Vec<f64> = (0..16).map(|i| f64::from(i % 3 == 0)).collect();
        let base = bce_image(&p, &l);
        for k in 0..16 {
            let mut up = p.clone();
            up[k] += 0.05;
            let moved = bce_image(&up, &l);
            if l[k] == 1.0 {
                assert!(moved < base);
            } else {
                assert!(moved > base);
            }
        }
    }

    proptest! {
        #[test]
        fn losses_are_bounded_and_permutation_invariant(
            pairs in prop::collection::vec((0.0f64..=1.0, prop::bool::ANY), 1..40),
            seed in any::<u64>(),
        ) {
            let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let l: Vec<f64> = pairs.iter().map(|x| f64::from(x.1 as u8)).collect();
            let iou = iou_image(&p, &l);
            prop_assert!((0.0..=1.0).contains(&iou));
            prop_assert!(bce_image(&p, &l) >= 0.0);

            let mut idx: Vec<usize> = (0..p.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.gen_range(0..=i));
            }
            let ps: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let ls: Vec<f64> = idx.iter().map(|&i| l[i]).collect();
            prop_assert!((iou_image(&ps, &ls) - iou).abs() < 1e-12);
            prop_assert!((bce_image(&ps, &ls) - bce_image(&p, &l)).abs() < 1e-12);
        }

        #[test]
        fn iou_zero_iff_binary_maps_agree(bits in prop::collection::vec((prop::bool::ANY, prop::bool::ANY), 1..30)) {
            let p: Vec<f64> = bits.iter().map(|b| f64::from(b.0 as u8)).collect();
            let l: Vec<f64> = bits.iter().map(|b| f64::from(b.1 as u8)).collect();
            let agree = p == l;
            prop_assert_eq!(iou_image(&p, &l) == 0.0, agree);
        }
    }
}
