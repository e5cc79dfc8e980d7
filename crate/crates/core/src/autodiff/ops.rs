use super::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Mul,
}

/// Logistic function, split by sign so `exp` never overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Source taps for half-pixel-center bilinear resampling along one axis:
/// `src = (dst + 0.5) * in_len / out_len - 0.5`, clamped to `[0, in_len - 1]`.
#[inline]
pub(crate) fn bilinear_taps(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, src - i0 as f64)
}

/// Output positions `o` along one axis whose input index `o * stride + tap - pad` lies in `[0, in_len)`.
#[inline]
fn valid_outputs(tap: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> std::ops::Range<usize> {
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > tap { (in_len - 1 + pad - tap) / stride + 1 } else { 0 };
    lo.min(out_len)..hi.min(out_len)
}

struct Conv2d {
    stride: usize,
    pad: usize,
}

impl Conv2d {
    fn forward(&self, x: &Tensor, w: &Tensor, b: &Tensor, out_shape: Shape) -> Tensor {
        let xs = x.shape();
        let ws = w.shape();
        let k = ws.h;
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let mut out = Tensor::zeros(out_shape);
        let od = out.data_mut();
        for n in 0..xs.n {
            for co in 0..ws.n {
                let obase = out_shape.offset(n, co, 0, 0);
                od[obase..obase + out_shape.plane()].fill(bd[co]);
                for ci in 0..xs.c {
                    let xbase = xs.offset(n, ci, 0, 0);
                    for kh in 0..k {
                        let rows = valid_outputs(kh, self.pad, self.stride, xs.h, out_shape.h);
                        for kw in 0..k {
                            let wv = wd[ws.offset(co, ci, kh, kw)];
                            let cols = valid_outputs(kw, self.pad, self.stride, xs.w, out_shape.w);
                            for oh in rows.clone() {
                                let ih = oh * self.stride + kh - self.pad;
                                let orow = obase + oh * out_shape.w;
                                let xrow = xbase + ih * xs.w;
                                for ow in cols.clone() {
                                    let iw = ow * self.stride + kw - self.pad;
                                    od[orow + ow] += wv * xd[xrow + iw];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

impl Backward for Conv2d {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (xs, ws, gs) = (x.shape(), w.shape(), grad.shape());
        let k = ws.h;
        let (xd, wd, gd) = (x.data(), w.data(), grad.data());
        let mut gx = needs[0].then(|| Tensor::zeros(xs));
        let mut gw = needs[1].then(|| Tensor::zeros(ws));
        let gb = needs[2].then(|| {
            let mut gb = Tensor::zeros(inputs[2].shape());
            for n in 0..gs.n {
                for co in 0..gs.c {
                    let base = gs.offset(n, co, 0, 0);
                    gb.data_mut()[co] += gd[base..base + gs.plane()].iter().sum::<f64>();
                }
            }
            gb
        });
        for n in 0..xs.n {
            for co in 0..ws.n {
                let gbase = gs.offset(n, co, 0, 0);
                for ci in 0..xs.c {
                    let xbase = xs.offset(n, ci, 0, 0);
                    for kh in 0..k {
                        let rows = valid_outputs(kh, self.pad, self.stride, xs.h, gs.h);
                        for kw in 0..k {
                            let widx = ws.offset(co, ci, kh, kw);
                            let wv = wd[widx];
                            let cols = valid_outputs(kw, self.pad, self.stride, xs.w, gs.w);
                            let mut acc = 0.0;
                            for oh in rows.clone() {
                                let ih = oh * self.stride + kh - self.pad;
                                let grow = gbase + oh * gs.w;
                                let xrow = xbase + ih * xs.w;
                                for ow in cols.clone() {
                                    let iw = ow * self.stride + kw - self.pad;
                                    let g = gd[grow + ow];
                                    acc += g * xd[xrow + iw];
                                    if let Some(gx) = gx.as_mut() {
                                        gx.data_mut()[xrow + iw] += wv * g;
                                    }
                                }
                            }
                            if let Some(gw) = gw.as_mut() {
                                gw.data_mut()[widx] += acc;
                            }
                        }
                    }
                }
            }
        }
        vec![gx, gw, gb]
    }
}

struct GlobalMaxPool {
    /// Flat input offset of the selected maximum for each (n, c).
    argmax: Vec<usize>,
}

impl Backward for GlobalMaxPool {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let mut gx = Tensor::zeros(inputs[0].shape());
        for (&at, &g) in self.argmax.iter().zip(grad.data()) {
            gx.data_mut()[at] += g;
        }
        vec![Some(gx)]
    }

    fn branch(&self, _inputs: &[&Tensor]) -> Option<Vec<usize>> {
        Some(self.argmax.clone())
    }
}

struct UpsampleBilinear;

impl Backward for UpsampleBilinear {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let xs = inputs[0].shape();
        let gs = grad.shape();
        let mut gx = Tensor::zeros(xs);
        let gxd = gx.data_mut();
        let gd = grad.data();
        let cols: Vec<_> = (0..gs.w).map(|ow| bilinear_taps(ow, xs.w, gs.w)).collect();
        for n in 0..xs.n {
            for c in 0..xs.c {
                let xbase = xs.offset(n, c, 0, 0);
                let gbase = gs.offset(n, c, 0, 0);
                for oh in 0..gs.h {
                    let (h0, h1, fy) = bilinear_taps(oh, xs.h, gs.h);
                    for (ow, &(w0, w1, fx)) in cols.iter().enumerate() {
                        let g = gd[gbase + oh * gs.w + ow];
                        gxd[xbase + h0 * xs.w + w0] += g * (1.0 - fy) * (1.0 - fx);
                        gxd[xbase + h0 * xs.w + w1] += g * (1.0 - fy) * fx;
                        gxd[xbase + h1 * xs.w + w0] += g * fy * (1.0 - fx);
                        gxd[xbase + h1 * xs.w + w1] += g * fy * fx;
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

struct Pointwise(Activation);

impl Backward for Pointwise {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let data = match self.0 {
            Activation::Sigmoid => output
                .data()
                .iter()
                .zip(grad.data())
                .map(|(s, g)| g * s * (1.0 - s))
                .collect(),
            Activation::Relu => inputs[0]
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
        };
        vec![Some(Tensor::from_vec(output.shape(), data).expect("same shape as output"))]
    }

    fn branch(&self, inputs: &[&Tensor]) -> Option<Vec<usize>> {
        match self.0 {
            Activation::Sigmoid => None,
            Activation::Relu => Some(
                inputs[0].data().iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(i, _)| i).collect(),
            ),
        }
    }
}

struct Elementwise {
    mode: Binary,
    broadcast: bool,
}

impl Backward for Elementwise {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let s = a.shape();
        let plane = s.plane();
        let gd = grad.data();
        let ga = needs[0].then(|| match self.mode {
            Binary::Add => grad.clone(),
            Binary::Mul => {
                let data = gd
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g * b.data()[if self.broadcast { i / plane } else { i }])
                    .collect();
                Tensor::from_vec(s, data).expect("same shape as a")
            }
        });
        let gb = needs[1].then(|| {
            let factor = |i: usize| match self.mode {
                Binary::Add => gd[i],
                Binary::Mul => gd[i] * a.data()[i],
            };
            if self.broadcast {
                let mut gb = Tensor::zeros(b.shape());
                for (nc, slot) in gb.data_mut().iter_mut().enumerate() {
                    *slot = (nc * plane..(nc + 1) * plane).map(factor).sum();
                }
                gb
            } else {
                Tensor::from_vec(s, (0..gd.len()).map(factor).collect()).expect("same shape as b")
            }
        });
        vec![ga, gb]
    }
}

struct Sum;

impl Backward for Sum {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(inputs[0].shape(), grad.data()[0]))]
    }
}

impl Graph {
    /// Direct 2-D cross-correlation. `weight` is `(Cout, Cin, k, k)` with `k` in {1, 3};
    /// `bias` is `(1, Cout, 1, 1)`. Output extents are `(H + 2p - k) / stride + 1`, rounded down.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.value(input).shape();
        let ws = self.value(weight).shape();
        let bs = self.value(bias).shape();
        if ws.h != ws.w || !(ws.h == 1 || ws.h == 3) {
            return Err(Error::shape("conv2d", format!("kernel must be 1x1 or 3x3, weight is {ws}")));
        }
        if ws.c != xs.c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels but weight {ws} expects {}", xs.c, ws.c),
            ));
        }
        if bs != (Shape { n: 1, c: ws.n, h: 1, w: 1 }) {
            return Err(Error::shape("conv2d", format!("bias must be (1, {}, 1, 1), got {bs}", ws.n)));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let k = ws.h;
        if xs.h + 2 * padding < k || xs.w + 2 * padding < k {
            return Err(Error::shape(
                "conv2d",
                format!("input {xs} with padding {padding} is smaller than the {k}x{k} kernel"),
            ));
        }
        let out_shape = Shape {
            n: xs.n,
            c: ws.n,
            h: (xs.h + 2 * padding - k) / stride + 1,
            w: (xs.w + 2 * padding - k) / stride + 1,
        };
        let op = Conv2d { stride, pad: padding };
        let out = op.forward(self.value(input), self.value(weight), self.value(bias), out_shape);
        Ok(self.record(out, &[input, weight, bias], op))
    }

    /// Per-(n, c) maximum over the spatial plane. Ties go to the first position in row-major order.
    pub fn global_max_pool(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let s = x.shape();
        let plane = s.plane();
        let mut argmax = Vec::with_capacity(s.n * s.c);
        let mut values = Vec::with_capacity(s.n * s.c);
        for (nc, chunk) in x.data().chunks_exact(plane).enumerate() {
            let mut best = 0;
            for (i, &v) in chunk.iter().enumerate().skip(1) {
                if v > chunk[best] {
                    best = i;
                }
            }
            argmax.push(nc * plane + best);
            values.push(chunk[best]);
        }
        let out = Tensor::from_vec(Shape { h: 1, w: 1, ..s }, values).expect("n*c values");
        self.record(out, &[input], GlobalMaxPool { argmax })
    }

    /// Bilinear upsampling with half-pixel centers and edge clamping.
    pub fn upsample_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let x = self.value(input);
        let s = x.shape();
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("upsample_bilinear", "target extent must be positive"));
        }
        if out_h < s.h || out_w < s.w {
            return Err(Error::invalid(
                "upsample_bilinear",
                format!("target {out_h}x{out_w} is smaller than input {}x{}", s.h, s.w),
            ));
        }
        let os = Shape { h: out_h, w: out_w, ..s };
        let out = resample_bilinear(x, os);
        Ok(self.record(out, &[input], UpsampleBilinear))
    }

    pub fn pointwise(&mut self, input: Var, mode: Activation) -> Var {
        let x = self.value(input);
        let out = match mode {
            Activation::Sigmoid => x.map(sigmoid),
            Activation::Relu => x.map(|v| v.max(0.0)),
        };
        self.record(out, &[input], Pointwise(mode))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.pointwise(input, Activation::Sigmoid)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.pointwise(input, Activation::Relu)
    }

    /// `a op b` where `b` has the shape of `a` or is a `(N, C, 1, 1)` per-channel gate.
    pub fn elementwise(&mut self, a: Var, b: Var, mode: Binary) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let broadcast = if sa == sb {
            false
        } else if sb == (Shape { h: 1, w: 1, ..sa }) {
            true
        } else {
            return Err(Error::shape(
                "elementwise",
                format!("cannot combine {sa} with {sb}; need equal shapes or a (N, C, 1, 1) gate"),
            ));
        };
        let plane = sa.plane();
        let bd = bv.data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bd[if broadcast { i / plane } else { i }];
                match mode {
                    Binary::Add => x + y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        let out = Tensor::from_vec(sa, data).expect("shape of a");
        Ok(self.record(out, &[a, b], Elementwise { mode, broadcast }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Binary::Add)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Binary::Mul)
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        self.record(out, &[input], Sum)
    }
}

/// Half-pixel bilinear resampling of every plane of `x` to the spatial extents of `out_shape`.
pub(crate) fn resample_bilinear(x: &Tensor, out_shape: Shape) -> Tensor {
    let s = x.shape();
    let xd = x.data();
    let cols: Vec<_> = (0..out_shape.w).map(|ow| bilinear_taps(ow, s.w, out_shape.w)).collect();
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let base = s.offset(n, c, 0, 0);
            for oh in 0..out_shape.h {
                let (h0, h1, fy) = bilinear_taps(oh, s.h, out_shape.h);
                let (r0, r1) = (base + h0 * s.w, base + h1 * s.w);
                for &(w0, w1, fx) in &cols {
                    let top = xd[r0 + w0] * (1.0 - fx) + xd[r0 + w1] * fx;
                    let bottom = xd[r1 + w0] * (1.0 - fx) + xd[r1 + w1] * fx;
                    out.push(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out).expect("one value per output position")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape::new(n, c, h, w).unwrap()
    }

    fn t(s: Shape, data: &[f64]) -> Tensor {
        Tensor::from_vec(s, data.to_vec()).unwrap()
    }

    /// Six-nested-loop cross-correlation, no range precomputation.
    fn conv_oracle(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize) -> Tensor {
        let (xs, ws) = (x.shape(), w.shape());
        let k = ws.h;
        let oh = (xs.h + 2 * pad - k) / stride + 1;
        let ow = (xs.w + 2 * pad - k) / stride + 1;
        let os = shape(xs.n, ws.n, oh, ow);
        let mut out = Tensor::zeros(os);
        for n in 0..xs.n {
            for co in 0..ws.n {
                for y in 0..oh {
                    for xq in 0..ow {
                        let mut acc = b[co];
                        for ci in 0..xs.c {
                            for i in 0..k {
                                for j in 0..k {
                                    let iy = (y * stride + i) as isize - pad as isize;
                                    let ix = (xq * stride + j) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                        acc += w.get(co, ci, i, j) * x.get(n, ci, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        let at = os.offset(n, co, y, xq);
                        out.data_mut()[at] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(shape(2, 1, 5, 3), -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let w = g.constant(Tensor::full(shape(1, 1, 1, 1), 1.0));
        let b = g.constant(Tensor::zeros(shape(1, 1, 1, 1)));
        let y = g.conv2d(xv, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(shape(1, 2, 4, 4), 3.0));
        let w = g.constant(Tensor::zeros(shape(3, 2, 3, 3)));
        let b = g.constant(t(shape(1, 3, 1, 1), &[0.5, -1.0, 2.0]));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        let out = g.value(y);
        assert_eq!(out.shape(), shape(1, 3, 4, 4));
        for c in 0..3 {
            let expected = [0.5, -1.0, 2.0][c];
            assert!((0..16).all(|i| out.data()[c * 16 + i] == expected));
        }
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cases = [
            (shape(1, 1, 4, 4), 1, 3, 1, 1),
            (shape(2, 3, 7, 6), 4, 3, 2, 1),
            (shape(1, 2, 5, 5), 3, 1, 1, 0),
            (shape(1, 2, 6, 6), 2, 3, 2, 0),
            (shape(1, 1, 1, 1), 2, 3, 2, 1),
        ];
        for (xs, cout, k, stride, pad) in cases {
            let x = Tensor::uniform(xs, -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(shape(cout, xs.c, k, k), -1.0, 1.0, &mut rng);
            let b = Tensor::uniform(shape(1, cout, 1, 1), -1.0, 1.0, &mut rng);
            let expected = conv_oracle(&x, &w, b.data(), stride, pad);
            let mut g = Graph::new();
            let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
            let y = g.conv2d(xv, wv, bv, stride, pad).unwrap();
            assert_eq!(g.value(y).shape(), expected.shape());
            assert!(g.value(y).max_abs_diff(&expected) < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(shape(1, 2, 4, 4)));
        let w = g.constant(Tensor::zeros(shape(1, 3, 3, 3)));
        let b = g.constant(Tensor::zeros(shape(1, 1, 1, 1)));
        assert!(matches!(g.conv2d(x, w, b, 1, 1), Err(Error::Shape { .. })));

        let w5 = g.constant(Tensor::zeros(shape(1, 2, 5, 5)));
        assert!(g.conv2d(x, w5, b, 1, 2).is_err());

        let w3 = g.constant(Tensor::zeros(shape(1, 2, 3, 3)));
        let tiny = g.constant(Tensor::zeros(shape(1, 2, 1, 1)));
        assert!(g.conv2d(tiny, w3, b, 1, 0).is_err());
        assert!(g.conv2d(x, w3, b, 0, 1).is_err());
    }

    #[test]
    fn max_pool_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(shape(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]));
        let y = g.global_max_pool(x);
        assert_eq!(g.value(y).data(), &[4.0]);

        let c = g.constant(Tensor::full(shape(2, 3, 3, 2), -1.5));
        let y = g.global_max_pool(c);
        assert_eq!(g.value(y).shape(), shape(2, 3, 1, 1));
        assert!(g.value(y).data().iter().all(|&v| v == -1.5));
    }

    #[test]
    fn max_pool_matches_scan_and_routes_to_first_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(shape(2, 3, 5, 5), -2.0, 2.0, &mut rng);
        let mut g = Graph::new();
        let xv = g.variable(x.clone());
        let y = g.global_max_pool(xv);
        for n in 0..2 {
            for c in 0..3 {
                let mut m = f64::NEG_INFINITY;
                for h in 0..5 {
                    for w in 0..5 {
                        m = m.max(x.get(n, c, h, w));
                    }
                }
                assert_eq!(g.value(y).get(n, c, 0, 0), m);
            }
        }

        let mut g = Graph::new();
        let xv = g.variable(t(shape(1, 1, 2, 2), &[5.0, 1.0, 5.0, 5.0]));
        let y = g.global_max_pool(xv);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(xv).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_examples() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::full(shape(1, 2, 3, 2), 0.7));
        let y = g.upsample_bilinear(c, 7, 5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));

        let one = g.constant(t(shape(1, 1, 1, 1), &[2.5]));
        let y = g.upsample_bilinear(one, 4, 4).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 2.5));

        assert!(g.upsample_bilinear(one, 0, 4).is_err());
        let big = g.constant(Tensor::zeros(shape(1, 1, 4, 4)));
        assert!(g.upsample_bilinear(big, 2, 8).is_err());
    }

    #[test]
    fn upsample_two_by_two_formula() {
        // Scalar evaluation of src = (dst + 0.5) / 2 - 0.5 clamped to [0, 1].
        let input = [[0.0, 1.0], [2.0, 3.0]];
        let coord = |d: usize| ((d as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
        let mut g = Graph::new();
        let x = g.constant(t(shape(1, 1, 2, 2), &[0.0, 1.0, 2.0, 3.0]));
        let y = g.upsample_bilinear(x, 4, 4).unwrap();
        for oy in 0..4 {
            for ox in 0..4 {
                let (sy, sx) = (coord(oy), coord(ox));
                let expected = input[0][0] * (1.0 - sy) * (1.0 - sx)
                    + input[0][1] * (1.0 - sy) * sx
                    + input[1][0] * sy * (1.0 - sx)
                    + input[1][1] * sy * sx;
                assert!((g.value(y).get(0, 0, oy, ox) - expected).abs() < 1e-15);
            }
        }
        // first row: 0, 0.25, 0.75, 1
        assert_eq!(&g.value(y).data()[..4], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn pointwise_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(20.0) - 1.0 / (1.0 + (-20.0f64).exp())).abs() < 1e-12);
        assert!((sigmoid(20.0) - 0.999_999_997_938_846_4).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(sigmoid(-30.0) > 0.0 && sigmoid(30.0) < 1.0);

        let mut g = Graph::new();
        let x = g.constant(t(shape(1, 1, 1, 2), &[-3.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn elementwise_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::uniform(shape(2, 3, 2, 2), -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let ones = g.constant(Tensor::full(shape(2, 3, 1, 1), 1.0));
        let zeros = g.constant(Tensor::zeros(x.shape()));
        let y = g.mul(xv, ones).unwrap();
        assert_eq!(g.value(y), &x);
        let y = g.add(xv, zeros).unwrap();
        assert_eq!(g.value(y), &x);

        let gate = g.constant(t(shape(1, 2, 1, 1), &[2.0, 3.0]));
        let base = g.constant(Tensor::full(shape(1, 2, 2, 2), 1.0));
        let y = g.mul(base, gate).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0]);

        let bad = g.constant(Tensor::zeros(shape(1, 2, 2, 1)));
        assert!(matches!(g.add(base, bad), Err(Error::Shape { .. })));
        // the gate only broadcasts as the second operand
        assert!(g.mul(gate, base).is_err());
    }

    #[test]
    fn broadcast_backward_sums_over_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Tensor::uniform(shape(2, 3, 3, 4), -1.0, 1.0, &mut rng);
        let gate = Tensor::uniform(shape(2, 3, 1, 1), -1.0, 1.0, &mut rng);
        let weights = Tensor::uniform(a.shape(), -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let (av, gv, wv) = (g.variable(a.clone()), g.variable(gate.clone()), g.constant(weights.clone()));
        let prod = g.mul(av, gv).unwrap();
        let weighted = g.mul(prod, wv).unwrap();
        let root = g.sum(weighted);
        g.backward(root).unwrap();
        let grad_gate = g.grad(gv).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                let mut expect = 0.0;
                for h in 0..3 {
                    for w in 0..4 {
                        expect += weights.get(n, c, h, w) * a.get(n, c, h, w);
                    }
                }
                assert!((grad_gate.get(n, c, 0, 0) - expect).abs() < 1e-12);
            }
        }
        let grad_a = g.grad(av).unwrap();
        for (i, v) in grad_a.data().iter().enumerate() {
            assert!((v - weights.data()[i] * gate.data()[i / 12]).abs() < 1e-15);
        }
    }

    #[test]
    fn bilinear_taps_clamp() {
        assert_eq!(bilinear_taps(0, 2, 4), (0, 1, 0.0));
        assert_eq!(bilinear_taps(3, 2, 4), (1, 1, 0.0));
        assert_eq!(bilinear_taps(0, 1, 5), (0, 0, 0.0));
    }
}
