use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::network::{SaliencyMap, INPUT_CHANNELS};
use crate::tensor::{Shape, Tensor};

pub const MIN_FOREGROUND: f64 = 0.05;
pub const MAX_FOREGROUND: f64 = 0.60;

/// A `(1, 3, S, S)` image with its `{0, 1}` mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub mask: SaliencyMap,
}

impl Sample {
    pub fn mask_tensor(&self) -> Tensor {
        self.mask.to_tensor()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.mask.mean()
    }
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Rect,
    Ellipse,
}

#[derive(Clone, Copy, Debug)]
struct Blob {
    kind: Kind,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    level: f64,
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, size: f64, level: f64) -> Self {
        let kind = if rng.gen_bool(0.5) { Kind::Rect } else { Kind::Ellipse };
        let ry = rng.gen_range(0.08..0.30) * size;
        let rx = rng.gen_range(0.08..0.30) * size;
        Self {
            kind,
            cy: rng.gen_range(ry..size - ry),
            cx: rng.gen_range(rx..size - rx),
            ry,
            rx,
            level,
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = ((y - self.cy) / self.ry, (x - self.cx) / self.rx);
        match self.kind {
            Kind::Rect => dy.abs() <= 1.0 && dx.abs() <= 1.0,
            Kind::Ellipse => dy * dy + dx * dx <= 1.0,
        }
    }
}

/// Sample `index` of the synthetic set for `seed`. Each index has its own
/// random stream, so samples can be generated in any order.
pub fn synth_sample(seed: u64, index: u64, size: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let s = size as f64;
    loop {
        let background = rng.gen_range(0.10..0.40);
        let count = rng.gen_range(1..=2);
        let first = rng.gen_range(0.60..0.90);
        let mut blobs = vec![Blob::random(&mut rng, s, first)];
        if count == 2 {
            // keep the two foreground levels apart
            let second = if first < 0.75 { first + 0.12 } else { first - 0.12 };
            blobs.push(Blob::random(&mut rng, s, second));
        }
        let mut mask = vec![0.0; size * size];
        for y in 0..size {
            for x in 0..size {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                if blobs.iter().any(|b| b.contains(py, px)) {
                    mask[y * size + x] = 1.0;
                }
            }
        }
        let fraction = mask.iter().sum::<f64>() / mask.len() as f64;
        if !(MIN_FOREGROUND..=MAX_FOREGROUND).contains(&fraction) {
            continue;
        }

        // low-frequency ripple plus per-pixel noise
        let (fy, fx) = (rng.gen_range(1.0..4.0), rng.gen_range(1.0..4.0));
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let ripple = rng.gen_range(0.02..0.06);
        let mut gray = vec![0.0; size * size];
        for y in 0..size {
            for x in 0..size {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                // later blobs are painted over earlier ones
                let base = blobs.iter().rev().find(|b| b.contains(py, px)).map_or_else(
                    || background + ripple * (std::f64::consts::TAU * (fy * py + fx * px) / s + phase).sin(),
                    |b| b.level,
                );
                let noise = rng.gen_range(-0.05..0.05);
                gray[y * size + x] = (base + noise).clamp(0.0, 1.0);
            }
        }
        let mut data = Vec::with_capacity(INPUT_CHANNELS * gray.len());
        for _ in 0..INPUT_CHANNELS {
            data.extend_from_slice(&gray);
        }
        let image = Tensor::from_vec(Shape { n: 1, c: INPUT_CHANNELS, h: size, w: size }, data).expect("image shape");
        let mask = SaliencyMap::new(size, size, mask).expect("binary mask");
        return Sample { image, mask };
    }
}

/// `count` samples with indices `0..count`.
pub fn synth_dataset(seed: u64, count: usize, size: usize) -> Vec<Sample> {
    synth_range(seed, 0, count, size)
}

pub(crate) fn synth_range(seed: u64, start: u64, count: usize, size: usize) -> Vec<Sample> {
    (0..count as u64).into_par_iter().map(|i| synth_sample(seed, start + i, size)).collect()
}

/// Stack samples into `(N, 3, S, S)` images and `(N, 1, S, S)` masks.
pub fn batch_tensors(samples: &[Sample]) -> (Tensor, Tensor) {
    let images: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
    let masks: Vec<Tensor> = samples.iter().map(Sample::mask_tensor).collect();
    (
        Tensor::stack(&images).expect("equal image shapes"),
        Tensor::stack(&masks).expect("equal mask shapes"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_are_binary_and_in_range() {
        for seed in 0..3 {
            for s in synth_dataset(seed, 40, 64) {
                assert!(s.mask.values().iter().all(|&v| v == 0.0 || v == 1.0));
                let f = s.foreground_fraction();
                assert!((MIN_FOREGROUND..=MAX_FOREGROUND).contains(&f), "fraction {f}");
                assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(synth_dataset(9, 8, 32), synth_dataset(9, 8, 32));
        assert_ne!(synth_dataset(9, 2, 32), synth_dataset(10, 2, 32));
    }

    #[test]
    fn generation_order_does_not_matter() {
        let all = synth_dataset(5, 6, 32);
        assert_eq!(synth_sample(5, 4, 32), all[4]);
        assert_eq!(synth_range(5, 3, 2, 32), all[3..5].to_vec());
    }

    #[test]
    fn image_is_gray_and_brighter_over_foreground() {
        let s = synth_sample(1, 0, 64);
        let plane = 64 * 64;
        let d = s.image.data();
        assert_eq!(&d[..plane], &d[plane..2 * plane]);
        assert_eq!(&d[..plane], &d[2 * plane..]);
        let m = s.mask.values();
        let mean_where = |want: f64| {
            let v: Vec<f64> = (0..plane).filter(|&i| m[i] == want).map(|i| d[i]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_where(1.0) > mean_where(0.0) + 0.1);
    }

    #[test]
    fn batching_stacks_in_order() {
        let samples = synth_dataset(2, 3, 32);
        let (x, y) = batch_tensors(&samples);
        assert_eq!(x.shape(), Shape { n: 3, c: 3, h: 32, w: 32 });
        assert_eq!(y.shape(), Shape { n: 3, c: 1, h: 32, w: 32 });
        assert_eq!(&y.data()[1024..2048], samples[1].mask.values());
    }
}
