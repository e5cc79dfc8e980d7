//! Structure measure: object-aware and region-aware similarity between a
//! prediction and a binary ground truth.

use crate::network::SaliencyMap;

const EPS: f64 = f64::EPSILON;

/// Object-aware and region-aware components with their `gamma` blend.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureScore {
    pub object: f64,
    pub region: f64,
    pub combined: f64,
}

/// `gamma * object + (1 - gamma) * region`.
pub fn combine(object: f64, region: f64, gamma: f64) -> f64 {
    gamma * object + (1.0 - gamma) * region
}

/// `2 x / (x^2 + 1 + sigma)` with `sigma` the sample standard deviation.
fn object_similarity(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + std + EPS)
}

pub(crate) fn object_score(pred: &[f64], fg: &[bool]) -> f64 {
    let u = fg.iter().filter(|&&f| f).count() as f64 / fg.len() as f64;
    let inside: Vec<f64> = pred.iter().zip(fg).filter(|(_, &f)| f).map(|(&p, _)| p).collect();
    let outside: Vec<f64> = pred.iter().zip(fg).filter(|(_, &f)| !f).map(|(&p, _)| 1.0 - p).collect();
    u * object_similarity(&inside) + (1.0 - u) * object_similarity(&outside)
}

/// SSIM-style score of one rectangular block, statistics with `N - 1` normalisation.
fn block_ssim(pred: &SaliencyMap, fg: &[bool], rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> f64 {
    let w = pred.width();
    let idx = || rows.clone().flat_map(|y| cols.clone().map(move |x| y * w + x));
    let n = (rows.len() * cols.len()) as f64;
    let gt = |i: usize| f64::from(u8::from(fg[i]));
    let mx = idx().map(|i| pred.values()[i]).sum::<f64>() / n;
    let my = idx().map(gt).sum::<f64>() / n;
    let denom = n - 1.0 + EPS;
    let sxx = idx().map(|i| (pred.values()[i] - mx).powi(2)).sum::<f64>() / denom;
    let syy = idx().map(|i| (gt(i) - my).powi(2)).sum::<f64>() / denom;
    let sxy = idx().map(|i| (pred.values()[i] - mx) * (gt(i) - my)).sum::<f64>() / denom;
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// 1-based foreground centroid `(x, y)`, rounded half away from zero.
pub(crate) fn centroid(fg: &[bool], height: usize, width: usize) -> (usize, usize) {
    let total = fg.iter().filter(|&&f| f).count();
    if total == 0 {
        return ((width as f64 / 2.0).round() as usize, (height as f64 / 2.0).round() as usize);
    }
    let (mut sx, mut sy) = (0usize, 0usize);
    for (i, _) in fg.iter().enumerate().filter(|(_, &f)| f) {
        sx += i % width + 1;
        sy += i / width + 1;
    }
    let x = (sx as f64 / total as f64).round() as usize;
    let y = (sy as f64 / total as f64).round() as usize;
    (x, y)
}

pub(crate) fn region_score(pred: &SaliencyMap, fg: &[bool]) -> f64 {
    let (h, w) = (pred.height(), pred.width());
    let (cx, cy) = centroid(fg, h, w);
    let area = (h * w) as f64;
    let w_lt = (cx * cy) as f64 / area;
    let w_rt = ((w - cx) * cy) as f64 / area;
    let w_lb = (cx * (h - cy)) as f64 / area;
    let w_rb = 1.0 - w_lt - w_rt - w_lb;
    [
        (w_lt, 0..cy, 0..cx),
        (w_rt, 0..cy, cx..w),
        (w_lb, cy..h, 0..cx),
        (w_rb, cy..h, cx..w),
    ]
    .into_iter()
    .filter(|(_, rows, cols)| !rows.is_empty() && !cols.is_empty())
    .map(|(weight, rows, cols)| weight * block_ssim(pred, fg, rows, cols))
    .sum()
}

/// Structure measure against a binarised ground truth `fg`.
///
/// An all-background truth scores `1 - mean(pred)`, an all-foreground one
/// `mean(pred)`; both components are then reported equal to that value.
pub fn structure_score(pred: &SaliencyMap, fg: &[bool], gamma: f64) -> StructureScore {
    debug_assert_eq!(pred.values().len(), fg.len());
    let count = fg.iter().filter(|&&f| f).count();
    if count == 0 || count == fg.len() {
        let m = pred.mean();
        let s = if count == 0 { 1.0 - m } else { m };
        return StructureScore { object: s, region: s, combined: s };
    }
    let object = object_score(pred.values(), fg);
    let region = region_score(pred, fg);
    StructureScore { object, region, combined: combine(object, region, gamma).clamp(0.0, 1.0) }
}
