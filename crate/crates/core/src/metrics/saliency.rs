//! Saliency measures: MAE, maximum F-measure, S-measure and the adaptive
//! E-measure, following the conventions of the common Python evaluation
//! toolkits (`eps` is the f64 machine epsilon).

use crate::error::{GresError, Result};

pub const BETA_SQ: f64 = 0.3;
pub const S_ALPHA: f64 = 0.5;
/// Number of uniform thresholds `k / 255`, `k = 1..=255`, scanned for F_max.
pub const THRESHOLDS: usize = 255;

const EPS: f64 = f64::EPSILON;

/// A predicted saliency map in `[0, 1]` and its binary ground truth, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyPair {
    pub height: usize,
    pub width: usize,
    pub pred: Vec<f64>,
    pub gt: Vec<u8>,
}

impl SaliencyPair {
    /// Clamps `pred` into `[0, 1]`; `gt` entries are treated as foreground when nonzero.
    pub fn new(height: usize, width: usize, pred: Vec<f64>, gt: Vec<u8>) -> Result<Self> {
        if pred.len() != height * width || gt.len() != height * width {
            return Err(GresError::shape(&[height, width], &[pred.len(), gt.len()]));
        }
        if height * width == 0 {
            return Err(GresError::InvalidInput("empty saliency map".into()));
        }
        Ok(Self {
            height,
            width,
            pred: pred.into_iter().map(|p| p.clamp(0.0, 1.0)).collect(),
            gt: gt.into_iter().map(|g| u8::from(g != 0)).collect(),
        })
    }

    fn fg(&self, i: usize) -> bool {
        self.gt[i] != 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SodMetrics {
    pub mae: f64,
    pub f_max: f64,
    pub s_alpha: f64,
    pub e_xi: f64,
}

pub fn mae(pair: &SaliencyPair) -> f64 {
    pair.pred
        .iter()
        .zip(&pair.gt)
        .map(|(&p, &g)| (p - f64::from(g)).abs())
        .sum::<f64>()
        / pair.pred.len() as f64
}

fn f_beta(tp: f64, pred_fg: f64, gt_fg: f64) -> f64 {
    let precision = if pred_fg > 0.0 { tp / pred_fg } else { 0.0 };
    let recall = if gt_fg > 0.0 { tp / gt_fg } else { 0.0 };
    let denom = BETA_SQ * precision + recall;
    if denom > 0.0 {
        (1.0 + BETA_SQ) * precision * recall / denom
    } else {
        0.0
    }
}

/// Largest `k` in `0..=255` with `p >= k / 255`.
fn threshold_bin(p: f64) -> usize {
    let mut k = ((p * 255.0).floor().max(0.0) as usize).min(255);
    while k < 255 && p >= (k + 1) as f64 / 255.0 {
        k += 1;
    }
    while k > 0 && p < k as f64 / 255.0 {
        k -= 1;
    }
    k
}

/// F-measure at each threshold `k / 255` for `k = 1..=255` (index `k - 1`).
pub fn f_measure_curve(pair: &SaliencyPair) -> Vec<f64> {
    let mut fg_hist = [0usize; 256];
    let mut all_hist = [0usize; 256];
    for (i, &p) in pair.pred.iter().enumerate() {
        let k = threshold_bin(p);
        all_hist[k] += 1;
        if pair.fg(i) {
            fg_hist[k] += 1;
        }
    }
    let gt_fg = pair.gt.iter().filter(|&&g| g != 0).count() as f64;
    let mut curve = vec![0.0; THRESHOLDS];
    let (mut tp, mut pred_fg) = (0usize, 0usize);
    for k in (1..=255).rev() {
        tp += fg_hist[k];
        pred_fg += all_hist[k];
        curve[k - 1] = f_beta(tp as f64, pred_fg as f64, gt_fg);
    }
    curve
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn object_score(values: &[f64]) -> f64 {
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn object_similarity(pair: &SaliencyPair) -> f64 {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (i, &p) in pair.pred.iter().enumerate() {
        if pair.fg(i) {
            fg.push(p);
        } else {
            bg.push(1.0 - p);
        }
    }
    let u = fg.len() as f64 / pair.pred.len() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// SSIM-style agreement of one rectangular block.
fn block_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len();
    if n == 0 {
        return 0.0;
    }
    let x = pred.iter().sum::<f64>() / n as f64;
    let y = gt.iter().sum::<f64>() / n as f64;
    let denom = (n as f64 - 1.0).max(1.0);
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    for (&p, &g) in pred.iter().zip(gt) {
        sx += (p - x) * (p - x);
        sy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let (sx, sy, sxy) = (sx / denom, sy / denom, sxy / denom);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_similarity(pair: &SaliencyPair) -> f64 {
    let (h, w) = (pair.height, pair.width);
    let (mut sy, mut sx, mut count) = (0.0, 0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            if pair.fg(y * w + x) {
                sy += y as f64;
                sx += x as f64;
                count += 1;
            }
        }
    }
    let (cy, cx) = if count == 0 {
        ((h as f64 / 2.0).round() as usize, (w as f64 / 2.0).round() as usize)
    } else {
        ((sy / count as f64) as usize + 1, (sx / count as f64) as usize + 1)
    };
    let (cy, cx) = (cy.min(h), cx.min(w));
    let area = (h * w) as f64;
    let block = |y0: usize, y1: usize, x0: usize, x1: usize| {
        let mut p = Vec::with_capacity((y1 - y0) * (x1 - x0));
        let mut g = Vec::with_capacity(p.capacity());
        for y in y0..y1 {
            for x in x0..x1 {
                p.push(pair.pred[y * w + x]);
                g.push(f64::from(pair.gt[y * w + x]));
            }
        }
        let weight = ((y1 - y0) * (x1 - x0)) as f64 / area;
        weight * block_ssim(&p, &g)
    };
    block(0, cy, 0, cx) + block(0, cy, cx, w) + block(cy, h, 0, cx) + block(cy, h, cx, w)
}

/// Structure measure with `α = 0.5`.
pub fn s_measure(pair: &SaliencyPair) -> f64 {
    let y = pair.gt.iter().filter(|&&g| g != 0).count() as f64 / pair.gt.len() as f64;
    let x = pair.pred.iter().sum::<f64>() / pair.pred.len() as f64;
    if y == 0.0 {
        1.0 - x
    } else if y == 1.0 {
        x
    } else {
        (S_ALPHA * object_similarity(pair) + (1.0 - S_ALPHA) * region_similarity(pair)).max(0.0)
    }
}

/// Enhanced-alignment measure of the map binarized at `min(2·mean, 1)`.
pub fn e_measure(pair: &SaliencyPair) -> f64 {
    let n = pair.pred.len();
    let mean = pair.pred.iter().sum::<f64>() / n as f64;
    let threshold = (2.0 * mean).min(1.0);
    let fm: Vec<f64> = pair
        .pred
        .iter()
        .map(|&p| if p >= threshold { 1.0 } else { 0.0 })
        .collect();
    let gt_fg = pair.gt.iter().filter(|&&g| g != 0).count();
    let enhanced: f64 = if gt_fg == 0 {
        fm.iter().map(|f| 1.0 - f).sum()
    } else if gt_fg == n {
        fm.iter().sum()
    } else {
        let mu_fm = fm.iter().sum::<f64>() / n as f64;
        let mu_gt = gt_fg as f64 / n as f64;
        fm.iter()
            .zip(&pair.gt)
            .map(|(&f, &g)| {
                let a = f - mu_fm;
                let b = f64::from(g) - mu_gt;
                let align = 2.0 * a * b / (a * a + b * b + EPS);
                (align + 1.0) * (align + 1.0) / 4.0
            })
            .sum()
    };
    enhanced / (n as f64 - 1.0 + EPS)
}

/// Averages over pairs; F_max takes the maximum of the pair-averaged curve.
pub fn sod_metrics(pairs: &[SaliencyPair]) -> Result<SodMetrics> {
    if pairs.is_empty() {
        return Err(GresError::InvalidInput("no saliency pairs".into()));
    }
    let n = pairs.len() as f64;
    let mut curve = vec![0.0; THRESHOLDS];
    let (mut m, mut s, mut e) = (0.0, 0.0, 0.0);
    for pair in pairs {
        m += mae(pair);
        s += s_measure(pair);
        e += e_measure(pair);
        for (c, f) in curve.iter_mut().zip(f_measure_curve(pair)) {
            *c += f;
        }
    }
    let f_max = curve.iter().map(|c| c / n).fold(0.0, f64::max);
    Ok(SodMetrics {
        mae: m / n,
        f_max,
        s_alpha: s / n,
        e_xi: e / n,
    })
}
