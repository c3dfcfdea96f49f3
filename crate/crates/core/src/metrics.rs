//! Saliency evaluation: MAE, F-measure, S-measure, E-measure and weighted
//! F-measure, plus per-dataset aggregation.
//!
//! Degenerate ground truth follows the reference implementations: for an
//! all-background `gt`, F-, S- and E-measure score the prediction's
//! emptiness (`1 - mean`), S- and E-measure score an all-foreground `gt` by
//! the prediction's mean, and the weighted F-measure is 0.
//!
//! The weighted F-measure smooths the propagated error with replicate
//! padding, so an all-zero prediction scores exactly 0 even when the object
//! touches the border.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, ScoreMap};

pub const BETA2: f64 = 0.3;
pub const ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Binarize at `min(2 * mean(pred), 1)`.
    #[default]
    Adaptive,
    /// Best F over the thresholds `k / 255`, `k = 1..=255`.
    MaxOverThresholds,
}

impl ThresholdPolicy {
    pub fn id(self) -> &'static str {
        match self {
            ThresholdPolicy::Adaptive => "adaptive",
            ThresholdPolicy::MaxOverThresholds => "max_over_thresholds",
        }
    }
}

fn check(pred: &ScoreMap, gt: &BinaryMask) -> Result<()> {
    pred.ensure_same_dims(gt.dims(), "metric")
}

pub fn mae(pred: &ScoreMap, gt: &BinaryMask) -> Result<f64> {
    check(pred, gt)?;
    let sum: f64 = pred.values().iter().zip(gt.values()).map(|(&p, &g)| (p - f64::from(g)).abs()).sum();
    Ok(sum / pred.values().len() as f64)
}

/// Adaptive binarization shared by F- and E-measure. A pixel is foreground
/// when it reaches the threshold and is non-zero, so an all-zero prediction
/// stays empty.
pub fn adaptive_binarize(pred: &ScoreMap) -> Vec<bool> {
    let t = (2.0 * pred.mean()).min(1.0);
    pred.values().iter().map(|&p| p >= t && p > 0.0).collect()
}

fn f_from_counts(tp: usize, fp: usize, fneg: usize, beta2: f64) -> f64 {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    if p == 0.0 && r == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * p * r / (beta2 * p + r)
    }
}

fn f_binary(binary: &[bool], gt: &BinaryMask, beta2: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for (&b, &g) in binary.iter().zip(gt.values()) {
        match (b, g == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    f_from_counts(tp, fp, fneg, beta2)
}

pub fn f_measure(pred: &ScoreMap, gt: &BinaryMask, beta2: f64, policy: ThresholdPolicy) -> Result<f64> {
    check(pred, gt)?;
    if gt.count_ones() == 0 {
        return Ok(1.0 - pred.mean());
    }
    let f = match policy {
        ThresholdPolicy::Adaptive => f_binary(&adaptive_binarize(pred), gt, beta2),
        ThresholdPolicy::MaxOverThresholds => (1..=255)
            .map(|k| {
                let t = f64::from(k) / 255.0;
                let b: Vec<bool> = pred.values().iter().map(|&p| p >= t).collect();
                f_binary(&b, gt, beta2)
            })
            .fold(0.0, f64::max),
    };
    Ok(f.clamp(0.0, 1.0))
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    (mean, var.sqrt())
}

fn object_score(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (m, s) = mean_std(values);
    2.0 * m / (m * m + 1.0 + s)
}

fn s_object(pred: &[f64], gt: &[u8]) -> f64 {
    let fg = pred.iter().zip(gt).filter(|(_, &g)| g == 1).map(|(&p, _)| p);
    let bg = pred.iter().zip(gt).filter(|(_, &g)| g == 0).map(|(&p, _)| 1.0 - p);
    let u = gt.iter().filter(|&&g| g == 1).count() as f64 / gt.len() as f64;
    u * object_score(fg) + (1.0 - u) * object_score(bg)
}

fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let dof = (n - 1.0).max(1.0);
    let sx = pred.iter().map(|p| (p - x).powi(2)).sum::<f64>() / dof;
    let sy = gt.iter().map(|g| (g - y).powi(2)).sum::<f64>() / dof;
    let sxy = pred.iter().zip(gt).map(|(p, g)| (p - x) * (g - y)).sum::<f64>() / dof;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / beta
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Centroid split point `(row, col)`: rounded one-based centroid, which is
/// the exclusive end of the top/left quadrants in zero-based terms.
fn centroid(gt: &BinaryMask) -> (usize, usize) {
    let (h, w) = gt.dims();
    let n = gt.count_ones();
    if n == 0 {
        return (h / 2, w / 2);
    }
    let (mut sy, mut sx) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if gt.get(y, x) {
                sy += (y + 1) as f64;
                sx += (x + 1) as f64;
            }
        }
    }
    ((sy / n as f64).round() as usize, (sx / n as f64).round() as usize)
}

fn s_region(pred: &ScoreMap, gt: &BinaryMask) -> f64 {
    let (h, w) = gt.dims();
    let (cy, cx) = centroid(gt);
    let total = (h * w) as f64;
    let mut score = 0.0;
    for (ys, xs) in [(0..cy, 0..cx), (0..cy, cx..w), (cy..h, 0..cx), (cy..h, cx..w)] {
        let area = ys.len() * xs.len();
        if area == 0 {
            continue;
        }
        let mut p = Vec::with_capacity(area);
        let mut g = Vec::with_capacity(area);
        for y in ys.clone() {
            for x in xs.clone() {
                p.push(pred.get(y, x));
                g.push(f64::from(u8::from(gt.get(y, x))));
            }
        }
        score += area as f64 / total * ssim(&p, &g);
    }
    score
}

pub fn s_measure(pred: &ScoreMap, gt: &BinaryMask, alpha: f64) -> Result<f64> {
    check(pred, gt)?;
    let u = gt.foreground_fraction();
    let s = if u == 0.0 {
        1.0 - pred.mean()
    } else if u == 1.0 {
        pred.mean()
    } else {
        alpha * s_object(pred.values(), gt.values()) + (1.0 - alpha) * s_region(pred, gt)
    };
    Ok(s.clamp(0.0, 1.0))
}

pub fn e_measure(pred: &ScoreMap, gt: &BinaryMask) -> Result<f64> {
    check(pred, gt)?;
    let fm: Vec<f64> = adaptive_binarize(pred).into_iter().map(|b| f64::from(u8::from(b))).collect();
    let n = fm.len() as f64;
    let u = gt.foreground_fraction();
    let fm_mean = fm.iter().sum::<f64>() / n;
    let e = if u == 0.0 {
        1.0 - fm_mean
    } else if u == 1.0 {
        fm_mean
    } else {
        let total: f64 = fm
            .iter()
            .zip(gt.values())
            .map(|(&f, &g)| {
                let a = f - fm_mean;
                let b = f64::from(g) - u;
                let denom = a * a + b * b;
                let xi = if denom == 0.0 { 0.0 } else { 2.0 * a * b / denom };
                (1.0 + xi).powi(2) / 4.0
            })
            .sum();
        total / n
    };
    Ok(e.clamp(0.0, 1.0))
}

/// Normalized 7x7 Gaussian with sigma 5.
fn gaussian_kernel() -> [[f64; 7]; 7] {
    let mut k = [[0.0; 7]; 7];
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(dy * dy + dx * dx) / 50.0).exp();
            sum += *v;
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    k
}

/// Distance to the nearest foreground pixel and that pixel's index; ties go
/// to the lowest row-major index.
fn nearest_foreground(gt: &BinaryMask) -> (Vec<f64>, Vec<usize>) {
    let (h, w) = gt.dims();
    let fg: Vec<(usize, usize)> = (0..h * w).filter(|&p| gt.values()[p] == 1).map(|p| (p / w, p % w)).collect();
    let mut dist = vec![0.0; h * w];
    let mut idx: Vec<usize> = (0..h * w).collect();
    for p in 0..h * w {
        if gt.values()[p] == 1 {
            continue;
        }
        let (y, x) = (p / w, p % w);
        let mut best = (usize::MAX, 0);
        for &(fy, fx) in &fg {
            let d2 = y.abs_diff(fy).pow(2) + x.abs_diff(fx).pow(2);
            if d2 < best.0 {
                best = (d2, fy * w + fx);
            }
        }
        dist[p] = (best.0 as f64).sqrt();
        idx[p] = best.1;
    }
    (dist, idx)
}

pub fn weighted_f_measure(pred: &ScoreMap, gt: &BinaryMask) -> Result<f64> {
    check(pred, gt)?;
    let (h, w) = gt.dims();
    if h > 128 || w > 128 {
        return Err(Error::Capacity(format!("weighted F-measure is limited to 128x128, got {h}x{w}")));
    }
    if gt.count_ones() == 0 {
        return Ok(0.0);
    }
    let g = gt.values();
    let e: Vec<f64> = pred.values().iter().zip(g).map(|(&p, &t)| (p - f64::from(t)).abs()).collect();
    let (dist, idx) = nearest_foreground(gt);
    let et: Vec<f64> = (0..h * w).map(|p| e[idx[p]]).collect();
    let k = gaussian_kernel();
    let mut ew = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if g[p] == 1 {
                // replicate-padded filtering of the propagated error
                let mut ea = 0.0;
                for (i, row) in k.iter().enumerate() {
                    let yy = (y + i).saturating_sub(3).min(h - 1);
                    for (j, kv) in row.iter().enumerate() {
                        let xx = (x + j).saturating_sub(3).min(w - 1);
                        ea += kv * et[yy * w + xx];
                    }
                }
                ew[p] = e[p].min(ea);
            } else {
                let importance = 2.0 - ((0.5f64).ln() / 5.0 * dist[p]).exp();
                ew[p] = e[p] * importance;
            }
        }
    }
    let n_fg = gt.count_ones() as f64;
    let ew_fg: f64 = (0..h * w).filter(|&p| g[p] == 1).map(|p| ew[p]).sum();
    let fpw: f64 = (0..h * w).filter(|&p| g[p] == 0).map(|p| ew[p]).sum();
    let tpw = n_fg - ew_fg;
    let r = 1.0 - ew_fg / n_fg;
    let p = if tpw + fpw > 0.0 { tpw / (tpw + fpw) } else { 0.0 };
    Ok(if r + p > 0.0 { (2.0 * r * p / (r + p)).clamp(0.0, 1.0) } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub mae: f64,
    pub f_beta: f64,
    pub s_alpha: f64,
    pub e_s: f64,
    pub f_beta_w: f64,
}

impl ImageMetrics {
    pub fn compute(pred: &ScoreMap, gt: &BinaryMask, policy: ThresholdPolicy) -> Result<Self> {
        Ok(Self {
            mae: mae(pred, gt)?,
            f_beta: f_measure(pred, gt, BETA2, policy)?,
            s_alpha: s_measure(pred, gt, ALPHA)?,
            e_s: e_measure(pred, gt)?,
            f_beta_w: weighted_f_measure(pred, gt)?,
        })
    }

    fn values(&self) -> [f64; 5] {
        [self.mae, self.f_beta, self.s_alpha, self.e_s, self.f_beta_w]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub policy: ThresholdPolicy,
    pub mean: ImageMetrics,
    pub per_image: Vec<ImageMetrics>,
}

impl MetricsReport {
    pub fn from_per_image(dataset: impl Into<String>, policy: ThresholdPolicy, per_image: Vec<ImageMetrics>) -> Self {
        let n = per_image.len().max(1) as f64;
        let mut sums = [0.0; 5];
        for m in &per_image {
            for (s, v) in sums.iter_mut().zip(m.values()) {
                *s += v;
            }
        }
        let mean = ImageMetrics {
            mae: sums[0] / n,
            f_beta: sums[1] / n,
            s_alpha: sums[2] / n,
            e_s: sums[3] / n,
            f_beta_w: sums[4] / n,
        };
        Self { dataset: dataset.into(), policy, mean, per_image }
    }

    /// One CSV row per image, preceded by a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,mae,f_beta,s_alpha,e_s,f_beta_w\n");
        for (i, m) in self.per_image.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{},{},{},{}", m.mae, m.f_beta, m.s_alpha, m.e_s, m.f_beta_w);
        }
        out
    }
}

/// Per-image metrics and their means.
pub fn evaluate(preds: &[ScoreMap], gts: &[BinaryMask], policy: ThresholdPolicy) -> Result<MetricsReport> {
    if preds.len() != gts.len() {
        return Err(Error::Contract(format!("{} predictions for {} ground-truth masks", preds.len(), gts.len())));
    }
    let per_image = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| ImageMetrics::compute(p, g, policy))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_per_image("", policy, per_image))
}
