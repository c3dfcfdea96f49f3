//! Class activation maps and the multi-scale, flip-averaged CAM ensemble.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{normalize_map, resize_bilinear, ImageRgb, ScoreMap};
use crate::nets::{encoder_nodes, head_nodes, batch_tensor, check_input_dims, STRIDE};
use crate::ndgrad::{Graph, ParamSet};

/// How class scores weight the per-class maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamWeighting {
    /// Weight by the logistic of the class logit (always non-negative).
    #[default]
    Sigmoid,
    /// Weight by the raw logit, which may be negative.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CamConfig {
    /// Ensemble scales, relative to `base_scale`.
    pub scales: Vec<f64>,
    /// Input magnification at which the classifier was trained; every
    /// ensemble member runs at `scale * base_scale`.
    pub base_scale: f64,
    pub flip: bool,
    pub weighting: CamWeighting,
}

impl Default for CamConfig {
    fn default() -> Self {
        Self { scales: vec![0.5, 0.75, 1.0, 1.25], base_scale: 2.0, flip: true, weighting: CamWeighting::Sigmoid }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CamResult {
    /// Fused activation map `M`.
    pub map: ScoreMap,
    pub per_class_maps: Vec<ScoreMap>,
    /// Raw class logits.
    pub scores: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Fuses per-class maps already at image resolution with class scores.
pub fn fuse_class_maps(per_class: &[ScoreMap], scores: &[f64], weighting: CamWeighting) -> Result<ScoreMap> {
    let first = per_class.first().ok_or_else(|| Error::Contract("no class maps".into()))?;
    if per_class.len() != scores.len() {
        return Err(Error::shape(format!("{} class maps, {} scores", per_class.len(), scores.len())));
    }
    let (h, w) = first.dims();
    let mut acc = vec![0.0; h * w];
    for (m, &s) in per_class.iter().zip(scores) {
        let weight = match weighting {
            CamWeighting::Sigmoid => sigmoid(s),
            CamWeighting::Raw => s,
        };
        for (a, &v) in acc.iter_mut().zip(m.values()) {
            *a += v * weight;
        }
    }
    normalize_map(&acc, h, w)
}

/// CAM of one image whose sides are multiples of 32.
pub fn compute_cam(params: &ParamSet, image: &ImageRgb, weighting: CamWeighting) -> Result<CamResult> {
    let (h, w) = image.dims();
    check_input_dims(h, w)?;
    if !params.all_finite() {
        return Err(Error::numeric("classifier parameters contain non-finite values"));
    }
    let mut g = Graph::<f32>::new();
    let b = params.bind(&mut g, false);
    let x = g.constant(batch_tensor(&[image])?);
    let feats = encoder_nodes(&mut g, &b, x)?;
    let scores_node = head_nodes(&mut g, &b, feats.f5)?;
    let (wt, bias) = (b.id("head.w")?, b.opt("head.b"));
    // the head applied at every F5 position
    let act = g.conv1x1(feats.f5, wt, bias)?;
    let act = g.relu(act)?;
    let scores: Vec<f64> = g.value(scores_node).data().iter().map(|&v| f64::from(v)).collect();
    let t = g.value(act);
    let (_, c, fh, fw) = t.dims4()?;
    let mut per_class_maps = Vec::with_capacity(c);
    for plane in t.data().chunks(fh * fw) {
        let raw: Vec<f64> = plane.iter().map(|&v| f64::from(v)).collect();
        let small = normalize_map(&raw, fh, fw)?;
        per_class_maps.push(resize_bilinear(&small, h, w)?);
    }
    let map = fuse_class_maps(&per_class_maps, &scores, weighting)?;
    Ok(CamResult { map, per_class_maps, scores })
}

/// Side length for `scale`, rounded to the nearest multiple of 32.
pub fn scaled_side(side: usize, scale: f64) -> Result<usize> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::config(format!("scale {scale} must be positive")));
    }
    let blocks = (side as f64 * scale / STRIDE as f64).round() as usize;
    if blocks == 0 {
        return Err(Error::config(format!("scale {scale} shrinks side {side} below {STRIDE}")));
    }
    Ok(blocks * STRIDE)
}

/// Mean of `compute_cam` over every scale, with and without a horizontal
/// flip, each member brought back to the input frame; renormalized.
///
/// Per scale the plain and flipped members are summed first, which makes the
/// ensemble exactly equivariant to flipping the input.
pub fn multi_inference_cam(params: &ParamSet, image: &ImageRgb, cfg: &CamConfig) -> Result<ScoreMap> {
    if cfg.scales.is_empty() {
        return Err(Error::config("at least one CAM scale is required"));
    }
    let (h, w) = image.dims();
    let mut acc = vec![0.0f64; h * w];
    let mut members = 0usize;
    for &s in &cfg.scales {
        let s = s * cfg.base_scale;
        let (sh, sw) = (scaled_side(h, s)?, scaled_side(w, s)?);
        let scaled = resize_bilinear(image, sh, sw)?;
        let plain = compute_cam(params, &scaled, cfg.weighting)?.map;
        let plain = resize_bilinear(&plain, h, w)?;
        if cfg.flip {
            let flipped = compute_cam(params, &scaled.flip_horizontal(), cfg.weighting)?.map;
            let flipped = resize_bilinear(&flipped.flip_horizontal(), h, w)?;
            for ((a, &u), &v) in acc.iter_mut().zip(plain.values()).zip(flipped.values()) {
                *a += u + v;
            }
            members += 2;
        } else {
            for (a, &u) in acc.iter_mut().zip(plain.values()) {
                *a += u;
            }
            members += 1;
        }
    }
    let inv = 1.0 / members as f64;
    let mean: Vec<f64> = acc.iter().map(|a| a * inv).collect();
    normalize_map(&mean, h, w)
}
