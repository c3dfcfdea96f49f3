//! Pseudo labels: the pixel-wise and superpixel-wise refinement branches,
//! binarization, fusion operators, and the decoder target `Ys`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, ImageRgb, Provenance, PseudoLabel, ScoreMap};
use crate::refine::{slic, superpixel_refine, Affinity, CrfKernel, CrfParams, PamrParams, SlicParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub pamr: PamrParams,
    pub slic: SlicParams,
    pub crf: CrfParams,
    /// Binarization threshold applied after the CRF.
    pub threshold: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { pamr: PamrParams::default(), slic: SlicParams::default(), crf: CrfParams::default(), threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelPair {
    pub y1: PseudoLabel,
    pub y2: PseudoLabel,
}

/// `1` where `map > threshold`.
pub fn binarize(map: &ScoreMap, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config(format!("threshold {threshold} must lie in (0, 1)")));
    }
    BinaryMask::new(map.height(), map.width(), map.values().iter().map(|&v| u8::from(v > threshold)).collect())
}

/// Runs both refinement branches on a CAM. The CRF kernel is built once and
/// shared by the two branches.
pub fn synthesize_labels(image: &ImageRgb, cam: &ScoreMap, cfg: &RefineConfig) -> Result<LabelPair> {
    cam.ensure_same_dims(image.dims(), "synthesize_labels")?;
    let crf = CrfKernel::new(image, &cfg.crf)?;
    let pixel = Affinity::new(image, &cfg.pamr)?.refine(cam, cfg.pamr.iterations)?;
    let pixel = crf.refine(&pixel, cfg.crf.iterations)?;
    let seg = slic(image, &cfg.slic)?;
    let sp = superpixel_refine(cam, &seg)?;
    let sp = crf.refine(&sp, cfg.crf.iterations)?;
    Ok(LabelPair {
        y1: PseudoLabel { mask: binarize(&pixel, cfg.threshold)?, provenance: Provenance::Pixel },
        y2: PseudoLabel { mask: binarize(&sp, cfg.threshold)?, provenance: Provenance::Superpixel },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuseMode {
    Avg,
    Intersect,
    Union,
}

impl FuseMode {
    pub fn provenance(self) -> Provenance {
        match self {
            FuseMode::Avg => Provenance::FusedAvg,
            FuseMode::Intersect => Provenance::FusedIntersect,
            FuseMode::Union => Provenance::FusedUnion,
        }
    }
}

/// Result of [`fuse`]: averaging yields a soft map, the logical operators a
/// mask.
#[derive(Debug, Clone, PartialEq)]
pub enum Fused {
    Soft(ScoreMap),
    Mask(BinaryMask),
}

impl Fused {
    pub fn to_score_map(&self) -> ScoreMap {
        match self {
            Fused::Soft(m) => m.clone(),
            Fused::Mask(m) => m.to_score_map(),
        }
    }
}

pub fn fuse(a: &BinaryMask, b: &BinaryMask, mode: FuseMode) -> Result<Fused> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "fuse: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let (h, w) = a.dims();
    let pairs = a.values().iter().zip(b.values());
    Ok(match mode {
        FuseMode::Avg => Fused::Soft(ScoreMap::new(h, w, pairs.map(|(&x, &y)| f64::from(x + y) * 0.5).collect())?),
        FuseMode::Intersect => Fused::Mask(BinaryMask::new(h, w, pairs.map(|(&x, &y)| x & y).collect())?),
        FuseMode::Union => Fused::Mask(BinaryMask::new(h, w, pairs.map(|(&x, &y)| x | y).collect())?),
    })
}

/// Decoder target: PAMR of the mean filter prediction. Plain values, so it
/// can never carry a gradient.
pub fn make_ys(p1: &ScoreMap, p2: &ScoreMap, image: &ImageRgb, pamr: &PamrParams) -> Result<ScoreMap> {
    make_ys_with(&Affinity::new(image, pamr)?, p1, p2, pamr.iterations)
}

/// [`make_ys`] with precomputed affinities.
pub fn make_ys_with(aff: &Affinity, p1: &ScoreMap, p2: &ScoreMap, iterations: usize) -> Result<ScoreMap> {
    p1.ensure_same_dims(p2.dims(), "make_ys")?;
    let (h, w) = p1.dims();
    let avg: Vec<f64> = p1.values().iter().zip(p2.values()).map(|(a, b)| (a + b) * 0.5).collect();
    aff.refine(&ScoreMap::clamped(h, w, avg)?, iterations)
}
