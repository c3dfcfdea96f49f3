//! Image, score-map and mask containers plus the two shared map operations:
//! min-max normalization and corner-aligned bilinear resizing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RGB image with channel values in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    height: usize,
    width: usize,
    data: Vec<[f64; 3]>,
}

impl ImageRgb {
    pub fn new(height: usize, width: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "image {height}x{width} needs {} pixels, got {}",
                height * width,
                data.len()
            )));
        }
        for px in &data {
            for &c in px {
                if !c.is_finite() || !(0.0..=1.0).contains(&c) {
                    return Err(Error::numeric(format!("channel value {c} outside [0, 1]")));
                }
            }
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        Self { height: self.height, width: self.width, data }
    }

    /// Channel-planar `[3, H, W]` copy, the layout the networks consume.
    pub fn to_planar_f32(&self) -> Vec<f32> {
        let n = self.data.len();
        let mut out = vec![0.0f32; 3 * n];
        for (i, px) in self.data.iter().enumerate() {
            for c in 0..3 {
                out[c * n + i] = px[c] as f32;
            }
        }
        out
    }
}

/// Real-valued map with every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("empty map {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
            return Err(Error::numeric(format!("score {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds a map after clamping every value into `[0, 1]`. NaN is rejected.
    pub fn clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in data.iter_mut() {
            if v.is_nan() {
                return Err(Error::numeric("NaN score"));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(height, width, data)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        Self { height: self.height, width: self.width, data }
    }

    /// `1 - v` at every pixel.
    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
        }
    }

    pub(crate) fn ensure_same_dims(&self, other: (usize, usize), what: &str) -> Result<()> {
        if self.dims() != other {
            return Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.0, other.1
            )));
        }
        Ok(())
    }
}

/// Strictly binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("empty mask {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::numeric(format!("mask value {v} is not binary")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.count_ones() as f64 / self.data.len() as f64
    }

    pub fn to_score_map(&self) -> ScoreMap {
        ScoreMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        Self { height: self.height, width: self.width, data }
    }

    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::shape("iou of masks with different dims"));
        }
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += usize::from(a & b);
            union += usize::from(a | b);
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }
}

/// Where a pseudo label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Pixel,
    Superpixel,
    FusedAvg,
    FusedIntersect,
    FusedUnion,
    Ys,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub mask: BinaryMask,
    pub provenance: Provenance,
}

/// Multi-hot image-level category vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryLabel {
    bits: Vec<u8>,
}

impl CategoryLabel {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::shape("category vector is empty"));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::numeric("category bits must be 0 or 1"));
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn num_categories(&self) -> usize {
        self.bits.len()
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

/// One synthetic training/evaluation sample. `gt_mask` is only ever read by
/// evaluation code.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageRgb,
    pub category: CategoryLabel,
    pub gt_mask: BinaryMask,
}

/// Min-max normalization of a raw map into `[0, 1]`. A constant map becomes
/// all zeros.
pub fn normalize_map(raw: &[f64], height: usize, width: usize) -> Result<ScoreMap> {
    if raw.len() != height * width {
        return Err(Error::shape(format!(
            "normalize_map: {} values for {height}x{width}",
            raw.len()
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("normalize_map: non-finite input"));
    }
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let data = if hi > lo {
        let span = hi - lo;
        raw.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; raw.len()]
    };
    ScoreMap::new(height, width, data)
}

/// Source taps for each destination index under corner-aligned sampling:
/// `(lower index, upper index, lower weight, upper weight)`.
///
/// The second half of the table mirrors the first, so resampling commutes
/// bit-exactly with a horizontal flip.
pub fn corner_aligned_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64, f64)> {
    if src == 1 {
        return vec![(0, 0, 1.0, 0.0); dst];
    }
    if dst == 1 {
        // the axis centre: the middle pixel, or the mean of the middle two
        let (lo, hi) = ((src - 1) / 2, src / 2);
        let frac = if lo == hi { 0.0 } else { 0.5 };
        return vec![(lo, hi, 1.0 - frac, frac)];
    }
    let mut taps = vec![(0, 0, 0.0, 0.0); dst];
    for i in 0..dst.div_ceil(2) {
        let pos = (i * (src - 1)) as f64 / (dst - 1) as f64;
        let lo = (pos.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        let frac = pos - lo as f64;
        taps[i] = (lo, hi, 1.0 - frac, frac);
        taps[dst - 1 - i] = (src - 1 - hi, src - 1 - lo, frac, 1.0 - frac);
    }
    taps
}

fn bilinear<const C: usize>(
    src: &[[f64; C]],
    sh: usize,
    sw: usize,
    dh: usize,
    dw: usize,
) -> Vec<[f64; C]> {
    let ys = corner_aligned_taps(sh, dh);
    let xs = corner_aligned_taps(sw, dw);
    let mut out = Vec::with_capacity(dh * dw);
    for &(y0, y1, gy, fy) in &ys {
        for &(x0, x1, gx, fx) in &xs {
            let a = src[y0 * sw + x0];
            let b = src[y0 * sw + x1];
            let c = src[y1 * sw + x0];
            let d = src[y1 * sw + x1];
            let mut px = [0.0; C];
            for k in 0..C {
                let top = a[k] * gx + b[k] * fx;
                let bottom = c[k] * gx + d[k] * fx;
                px[k] = top * gy + bottom * fy;
            }
            out.push(px);
        }
    }
    out
}

/// Anything that can be resampled to a new grid size.
pub trait Resizable: Sized {
    fn resize_bilinear(&self, height: usize, width: usize) -> Result<Self>;
}

fn check_target(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::config(format!("resize target {height}x{width} has a zero dimension")));
    }
    Ok(())
}

impl Resizable for ScoreMap {
    fn resize_bilinear(&self, height: usize, width: usize) -> Result<Self> {
        check_target(height, width)?;
        if self.dims() == (height, width) {
            return Ok(self.clone());
        }
        let src: Vec<[f64; 1]> = self.data.iter().map(|&v| [v]).collect();
        let out = bilinear(&src, self.height, self.width, height, width);
        ScoreMap::clamped(height, width, out.into_iter().map(|[v]| v).collect())
    }
}

impl Resizable for ImageRgb {
    fn resize_bilinear(&self, height: usize, width: usize) -> Result<Self> {
        check_target(height, width)?;
        if self.dims() == (height, width) {
            return Ok(self.clone());
        }
        let mut out = bilinear(&self.data, self.height, self.width, height, width);
        for px in out.iter_mut() {
            for c in px.iter_mut() {
                *c = c.clamp(0.0, 1.0);
            }
        }
        ImageRgb::new(height, width, out)
    }
}

/// Corner-aligned bilinear resize of a map or image.
pub fn resize_bilinear<R: Resizable>(input: &R, height: usize, width: usize) -> Result<R> {
    input.resize_bilinear(height, width)
}
