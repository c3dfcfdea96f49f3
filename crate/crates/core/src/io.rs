//! On-disk formats: 8-bit PNG for images/maps/masks, the `WSF1` raw tensor
//! format, and the JSON dataset manifest.
//!
//! `WSF1` layout (all little-endian): the 4 magic bytes `WSF1`, the rank as
//! `u32`, one `u32` per dimension, then the `f32` payload in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, CategoryLabel, ImageRgb, Provenance, Sample, ScoreMap};

pub const WSF_MAGIC: &[u8; 4] = b"WSF1";

pub fn encode_wsf(dims: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    let numel: usize = dims.iter().product();
    if numel != data.len() {
        return Err(Error::shape(format!("wsf dims {dims:?} hold {numel} values, payload has {}", data.len())));
    }
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(WSF_MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::shape(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_wsf(bytes: &[u8], origin: &str) -> Result<(Vec<usize>, Vec<f32>)> {
    let bad = |message: &str| Error::Format { path: origin.to_string(), message: message.to_string() };
    if bytes.len() < 8 || &bytes[..4] != WSF_MAGIC {
        return Err(bad("missing WSF1 magic"));
    }
    let word = |i: usize| -> Option<u32> {
        bytes.get(i..i + 4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };
    let rank = word(4).ok_or_else(|| bad("truncated header"))? as usize;
    let mut dims = Vec::with_capacity(rank);
    for k in 0..rank {
        dims.push(word(8 + 4 * k).ok_or_else(|| bad("truncated dims"))? as usize);
    }
    let start = 8 + 4 * rank;
    let numel: usize = dims.iter().product();
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() != 4 * numel {
        return Err(bad(&format!("payload holds {} bytes, dims {dims:?} need {}", payload.len(), 4 * numel)));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((dims, data))
}

pub fn write_wsf(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, encode_wsf(dims, data)?)?;
    Ok(())
}

pub fn read_wsf(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = fs::read(path)?;
    decode_wsf(&bytes, &path.display().to_string())
}

pub fn write_map_wsf(path: &Path, map: &ScoreMap) -> Result<()> {
    let data: Vec<f32> = map.values().iter().map(|&v| v as f32).collect();
    write_wsf(path, &[map.height(), map.width()], &data)
}

pub fn read_map_wsf(path: &Path) -> Result<ScoreMap> {
    let (dims, data) = read_wsf(path)?;
    if dims.len() != 2 {
        return Err(Error::Format { path: path.display().to_string(), message: format!("expected rank 2, got {dims:?}") });
    }
    ScoreMap::clamped(dims[0], dims[1], data.into_iter().map(f64::from).collect())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_image_png(path: &Path, img: &ImageRgb) -> Result<()> {
    ensure_parent(path)?;
    let mut out = RgbImage::new(img.width() as u32, img.height() as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let p = img.get(y as usize, x as usize);
        *px = Rgb([quantize(p[0]), quantize(p[1]), quantize(p[2])]);
    }
    out.save(path)?;
    Ok(())
}

pub fn read_image_png(path: &Path) -> Result<ImageRgb> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    ImageRgb::from_fn(h as usize, w as usize, |y, x| {
        let p = img.get_pixel(x as u32, y as u32).0;
        [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]
    })
}

/// Grayscale PNG where byte `v` encodes `v / 255`.
pub fn write_map_png(path: &Path, map: &ScoreMap) -> Result<()> {
    ensure_parent(path)?;
    let mut out = GrayImage::new(map.width() as u32, map.height() as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        *px = Luma([quantize(map.get(y as usize, x as usize))]);
    }
    out.save(path)?;
    Ok(())
}

pub fn read_map_png(path: &Path) -> Result<ScoreMap> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    ScoreMap::from_fn(h as usize, w as usize, |y, x| img.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0)
}

/// Masks are stored as 0/255 grayscale.
pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_map_png(path, &mask.to_score_map())
}

pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(BinaryMask::from_fn(h as usize, w as usize, |y, x| img.get_pixel(x as u32, y as u32).0[0] > 127))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image_path: String,
    pub gt_path: String,
    pub category_bits: Vec<u8>,
}

/// Manifest row for a persisted pseudo label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub image_path: String,
    pub label_path: String,
    pub provenance: Provenance,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes every sample as `img_XXXXX.png` / `gt_XXXXX.png` under `dir` plus
/// `manifest.json`; paths in the manifest are relative to `dir`.
pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir)?;
    let mut manifest = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let image_path = format!("img_{i:05}.png");
        let gt_path = format!("gt_{i:05}.png");
        write_image_png(&dir.join(&image_path), &s.image)?;
        write_mask_png(&dir.join(&gt_path), &s.gt_mask)?;
        manifest.push(ManifestEntry { image_path, gt_path, category_bits: s.category.bits().to_vec() });
    }
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn resolve(dir: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let manifest: Vec<ManifestEntry> = read_json(&dir.join("manifest.json"))?;
    manifest
        .iter()
        .map(|e| {
            let image = read_image_png(&resolve(dir, &e.image_path))?;
            let gt_mask = read_mask_png(&resolve(dir, &e.gt_path))?;
            if gt_mask.dims() != image.dims() {
                return Err(Error::shape(format!("{}: mask and image dims differ", e.gt_path)));
            }
            Ok(Sample { image, category: CategoryLabel::new(e.category_bits.clone())?, gt_mask })
        })
        .collect()
}
