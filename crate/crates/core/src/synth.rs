//! Deterministic synthetic multi-label corpus: 1–3 non-overlapping geometric
//! shapes over a textured background. The category vector records which shape
//! kinds are present and the ground-truth mask is the union of shape pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, CategoryLabel, ImageRgb, Sample};

/// Shape kinds in category-index order; a corpus with `C` categories uses the
/// first `C` kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
    Cross,
    Ring,
    Diamond,
    Bar,
    Frame,
}

pub const SHAPE_KINDS: [ShapeKind; 8] = [
    ShapeKind::Disk,
    ShapeKind::Square,
    ShapeKind::Triangle,
    ShapeKind::Cross,
    ShapeKind::Ring,
    ShapeKind::Diamond,
    ShapeKind::Bar,
    ShapeKind::Frame,
];

impl ShapeKind {
    /// Whether offset `(dy, dx)` from the shape center lies inside a shape of
    /// circumradius `r`.
    pub fn contains(self, dy: f64, dx: f64, r: f64) -> bool {
        let d = (dy * dy + dx * dx).sqrt();
        match self {
            ShapeKind::Disk => d <= r,
            ShapeKind::Square => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
            ShapeKind::Triangle => {
                // upright equilateral triangle inscribed in the circle
                let h = 0.5 * r;
                let half = 3f64.sqrt() / 2.0 * r;
                if dy > h || dy < -r {
                    return false;
                }
                let t = (dy + r) / (h + r);
                dx.abs() <= t * half
            }
            ShapeKind::Cross => {
                let arm = 0.35 * r;
                (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
            }
            ShapeKind::Ring => d <= r && d >= 0.5 * r,
            ShapeKind::Diamond => dx.abs() + dy.abs() <= r,
            ShapeKind::Bar => dx.abs() <= r && dy.abs() <= 0.4 * r,
            ShapeKind::Frame => {
                let m = dx.abs().max(dy.abs());
                m <= 0.8 * r && m >= 0.45 * r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub count: usize,
    pub image_size: usize,
    pub num_categories: usize,
    pub seed: u64,
    /// Upper bound on shapes per image (1..=3).
    pub max_shapes: usize,
}

impl SyntheticConfig {
    pub fn new(count: usize, image_size: usize, num_categories: usize, seed: u64) -> Self {
        Self { count, image_size, num_categories, seed, max_shapes: 3 }
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config("dataset count must be at least 1"));
        }
        if self.image_size < 32 {
            return Err(Error::config(format!("image_size {} is below 32", self.image_size)));
        }
        if !(2..=8).contains(&self.num_categories) {
            return Err(Error::config(format!("num_categories {} outside [2, 8]", self.num_categories)));
        }
        if !(1..=3).contains(&self.max_shapes) {
            return Err(Error::config(format!("max_shapes {} outside [1, 3]", self.max_shapes)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Placed {
    kind: ShapeKind,
    cy: f64,
    cx: f64,
    r: f64,
}

/// Per-sample stream seed so that sample `i` does not depend on `count`.
fn sample_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]
}

fn color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn render(cfg: &SyntheticConfig, index: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, index));
    let n = cfg.image_size;
    let size = n as f64;

    let n_shapes = rng.random_range(1..=cfg.max_shapes);
    let mut placed: Vec<Placed> = Vec::with_capacity(n_shapes);
    let mut attempts = 0;
    while placed.len() < n_shapes && attempts < 200 {
        attempts += 1;
        let r = size * rng.random_range(0.12..0.21);
        let lo = r + 1.0;
        let hi = size - r - 2.0;
        let cy = rng.random_range(lo..hi);
        let cx = rng.random_range(lo..hi);
        let clear = placed.iter().all(|p| {
            let d = ((p.cy - cy).powi(2) + (p.cx - cx).powi(2)).sqrt();
            d > p.r + r + 2.0
        });
        if clear {
            let kind = SHAPE_KINDS[rng.random_range(0..cfg.num_categories)];
            placed.push(Placed { kind, cy, cx, r });
        }
    }

    // background: base color, two low-frequency waves, a linear gradient
    let bg = random_color(&mut rng);
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..2)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let freq = rng.random_range(1.0..4.0) * std::f64::consts::TAU / size;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = [
                rng.random_range(-0.08..0.08),
                rng.random_range(-0.08..0.08),
                rng.random_range(-0.08..0.08),
            ];
            (theta, freq, phase, amp)
        })
        .collect();
    let grad_dir = rng.random_range(0.0..std::f64::consts::TAU);
    let grad_amp = rng.random_range(0.0..0.12);

    let mut colors = Vec::with_capacity(placed.len());
    for _ in &placed {
        let mut c = random_color(&mut rng);
        let mut tries = 0;
        while color_distance(c, bg) < 0.45 && tries < 100 {
            c = random_color(&mut rng);
            tries += 1;
        }
        let shade_dir = rng.random_range(0.0..std::f64::consts::TAU);
        let shade_amp = rng.random_range(0.05..0.18);
        colors.push((c, shade_dir, shade_amp));
    }

    let mut pixels = Vec::with_capacity(n * n);
    let mut mask = vec![0u8; n * n];
    for y in 0..n {
        for x in 0..n {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let inside = placed
                .iter()
                .enumerate()
                .find(|(_, p)| p.kind.contains(fy - p.cy, fx - p.cx, p.r));
            let mut px = match inside {
                Some((k, p)) => {
                    mask[y * n + x] = 1;
                    let (c, dir, amp) = colors[k];
                    let t = ((fy - p.cy) * dir.sin() + (fx - p.cx) * dir.cos()) / p.r;
                    [c[0] + amp * t, c[1] + amp * t, c[2] + amp * t]
                }
                None => {
                    let mut px = bg;
                    for &(theta, freq, phase, amp) in &waves {
                        let s = ((fy * theta.sin() + fx * theta.cos()) * freq + phase).sin();
                        for c in 0..3 {
                            px[c] += amp[c] * s;
                        }
                    }
                    let g = ((fy * grad_dir.sin() + fx * grad_dir.cos()) / size - 0.5) * grad_amp;
                    [px[0] + g, px[1] + g, px[2] + g]
                }
            };
            for c in px.iter_mut() {
                *c = (*c + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0);
            }
            pixels.push(px);
        }
    }

    let mut bits = vec![0u8; cfg.num_categories];
    for p in &placed {
        let idx = SHAPE_KINDS.iter().position(|&k| k == p.kind).expect("kind in table");
        bits[idx] = 1;
    }

    Sample {
        image: ImageRgb::new(n, n, pixels).expect("synthetic pixels are clamped"),
        category: CategoryLabel::new(bits).expect("bits are binary"),
        gt_mask: BinaryMask::new(n, n, mask).expect("mask is binary"),
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    Ok((0..cfg.count).map(|i| render(cfg, i)).collect())
}

/// Corpus with the default of up to three shapes per image.
pub fn gen_synthetic_dataset(count: usize, image_size: usize, num_categories: usize, seed: u64) -> Result<Vec<Sample>> {
    generate(&SyntheticConfig::new(count, image_size, num_categories, seed))
}
