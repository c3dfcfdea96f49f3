//! Pixel-adaptive refinement: scores diffuse to neighbors with similar color.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ImageRgb, ScoreMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PamrParams {
    pub iterations: usize,
    pub radii: Vec<usize>,
    pub temperature: f64,
}

impl Default for PamrParams {
    fn default() -> Self {
        Self { iterations: 10, radii: vec![1, 2, 4, 8], temperature: 0.01 }
    }
}

impl PamrParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("pamr iterations must be at least 1"));
        }
        if self.radii.is_empty() || self.radii.contains(&0) {
            return Err(Error::config("pamr radii must be a non-empty list of values >= 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("pamr temperature must be positive"));
        }
        Ok(())
    }
}

/// Row-stochastic neighbor weights of one image, reusable across maps.
#[derive(Debug, Clone)]
pub struct Affinity {
    height: usize,
    width: usize,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    weights: Vec<f64>,
}

impl Affinity {
    pub fn new(image: &ImageRgb, params: &PamrParams) -> Result<Self> {
        params.validate()?;
        let (h, w) = image.dims();
        let mut radii = params.radii.clone();
        radii.sort_unstable();
        radii.dedup();
        let mut deltas: Vec<(isize, isize)> = vec![(0, 0)];
        for &r in &radii {
            let r = r as isize;
            for dy in [-r, 0, r] {
                for dx in [-r, 0, r] {
                    if (dy, dx) != (0, 0) {
                        deltas.push((dy, dx));
                    }
                }
            }
        }
        let px = image.pixels();
        let mut offsets = Vec::with_capacity(h * w + 1);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        let mut logits = Vec::with_capacity(deltas.len());
        offsets.push(0);
        for y in 0..h {
            for x in 0..w {
                let ci = px[y * w + x];
                logits.clear();
                let start = neighbors.len();
                for &(dy, dx) in &deltas {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    let cj = px[j];
                    let d2: f64 = (0..3).map(|k| (ci[k] - cj[k]).powi(2)).sum();
                    neighbors.push(j as u32);
                    logits.push(-d2 / params.temperature);
                }
                // the center contributes logit 0, the maximum
                let total: f64 = logits.iter().map(|l| l.exp()).sum();
                weights.extend(logits.iter().map(|l| l.exp() / total));
                debug_assert_eq!(neighbors.len() - start, logits.len());
                offsets.push(neighbors.len());
            }
        }
        Ok(Self { height: h, width: w, offsets, neighbors, weights })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Neighbor indices and weights of pixel `i` (row-major).
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        (&self.neighbors[a..b], &self.weights[a..b])
    }

    /// One propagation step. Written as `m_i + sum_j a_ij (m_j - m_i)` so a
    /// constant map is reproduced exactly.
    pub fn step(&self, map: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let (nb, wt) = self.row(i);
            let mi = map[i];
            let mut acc = 0.0;
            for (&j, &a) in nb.iter().zip(wt) {
                acc += a * (map[j as usize] - mi);
            }
            *o = mi + acc;
        }
    }

    pub fn refine(&self, map: &ScoreMap, iterations: usize) -> Result<ScoreMap> {
        map.ensure_same_dims(self.dims(), "pamr_refine")?;
        let mut cur = map.values().to_vec();
        let mut next = vec![0.0; cur.len()];
        for _ in 0..iterations {
            self.step(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        ScoreMap::clamped(self.height, self.width, cur)
    }
}

pub fn pamr_refine(image: &ImageRgb, map: &ScoreMap, params: &PamrParams) -> Result<ScoreMap> {
    map.ensure_same_dims(image.dims(), "pamr_refine")?;
    Affinity::new(image, params)?.refine(map, params.iterations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(h: usize, w: usize) -> ImageRgb {
        ImageRgb::from_fn(h, w, |_, _| [0.4, 0.5, 0.6]).unwrap()
    }

    #[test]
    fn rows_are_stochastic() {
        let img = ImageRgb::from_fn(9, 11, |y, x| [(y as f64 / 8.0), (x as f64 / 10.0), 0.3]).unwrap();
        let aff = Affinity::new(&img, &PamrParams::default()).unwrap();
        for i in 0..99 {
            let s: f64 = aff.row(i).1.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_map_is_fixed_point() {
        let img = ImageRgb::from_fn(12, 12, |y, x| [((y * x) % 5) as f64 / 4.0, 0.2, (y % 3) as f64 / 2.0]).unwrap();
        let m = ScoreMap::constant(12, 12, 0.37).unwrap();
        assert_eq!(pamr_refine(&img, &m, &PamrParams::default()).unwrap(), m);
    }

    #[test]
    fn matches_dense_matrix_power_on_flat_grid() {
        // On a flat image every valid neighbor gets the same weight. Build the
        // 25x25 transition matrix by hand and iterate it.
        let (h, w) = (5, 5);
        let params = PamrParams { iterations: 3, radii: vec![1], temperature: 0.5 };
        let mut a = vec![vec![0.0; 25]; 25];
        for y in 0..h {
            for x in 0..w {
                let mut nb = Vec::new();
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let (ny, nx) = (y as i32 + dy, x as i32 + dx);
                        if (0..5).contains(&ny) && (0..5).contains(&nx) {
                            nb.push(ny as usize * 5 + nx as usize);
                        }
                    }
                }
                for &j in &nb {
                    a[y * 5 + x][j] = 1.0 / nb.len() as f64;
                }
            }
        }
        let mut v = vec![0.0; 25];
        v[12] = 0.9;
        let m = ScoreMap::new(5, 5, v.clone()).unwrap();
        let aff = Affinity::new(&flat(5, 5), &params).unwrap();
        let mut cur = v;
        let mut got = m.values().to_vec();
        for it in 0..3 {
            cur = (0..25).map(|i| (0..25).map(|j| a[i][j] * cur[j]).sum()).collect();
            let mut next = vec![0.0; 25];
            aff.step(&got, &mut next);
            got = next;
            for (g, c) in got.iter().zip(&cur) {
                assert!((g - c).abs() < 1e-12, "iteration {it}");
            }
        }
        // one step from the center stays on interior pixels, where the
        // transition matrix is doubly stochastic
        let mut one = vec![0.0; 25];
        aff.step(m.values(), &mut one);
        assert!((one.iter().sum::<f64>() - 0.9).abs() < 1e-6);
    }

    #[test]
    fn two_color_split_contains_mass() {
        let img = ImageRgb::from_fn(16, 16, |_, x| if x < 8 { [0.1, 0.1, 0.1] } else { [0.9, 0.9, 0.9] }).unwrap();
        let seed = ScoreMap::from_fn(16, 16, |y, x| if x < 8 && (4..12).contains(&y) { 1.0 } else { 0.0 }).unwrap();
        let params = PamrParams { iterations: 10, temperature: 0.01, ..PamrParams::default() };
        let out = pamr_refine(&img, &seed, &params).unwrap();
        let (mut left, mut right) = (0.0, 0.0);
        for y in 0..16 {
            for x in 0..16 {
                if x < 8 {
                    left += out.get(y, x);
                } else {
                    right += out.get(y, x);
                }
            }
        }
        assert!(left > 0.0 && right < 0.01 * left, "left {left} right {right}");
    }

    #[test]
    fn output_in_unit_range_and_dims_checked() {
        let img = ImageRgb::from_fn(8, 8, |y, x| [(y % 2) as f64, (x % 2) as f64, 0.5]).unwrap();
        let m = ScoreMap::from_fn(8, 8, |y, x| ((y + x) % 3) as f64 / 2.0).unwrap();
        let out = pamr_refine(&img, &m, &PamrParams::default()).unwrap();
        assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let wrong = ScoreMap::constant(8, 9, 0.1).unwrap();
        assert!(matches!(pamr_refine(&img, &wrong, &PamrParams::default()), Err(Error::Shape(_))));
    }
}
