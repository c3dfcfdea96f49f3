//! Fully connected two-label CRF with Gaussian pairwise kernels, solved by
//! mean-field iteration with exact O(N²) message passing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ImageRgb, ScoreMap};

pub const UNARY_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrfParams {
    /// Bilateral (appearance) kernel weight.
    pub w1: f64,
    /// Smoothness kernel weight.
    pub w2: f64,
    pub theta_alpha: f64,
    pub theta_beta: f64,
    pub theta_gamma: f64,
    pub iterations: usize,
    /// Largest pixel count accepted before refusing with a capacity error.
    pub max_pixels: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            w1: 4.0,
            w2: 3.0,
            theta_alpha: 49.0,
            theta_beta: 0.2,
            theta_gamma: 3.0,
            iterations: 5,
            max_pixels: 96 * 96,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) {
            return Err(Error::config("crf weights must be non-negative"));
        }
        for (name, v) in [("theta_alpha", self.theta_alpha), ("theta_beta", self.theta_beta), ("theta_gamma", self.theta_gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("crf {name} must be positive")));
            }
        }
        if self.iterations == 0 {
            return Err(Error::config("crf iterations must be at least 1"));
        }
        Ok(())
    }
}

/// Dense pairwise kernel of one image: `k(i, j)` for `i != j`, zero diagonal.
///
/// Each Gaussian kernel is symmetrically normalized by its degrees,
/// `K_ij / sqrt(d_i d_j)`, before weighting, so messages stay on the scale of
/// the weights whatever the image size.
#[derive(Debug, Clone)]
pub struct CrfKernel {
    height: usize,
    width: usize,
    matrix: Vec<f64>,
    row_sums: Vec<f64>,
}

impl CrfKernel {
    pub fn new(image: &ImageRgb, params: &CrfParams) -> Result<Self> {
        params.validate()?;
        let (h, w) = image.dims();
        let n = h * w;
        if n > params.max_pixels {
            return Err(Error::Capacity(format!(
                "dense CRF on {h}x{w} exceeds the budget of {} pixels; downscale the image first",
                params.max_pixels
            )));
        }
        // spatial factors are separable, so tabulate them per axis offset
        let axis = |theta: f64, len: usize| -> Vec<f64> {
            (0..len).map(|d| (-((d * d) as f64) / (2.0 * theta * theta)).exp()).collect()
        };
        let span = h.max(w);
        let (ay, gy) = (axis(params.theta_alpha, span), axis(params.theta_gamma, span));
        let beta2 = 2.0 * params.theta_beta * params.theta_beta;
        let px = image.pixels();
        let bilateral = |i: usize, j: usize| {
            let (ci, cj) = (px[i], px[j]);
            let dc = (ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2) + (ci[2] - cj[2]).powi(2);
            ay[(i / w).abs_diff(j / w)] * ay[(i % w).abs_diff(j % w)] * (-dc / beta2).exp()
        };
        let smooth = |i: usize, j: usize| gy[(i / w).abs_diff(j / w)] * gy[(i % w).abs_diff(j % w)];
        // degrees of the two raw kernels, for symmetric normalization
        let mut deg_a = vec![0.0; n];
        let mut deg_g = vec![0.0; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, g) = (bilateral(i, j), smooth(i, j));
                deg_a[i] += a;
                deg_a[j] += a;
                deg_g[i] += g;
                deg_g[j] += g;
            }
        }
        let inv_sqrt = |d: Vec<f64>| d.into_iter().map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 }).collect::<Vec<f64>>();
        let (na, ng) = (inv_sqrt(deg_a), inv_sqrt(deg_g));
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let mut k = 0.0;
                if params.w1 > 0.0 {
                    k += params.w1 * bilateral(i, j) * na[i] * na[j];
                }
                if params.w2 > 0.0 {
                    k += params.w2 * smooth(i, j) * ng[i] * ng[j];
                }
                matrix[i * n + j] = k;
                matrix[j * n + i] = k;
            }
        }
        let row_sums = matrix.chunks(n).map(|r| r.iter().sum()).collect();
        Ok(Self { height: h, width: w, matrix, row_sums })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.height * self.width + j]
    }

    /// Runs mean field and returns the `[background, foreground]` marginals
    /// after every iteration.
    pub fn mean_field(&self, map: &ScoreMap, iterations: usize) -> Result<Vec<Vec<[f64; 2]>>> {
        map.ensure_same_dims(self.dims(), "crf_refine")?;
        let n = self.height * self.width;
        let unary: Vec<[f64; 2]> = map
            .values()
            .iter()
            .map(|&p| {
                let p = p.clamp(UNARY_CLAMP, 1.0 - UNARY_CLAMP);
                [-(1.0 - p).ln(), -p.ln()]
            })
            .collect();
        let mut q: Vec<[f64; 2]> = unary.iter().map(|&u| softmin(u)).collect();
        let mut trace = Vec::with_capacity(iterations);
        let mut fg = vec![0.0; n];
        for _ in 0..iterations {
            for (f, qi) in fg.iter_mut().zip(&q) {
                *f = qi[1];
            }
            for (i, qi) in q.iter_mut().enumerate() {
                let row = &self.matrix[i * n..][..n];
                let msg_fg: f64 = row.iter().zip(&fg).map(|(k, f)| k * f).sum();
                let msg_bg = self.row_sums[i] - msg_fg;
                // Potts: a label pays for the kernel mass on the other label
                *qi = softmin([unary[i][0] + msg_fg, unary[i][1] + msg_bg]);
            }
            trace.push(q.clone());
        }
        Ok(trace)
    }

    pub fn refine(&self, map: &ScoreMap, iterations: usize) -> Result<ScoreMap> {
        let trace = self.mean_field(map, iterations)?;
        let last = trace.last().expect("at least one iteration");
        ScoreMap::clamped(self.height, self.width, last.iter().map(|q| q[1]).collect())
    }
}

/// Normalized `exp(-e)` over two energies.
fn softmin(e: [f64; 2]) -> [f64; 2] {
    let m = e[0].min(e[1]);
    let a = (m - e[0]).exp();
    let b = (m - e[1]).exp();
    [a / (a + b), b / (a + b)]
}

pub fn crf_refine(image: &ImageRgb, map: &ScoreMap, params: &CrfParams) -> Result<ScoreMap> {
    map.ensure_same_dims(image.dims(), "crf_refine")?;
    CrfKernel::new(image, params)?.refine(map, params.iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(seed: u64, h: usize, w: usize) -> (ImageRgb, ScoreMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = ImageRgb::new(h, w, (0..h * w).map(|_| [rng.random(), rng.random(), rng.random()]).collect()).unwrap();
        let map = ScoreMap::new(h, w, (0..h * w).map(|_| rng.random()).collect()).unwrap();
        (img, map)
    }

    #[test]
    fn no_pairwise_reproduces_clamped_input() {
        let (img, mut map) = random_case(1, 6, 6);
        let mut v = map.values().to_vec();
        v[0] = 0.0;
        v[1] = 1.0;
        map = ScoreMap::new(6, 6, v).unwrap();
        let params = CrfParams { w1: 0.0, w2: 0.0, ..CrfParams::default() };
        let out = crf_refine(&img, &map, &params).unwrap();
        for (o, m) in out.values().iter().zip(map.values()) {
            assert!((o - m.clamp(UNARY_CLAMP, 1.0 - UNARY_CLAMP)).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_half_is_symmetric() {
        let img = ImageRgb::from_fn(8, 8, |_, _| [0.3, 0.6, 0.2]).unwrap();
        let out = crf_refine(&img, &ScoreMap::constant(8, 8, 0.5).unwrap(), &CrfParams::default()).unwrap();
        assert!(out.values().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn marginals_normalized_every_iteration() {
        let (img, map) = random_case(2, 7, 5);
        let kernel = CrfKernel::new(&img, &CrfParams::default()).unwrap();
        for q in kernel.mean_field(&map, 5).unwrap() {
            for qi in q {
                assert!((qi[0] + qi[1] - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn capacity_error_over_budget() {
        let img = ImageRgb::from_fn(10, 10, |_, _| [0.0; 3]).unwrap();
        let params = CrfParams { max_pixels: 99, ..CrfParams::default() };
        assert!(matches!(CrfKernel::new(&img, &params), Err(Error::Capacity(_))));
    }

    #[test]
    fn cleans_up_noisy_two_region_map() {
        let img = ImageRgb::from_fn(12, 12, |_, x| if x < 6 { [0.9, 0.1, 0.1] } else { [0.1, 0.1, 0.9] }).unwrap();
        let map = ScoreMap::from_fn(12, 12, |y, x| {
            let base: f64 = if x < 6 { 0.7 } else { 0.3 };
            if (y + x) % 5 == 0 { 1.0 - base } else { base }
        })
        .unwrap();
        let out = crf_refine(&img, &map, &CrfParams::default()).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                assert_eq!(out.get(y, x) > 0.5, x < 6, "pixel ({y},{x})");
            }
        }
    }
}
