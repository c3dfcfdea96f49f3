//! Shared fixtures for the benchmarks.

use wsod_core::synth::gen_synthetic_dataset;
use wsod_core::{ImageRgb, ScoreMap};

/// A synthetic image of side `size` and a smooth score map over it.
pub fn fixture(size: usize) -> (ImageRgb, ScoreMap) {
    let sample = gen_synthetic_dataset(1, size, 4, 7).expect("valid synthetic config").remove(0);
    let c = size as f64 / 2.0;
    let map = ScoreMap::from_fn(size, size, |y, x| {
        let d = ((y as f64 - c).powi(2) + (x as f64 - c).powi(2)).sqrt() / c;
        (1.0 - d).clamp(0.0, 1.0)
    })
    .expect("finite values");
    (sample.image, map)
}
