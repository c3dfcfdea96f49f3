//! Finite-difference gradient suite over every graph op and every loss, on
//! small random f64 instances.
//!
//! Op instances reduce to a scalar with `mean(square(op(..)))`; for the
//! linear ops this is quadratic, so central differences are exact up to
//! rounding. ReLU inputs are kept at least `0.05` away from the kink.
//!
//! The central-difference error is about `h^2 f''' / 6`, so loss instances are
//! drawn where that stays small next to the gradient. BCE terms see
//! `sigmoid(z)`, soft targets stay `0.1` away from the prediction, and the
//! squared self-supervision terms take probabilities directly, where they are
//! exact.
//! The total loss is checked over its four component values, each of which has
//! its own instance above.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{
    classification_loss, filter_loss, multi_guidance_loss, self_supervision_loss, total_loss, LossValue, SelfSupMode,
};
use crate::ndgrad::{check_gradients, GradCheckResult, Graph, NodeId, Tensor};

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCheck {
    pub name: String,
    pub instances: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub checks: Vec<OpCheck>,
    pub passed: bool,
}

type Instance = (Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>>);

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches data")
}

/// Values in `[-1, -0.05] ∪ [0.05, 1]`.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = uniform(rng, shape, 0.05, 1.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

fn binary(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect())
        .expect("shape matches data")
}

fn reduce(g: &mut Graph<f64>, x: NodeId) -> Result<NodeId> {
    let sq = g.square(x)?;
    g.mean(sq)
}

fn nchw(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(2..=5), rng.random_range(2..=5)]
}

fn op_instance(name: &str, rng: &mut ChaCha8Rng) -> Instance {
    let [n, c, h, w] = nchw(rng);
    match name {
        "conv3x3" => {
            let cout = rng.random_range(1..=3);
            let stride = rng.random_range(1..=2);
            let inputs = vec![
                uniform(rng, &[n, c, h, w], -1.0, 1.0),
                uniform(rng, &[cout, c, 3, 3], -1.0, 1.0),
                uniform(rng, &[cout], -1.0, 1.0),
            ];
            (inputs, Box::new(move |g, ids| {
                let y = g.conv3x3(ids[0], ids[1], Some(ids[2]), stride)?;
                reduce(g, y)
            }))
        }
        "conv1x1" => {
            let cout = rng.random_range(1..=3);
            let inputs = vec![
                uniform(rng, &[n, c, h, w], -1.0, 1.0),
                uniform(rng, &[cout, c, 1, 1], -1.0, 1.0),
                uniform(rng, &[cout], -1.0, 1.0),
            ];
            (inputs, Box::new(|g, ids| {
                let y = g.conv1x1(ids[0], ids[1], Some(ids[2]))?;
                reduce(g, y)
            }))
        }
        "relu" => (vec![off_kink(rng, &[n, c, h, w])], Box::new(|g, ids| {
            let y = g.relu(ids[0])?;
            reduce(g, y)
        })),
        "sigmoid" => (vec![uniform(rng, &[n, c, h, w], -3.0, 3.0)], Box::new(|g, ids| {
            let y = g.sigmoid(ids[0])?;
            reduce(g, y)
        })),
        "gap" => (vec![uniform(rng, &[n, c, h, w], -1.0, 1.0)], Box::new(|g, ids| {
            let y = g.gap(ids[0])?;
            reduce(g, y)
        })),
        "upsample" => {
            let (oh, ow) = (rng.random_range(1..=9), rng.random_range(1..=9));
            (vec![uniform(rng, &[n, c, h, w], -1.0, 1.0)], Box::new(move |g, ids| {
                let y = g.upsample(ids[0], oh, ow)?;
                reduce(g, y)
            }))
        }
        "concat" => {
            let c2 = rng.random_range(1..=3);
            let inputs = vec![uniform(rng, &[n, c, h, w], -1.0, 1.0), uniform(rng, &[n, c2, h, w], -1.0, 1.0)];
            (inputs, Box::new(|g, ids| {
                let y = g.concat(&[ids[0], ids[1]])?;
                let s = g.sigmoid(y)?;
                reduce(g, s)
            }))
        }
        "add" | "sub" => {
            let inputs = vec![uniform(rng, &[n, c, h, w], -1.0, 1.0), uniform(rng, &[n, c, h, w], -1.0, 1.0)];
            let add = name == "add";
            (inputs, Box::new(move |g, ids| {
                let y = if add { g.add(ids[0], ids[1])? } else { g.sub(ids[0], ids[1])? };
                let s = g.sigmoid(y)?;
                reduce(g, s)
            }))
        }
        "mul_scalar" => {
            let k = rng.random_range(-3.0..3.0);
            (vec![uniform(rng, &[n, c, h, w], -1.0, 1.0)], Box::new(move |g, ids| {
                let y = g.mul_scalar(ids[0], k)?;
                reduce(g, y)
            }))
        }
        "square" => (vec![uniform(rng, &[n, c, h, w], -1.0, 1.0)], Box::new(|g, ids| {
            let y = g.square(ids[0])?;
            g.sum(y)
        })),
        "sum" => (vec![uniform(rng, &[n, c, h, w], -1.0, 1.0)], Box::new(|g, ids| {
            let s = g.sigmoid(ids[0])?;
            g.sum(s)
        })),
        "mean" => (vec![uniform(rng, &[n, c, h, w], -1.0, 1.0)], Box::new(|g, ids| {
            let s = g.sigmoid(ids[0])?;
            g.mean(s)
        })),
        other => unreachable!("unknown op {other}"),
    }
}

/// Soft targets at least `0.1` away from `sigmoid(z)`.
fn soft_targets(rng: &mut ChaCha8Rng, z: &Tensor<f64>) -> Tensor<f64> {
    let data = z
        .data()
        .iter()
        .map(|&z| {
            let p = 1.0 / (1.0 + (-z).exp());
            let off = rng.random_range(0.1..0.5);
            if p + off <= 1.0 && (p - off < 0.0 || rng.random_bool(0.5)) { p + off } else { p - off }
        })
        .collect();
    Tensor::new(z.shape().to_vec(), data).expect("shape matches data")
}

fn loss_instance(name: &str, rng: &mut ChaCha8Rng) -> Instance {
    let [n, _, h, w] = nchw(rng);
    let map = [n, 1, h, w];
    match name {
        "classification_loss" => {
            let classes = rng.random_range(1..=4);
            let y = binary(rng, &[n, classes, 1, 1]);
            (vec![uniform(rng, &[n, classes, 1, 1], -3.0, 3.0)], Box::new(move |g, ids| {
                let y = g.constant(y.clone());
                Ok(classification_loss(g, ids[0], y)?.node)
            }))
        }
        "filter_loss" => {
            let y = binary(rng, &map);
            (vec![uniform(rng, &map, -3.0, 3.0)], Box::new(move |g, ids| {
                let p = g.sigmoid(ids[0])?;
                let y = g.constant(y.clone());
                Ok(filter_loss(g, p, y)?.node)
            }))
        }
        "multi_guidance_loss" => {
            let z = uniform(rng, &map, -3.0, 3.0);
            let ys = soft_targets(rng, &z);
            (vec![z], Box::new(move |g, ids| {
                let p = g.sigmoid(ids[0])?;
                let ys = g.constant(ys.clone());
                Ok(multi_guidance_loss(g, p, ys)?.node)
            }))
        }
        "self_supervision_loss" | "self_supervision_loss_literal" => {
            let mode = if name.ends_with("literal") { SelfSupMode::Literal } else { SelfSupMode::Similarity };
            (vec![uniform(rng, &map, 0.0, 1.0), uniform(rng, &map, 0.0, 1.0)], Box::new(move |g, ids| {
                Ok(self_supervision_loss(g, ids[0], ids[1], mode)?.node)
            }))
        }
        "total_loss" => {
            let delta = rng.random_range(-2.0..4.0);
            let inputs = (0..4).map(|_| uniform(rng, &[1, 1, 1, 1], 0.05, 2.0)).collect();
            (inputs, Box::new(move |g, ids| {
                let [l1, l2, lmg, lss] = [0, 1, 2, 3].map(|i| LossValue::of(g, ids[i]));
                Ok(total_loss(g, l1, l2, lmg, lss, delta)?.node)
            }))
        }
        other => unreachable!("unknown loss {other}"),
    }
}

pub const OPS: [&str; 13] = [
    "conv3x3", "conv1x1", "relu", "sigmoid", "gap", "upsample", "concat", "add", "mul_scalar", "sub", "square", "sum",
    "mean",
];

pub const LOSSES: [&str; 6] = [
    "classification_loss",
    "filter_loss",
    "multi_guidance_loss",
    "self_supervision_loss",
    "self_supervision_loss_literal",
    "total_loss",
];

/// Runs `instances` random checks per op and per loss.
pub fn run_gradient_suite(seed: u64, instances: usize) -> Result<GradCheckReport> {
    let mut checks = Vec::new();
    let names = OPS.iter().map(|n| (n, true)).chain(LOSSES.iter().map(|n| (n, false)));
    for (k, (name, is_op)) in names.enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64 + 1) << 32));
        let mut acc = GradCheckResult::default();
        for _ in 0..instances {
            let (inputs, build) = if is_op { op_instance(name, &mut rng) } else { loss_instance(name, &mut rng) };
            acc = acc.merge(check_gradients(&inputs, STEP, build)?);
        }
        checks.push(OpCheck {
            name: (*name).to_string(),
            instances,
            coordinates: acc.coordinates,
            max_rel_error: acc.max_rel_error,
            max_abs_error: acc.max_abs_error,
            passed: acc.max_rel_error <= TOLERANCE,
        });
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(GradCheckReport { seed, step: STEP, tolerance: TOLERANCE, checks, passed })
}
