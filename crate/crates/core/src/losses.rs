//! Training losses as graph nodes with hand-derived gradients.
//!
//! * [`classification_loss`]: multi-label sigmoid cross-entropy averaged over
//!   categories, computed from logits.
//! * [`filter_loss`] / [`multi_guidance_loss`]: pixel-mean binary
//!   cross-entropy on probabilities clamped to `[1e-7, 1 - 1e-7]`; targets
//!   never receive a gradient.
//! * [`self_supervision_loss`]: pixel-mean squared difference of the two
//!   filter maps (or its negation in [`SelfSupMode::Literal`]).
//! * [`total_loss`]: `L1 + L2 + Lmg + delta * Lss`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{CustomOp, Graph, NodeId, Real, Tensor};

pub const PROB_CLAMP: f64 = 1e-7;

/// A scalar loss node together with its forward value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub node: NodeId,
    pub value: f64,
}

impl LossValue {
    pub(crate) fn of<T: Real>(g: &Graph<T>, node: NodeId) -> Self {
        Self { node, value: g.value(node).item().to_f64() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfSupMode {
    /// `mean (p1 - p2)^2`: penalizes disagreement between the filters.
    #[default]
    Similarity,
    /// `-mean (p1 - p2)^2`: the signed form, which rewards disagreement when
    /// its weight is positive.
    Literal,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

struct SigmoidCrossEntropy {
    classes: usize,
}

impl<T: Real> CustomOp<T> for SigmoidCrossEntropy {
    fn name(&self) -> &'static str {
        "classification_loss"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (s, y) = (inputs[0], inputs[1]);
        let rows = s.numel() / self.classes;
        let mut total = 0.0;
        for (&si, &yi) in s.data().iter().zip(y.data()) {
            let (si, yi) = (si.to_f64(), yi.to_f64());
            // log σ(s) = -softplus(-s), log(1 - σ(s)) = -softplus(s)
            total += yi * softplus(-si) + (1.0 - yi) * softplus(si);
        }
        Ok(Tensor::scalar(T::from_f64(total / (self.classes * rows) as f64)))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad_out: &[T]) -> Vec<Option<Vec<T>>> {
        let (s, y) = (inputs[0], inputs[1]);
        let scale = grad_out[0] / T::from_f64(s.numel() as f64);
        let ds = s.data().iter().zip(y.data()).map(|(&si, &yi)| (crate::ndgrad::sigmoid(si) - yi) * scale).collect();
        vec![Some(ds), None]
    }
}

struct ClampedBce;

impl ClampedBce {
    fn clamp<T: Real>(p: T) -> (T, bool) {
        let lo = T::from_f64(PROB_CLAMP);
        let hi = T::from_f64(1.0 - PROB_CLAMP);
        if p < lo {
            (lo, true)
        } else if p > hi {
            (hi, true)
        } else {
            (p, false)
        }
    }
}

impl<T: Real> CustomOp<T> for ClampedBce {
    fn name(&self) -> &'static str {
        "bce"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (p, y) = (inputs[0], inputs[1]);
        let mut total = 0.0;
        for (&pi, &yi) in p.data().iter().zip(y.data()) {
            let (pc, _) = Self::clamp(pi);
            let (pc, yi) = (pc.to_f64(), yi.to_f64());
            total -= yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln();
        }
        Ok(Tensor::scalar(T::from_f64(total / p.numel() as f64)))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad_out: &[T]) -> Vec<Option<Vec<T>>> {
        let (p, y) = (inputs[0], inputs[1]);
        let scale = grad_out[0] / T::from_f64(p.numel() as f64);
        let dp = p
            .data()
            .iter()
            .zip(y.data())
            .map(|(&pi, &yi)| {
                let (pc, clamped) = Self::clamp(pi);
                if clamped {
                    T::ZERO
                } else {
                    (pc - yi) / (pc * (T::ONE - pc)) * scale
                }
            })
            .collect();
        // targets are constants: no gradient, whatever node they live on
        vec![Some(dp), None]
    }
}

fn check_pair<T: Real>(g: &Graph<T>, a: NodeId, b: NodeId, what: &str) -> Result<()> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", g.value(a).shape(), g.value(b).shape())));
    }
    Ok(())
}

/// Multi-label classification loss on logits `scores` (`[N, C, ...]`) against
/// multi-hot `labels` of the same shape, averaged over classes and batch.
pub fn classification_loss<T: Real>(g: &mut Graph<T>, scores: NodeId, labels: NodeId) -> Result<LossValue> {
    check_pair(g, scores, labels, "classification_loss")?;
    let shape = g.value(scores).shape();
    let classes = match shape {
        [] => 1,
        [c] => *c,
        [_, c, ..] => *c,
    };
    let node = g.custom(Box::new(SigmoidCrossEntropy { classes }), &[scores, labels])?;
    Ok(LossValue::of(g, node))
}

/// Pixel-mean BCE of a directive-filter prediction against its binary
/// pseudo label.
pub fn filter_loss<T: Real>(g: &mut Graph<T>, pred: NodeId, label: NodeId) -> Result<LossValue> {
    check_pair(g, pred, label, "filter_loss")?;
    let node = g.custom(Box::new(ClampedBce), &[pred, label])?;
    Ok(LossValue::of(g, node))
}

/// Pixel-mean BCE of the decoder prediction against soft targets `ys`.
/// No gradient ever reaches `ys`.
pub fn multi_guidance_loss<T: Real>(g: &mut Graph<T>, pred: NodeId, ys: NodeId) -> Result<LossValue> {
    check_pair(g, pred, ys, "multi_guidance_loss")?;
    let node = g.custom(Box::new(ClampedBce), &[pred, ys])?;
    Ok(LossValue::of(g, node))
}

pub fn self_supervision_loss<T: Real>(g: &mut Graph<T>, p1: NodeId, p2: NodeId, mode: SelfSupMode) -> Result<LossValue> {
    check_pair(g, p1, p2, "self_supervision_loss")?;
    let d = g.sub(p1, p2)?;
    let sq = g.square(d)?;
    let m = g.mean(sq)?;
    let node = match mode {
        SelfSupMode::Similarity => m,
        SelfSupMode::Literal => g.mul_scalar(m, -1.0)?,
    };
    Ok(LossValue::of(g, node))
}

pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    l1: LossValue,
    l2: LossValue,
    lmg: LossValue,
    lss: LossValue,
    delta: f64,
) -> Result<LossValue> {
    let a = g.add(l1.node, l2.node)?;
    let b = g.add(a, lmg.node)?;
    let weighted = g.mul_scalar(lss.node, delta)?;
    let node = g.add(b, weighted)?;
    Ok(LossValue::of(g, node))
}

/// Plain-value BCE used outside the graph (evaluation, oracles).
pub fn bce_value(pred: &[f64], target: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&p, &y) in pred.iter().zip(target) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total / pred.len() as f64
}
