//! Central finite-difference gradient checker.
//!
//! The relative error of one coordinate is
//! `|analytic - numeric| / max(|analytic|, |numeric|, floor)` where `floor`
//! is `1e-3` times the largest numeric gradient magnitude of the same input
//! (and at least `1e-12`). The floor keeps near-zero coordinates from
//! dividing rounding noise by zero while staying tied to the gradient's scale.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct GradCheckResult {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coordinates: usize,
}

impl GradCheckResult {
    pub fn merge(self, other: GradCheckResult) -> GradCheckResult {
        GradCheckResult {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            max_abs_error: self.max_abs_error.max(other.max_abs_error),
            coordinates: self.coordinates + other.coordinates,
        }
    }
}

fn evaluate<F>(inputs: &[Tensor<f64>], build: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let v = g.value(loss);
    if !v.is_scalar() {
        return Err(Error::Contract("gradient check needs a scalar output".into()));
    }
    Ok(v.item())
}

/// Compares `backward` against central differences with step `h` for every
/// coordinate of every input. `build` receives the input nodes and returns
/// a scalar node.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> Result<GradCheckResult>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;

    let mut result = GradCheckResult::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, &id) in ids.iter().enumerate() {
        let analytic: Vec<f64> = match g.grad(id) {
            Some(v) => v.to_vec(),
            None => vec![0.0; inputs[k].numel()],
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..inputs[k].numel() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let up = evaluate(&work, &build)?;
            work[k].data_mut()[i] = orig - h;
            let down = evaluate(&work, &build)?;
            work[k].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (1e-3 * scale).max(1e-12);
        for (a, n) in analytic.iter().zip(&numeric) {
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(floor);
            result.max_abs_error = result.max_abs_error.max(abs);
            result.max_rel_error = result.max_rel_error.max(rel);
        }
        result.coordinates += numeric.len();
    }
    Ok(result)
}
