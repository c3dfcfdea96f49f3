//! Parameter containers, Xavier initialization and the Adam optimizer.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Named parameter collection, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T = f32> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.params.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Keeps only parameters whose name starts with one of `prefixes`.
    pub fn subset(&self, prefixes: &[&str]) -> Self {
        Self {
            params: self
                .params
                .iter()
                .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }

    /// Places every parameter on the graph as a trainable leaf (or as a
    /// constant when `trainable` is false).
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> Bindings {
        let ids = self
            .params
            .iter()
            .map(|(k, v)| {
                let id = if trainable { graph.param(v.clone()) } else { graph.constant(v.clone()) };
                (k.clone(), id)
            })
            .collect();
        Bindings { ids }
    }
}

/// Parameter name to graph node.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    ids: BTreeMap<String, NodeId>,
}

impl Bindings {
    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids.get(name).copied().ok_or_else(|| Error::Config(format!("parameter `{name}` is not bound")))
    }

    pub fn opt(&self, name: &str) -> Option<NodeId> {
        self.ids.get(name).copied()
    }

    /// Gradients of all bound parameters that received one.
    pub fn grads<T: Real>(&self, graph: &Graph<T>) -> BTreeMap<String, Vec<T>> {
        self.ids
            .iter()
            .filter_map(|(k, &id)| graph.grad(id).map(|g| (k.clone(), g.to_vec())))
            .collect()
    }
}

fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [out, inp] => (*inp, *out),
        [out, inp, rest @ ..] => {
            let field: usize = rest.iter().product();
            (inp * field, out * field)
        }
    }
}

/// Uniform Xavier/Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
/// For `[out, in, kh, kw]` the fans include the receptive field.
pub fn xavier_init<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let (fan_in, fan_out) = fans(shape);
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

pub fn xavier_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = fans(shape);
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments per parameter plus the step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    pub step: u64,
    first: BTreeMap<String, Vec<T>>,
    second: BTreeMap<String, Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn first_moment(&self, name: &str) -> Option<&[T]> {
        self.first.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[T]> {
        self.second.get(name).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update. Every gradient is checked before any
/// parameter moves, so a non-finite gradient leaves `params` and `state`
/// untouched.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &BTreeMap<String, Vec<T>>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.get(name)?;
        if p.numel() != g.len() {
            return Err(Error::shape(format!("gradient for `{name}` has {} values, parameter {}", g.len(), p.numel())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite gradient for `{name}`")));
        }
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
    let (c1, c2, lr, eps) = (T::from_f64(c1), T::from_f64(c2), T::from_f64(lr), T::from_f64(eps));
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above").data_mut();
        let m = state.first.entry(name.clone()).or_insert_with(|| vec![T::ZERO; g.len()]);
        let v = state.second.entry(name.clone()).or_insert_with(|| vec![T::ZERO; g.len()]);
        for i in 0..g.len() {
            m[i] = b1 * m[i] + one_b1 * g[i];
            v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
