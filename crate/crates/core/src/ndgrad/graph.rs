//! Tape-style computation graph. Nodes are appended in evaluation order, so
//! the node list is already a topological order and `backward` is a single
//! reverse sweep.

use std::fmt;

use super::kernels::{self, ConvGeom};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The thirteen built-in op kinds with their attributes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    /// Inputs `[x, w]` or `[x, w, b]`; zero padding 1; stride 1 or 2.
    Conv3x3 { stride: usize },
    /// Inputs `[x, w]` or `[x, w, b]`.
    Conv1x1,
    Relu,
    Sigmoid,
    /// Global average pooling `[N, C, H, W] -> [N, C, 1, 1]`.
    Gap,
    /// Corner-aligned bilinear resize of every plane.
    UpsampleBilinear { height: usize, width: usize },
    ConcatChannels,
    Add,
    MulScalar(f64),
    Sub,
    Square,
    Sum,
    Mean,
}

/// A fused operation with a hand-written gradient, used for the losses.
pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;
    /// Gradient with respect to every input, `None` for inputs that take no
    /// gradient.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_out: &[T]) -> Vec<Option<Vec<T>>>;
}

enum Op<T: Real> {
    Leaf,
    Builtin(OpKind),
    Custom(Box<dyn CustomOp<T>>),
}

impl<T: Real> fmt::Debug for Op<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Leaf => write!(f, "Leaf"),
            Op::Builtin(k) => write!(f, "{k:?}"),
            Op::Custom(c) => write!(f, "Custom({})", c.name()),
        }
    }
}

#[derive(Debug)]
struct Node<T: Real> {
    op: Op<T>,
    inputs: Vec<NodeId>,
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

#[derive(Debug, Default)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op, inputs, value, requires_grad, grad: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, Vec::new(), value, false)
    }

    /// Trainable leaf; gradients accumulate into it on `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, Vec::new(), value, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn check_finite(kind: &str, t: &Tensor<T>) -> Result<()> {
        if !t.all_finite() {
            return Err(Error::numeric(format!("{kind} produced a non-finite value")));
        }
        Ok(())
    }

    /// Evaluates a built-in op and appends it to the tape.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor<T>> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
        let value = forward(kind, &vals)?;
        Self::check_finite(&format!("{kind:?}"), &value)?;
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push(Op::Builtin(kind), inputs.to_vec(), value, requires_grad))
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, inputs: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor<T>> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
        let value = op.forward(&vals)?;
        Self::check_finite(op.name(), &value)?;
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push(Op::Custom(op), inputs.to_vec(), value, requires_grad))
    }

    pub fn conv3x3(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize) -> Result<NodeId> {
        let mut ins = vec![x, w];
        ins.extend(b);
        self.apply(OpKind::Conv3x3 { stride }, &ins)
    }

    pub fn conv1x1(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let mut ins = vec![x, w];
        ins.extend(b);
        self.apply(OpKind::Conv1x1, &ins)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sigmoid, &[x])
    }

    pub fn gap(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Gap, &[x])
    }

    pub fn upsample(&mut self, x: NodeId, height: usize, width: usize) -> Result<NodeId> {
        self.apply(OpKind::UpsampleBilinear { height, width }, &[x])
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        self.apply(OpKind::ConcatChannels, xs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.apply(OpKind::MulScalar(c), &[x])
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Square, &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sum, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mean, &[x])
    }

    /// Reverse sweep from a scalar `loss`. Gradients of trainable leaves are
    /// accumulated, so two calls without [`Graph::zero_grad`] double them.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::ONE]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                let node = &mut self.nodes[id];
                match node.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &v)| *a += v),
                    None => node.grad = Some(g),
                }
                continue;
            }
            let node = &self.nodes[id];
            let input_grads = match &node.op {
                Op::Leaf => unreachable!("leaves handled above"),
                Op::Builtin(kind) => {
                    let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|i| &self.nodes[i.0].value).collect();
                    let need: Vec<bool> = node.inputs.iter().map(|i| self.nodes[i.0].requires_grad).collect();
                    backward(*kind, &ins, &node.value, &g, &need)
                }
                Op::Custom(op) => {
                    let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|i| &self.nodes[i.0].value).collect();
                    op.backward(&ins, &node.value, &g)
                }
            };
            let inputs = self.nodes[id].inputs.clone();
            for (inp, ig) in inputs.into_iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[inp.0].requires_grad {
                    continue;
                }
                if ig.iter().any(|v| !v.is_finite()) {
                    return Err(Error::numeric(format!("non-finite gradient flowing out of {:?}", self.nodes[id].op)));
                }
                match grads[inp.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &v)| *a += v),
                    None => grads[inp.0] = Some(ig),
                }
            }
        }
        Ok(())
    }
}

fn arity(kind: OpKind, inputs: &[&Tensor<impl Real>]) -> Result<()> {
    let ok = match kind {
        OpKind::Conv3x3 { .. } | OpKind::Conv1x1 => matches!(inputs.len(), 2 | 3),
        OpKind::Add | OpKind::Sub => inputs.len() == 2,
        OpKind::ConcatChannels => !inputs.is_empty(),
        _ => inputs.len() == 1,
    };
    if !ok {
        return Err(Error::shape(format!("{kind:?} got {} inputs", inputs.len())));
    }
    Ok(())
}

fn conv_geom<T: Real>(kind: OpKind, inputs: &[&Tensor<T>]) -> Result<ConvGeom> {
    let (n, cin, h, w) = inputs[0].dims4()?;
    let (k, stride) = match kind {
        OpKind::Conv3x3 { stride } => (3, stride),
        _ => (1, 1),
    };
    if !(stride == 1 || stride == 2) {
        return Err(Error::shape(format!("conv stride {stride} not in {{1, 2}}")));
    }
    let ws = inputs[1].shape();
    if ws.len() != 4 || ws[1] != cin || ws[2] != k || ws[3] != k {
        return Err(Error::shape(format!("{kind:?}: weight {ws:?} does not fit input channels {cin}")));
    }
    let cout = ws[0];
    if let Some(b) = inputs.get(2) {
        if b.shape() != [cout] {
            return Err(Error::shape(format!("{kind:?}: bias {:?} for {cout} output channels", b.shape())));
        }
    }
    Ok(ConvGeom::new(n, cin, h, w, cout, k, stride))
}

fn same_shape<T: Real>(kind: OpKind, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{kind:?}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

fn forward<T: Real>(kind: OpKind, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    arity(kind, inputs)?;
    let x = inputs[0];
    let map = |f: &dyn Fn(T) -> T| Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect());
    match kind {
        OpKind::Conv3x3 { .. } | OpKind::Conv1x1 => {
            let g = conv_geom(kind, inputs)?;
            let out = kernels::conv_forward(&g, x.data(), inputs[1].data(), inputs.get(2).map(|b| b.data()));
            Tensor::new(vec![g.n, g.cout, g.oh, g.ow], out)
        }
        OpKind::Relu => map(&|v| if v > T::ZERO { v } else { T::ZERO }),
        OpKind::Sigmoid => map(&sigmoid),
        OpKind::Gap => {
            let (n, c, h, w) = x.dims4()?;
            let inv = T::from_f64(1.0 / (h * w) as f64);
            let out = x.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
            Tensor::new(vec![n, c, 1, 1], out)
        }
        OpKind::UpsampleBilinear { height, width } => {
            let (n, c, h, w) = x.dims4()?;
            if height == 0 || width == 0 {
                return Err(Error::shape("upsample target has a zero dimension"));
            }
            Tensor::new(vec![n, c, height, width], kernels::upsample_forward(x.data(), n * c, h, w, height, width))
        }
        OpKind::ConcatChannels => {
            let (n, _, h, w) = x.dims4()?;
            let mut ctot = 0;
            for t in inputs {
                let (n2, c2, h2, w2) = t.dims4()?;
                if (n2, h2, w2) != (n, h, w) {
                    return Err(Error::shape(format!("concat: {:?} vs {:?}", x.shape(), t.shape())));
                }
                ctot += c2;
            }
            let mut out = Vec::with_capacity(n * ctot * h * w);
            for b in 0..n {
                for t in inputs {
                    let per = t.shape()[1] * h * w;
                    out.extend_from_slice(&t.data()[b * per..][..per]);
                }
            }
            Tensor::new(vec![n, ctot, h, w], out)
        }
        OpKind::Add | OpKind::Sub => {
            let y = inputs[1];
            same_shape(kind, x, y)?;
            let out = x
                .data()
                .iter()
                .zip(y.data())
                .map(|(&a, &b)| if kind == OpKind::Add { a + b } else { a - b })
                .collect();
            Tensor::new(x.shape().to_vec(), out)
        }
        OpKind::MulScalar(c) => {
            let c = T::from_f64(c);
            map(&|v| v * c)
        }
        OpKind::Square => map(&|v| v * v),
        OpKind::Sum => Ok(Tensor::scalar(x.data().iter().copied().sum())),
        OpKind::Mean => {
            if x.numel() == 0 {
                return Err(Error::shape("mean of an empty tensor"));
            }
            Ok(Tensor::scalar(x.data().iter().copied().sum::<T>() / T::from_f64(x.numel() as f64)))
        }
    }
}

fn backward<T: Real>(
    kind: OpKind,
    inputs: &[&Tensor<T>],
    out: &Tensor<T>,
    g: &[T],
    need: &[bool],
) -> Vec<Option<Vec<T>>> {
    let x = inputs[0];
    let elementwise = |f: &dyn Fn(usize) -> T| Some((0..g.len()).map(|i| g[i] * f(i)).collect::<Vec<T>>());
    match kind {
        OpKind::Conv3x3 { .. } | OpKind::Conv1x1 => {
            let geom = conv_geom(kind, inputs).expect("validated in forward");
            let (dx, dw, db) = kernels::conv_backward(&geom, x.data(), inputs[1].data(), g, need[0]);
            let mut v = vec![dx, Some(dw)];
            if inputs.len() == 3 {
                v.push(Some(db));
            }
            v
        }
        OpKind::Relu => vec![elementwise(&|i| if x.data()[i] > T::ZERO { T::ONE } else { T::ZERO })],
        OpKind::Sigmoid => {
            let y = out.data();
            vec![elementwise(&|i| y[i] * (T::ONE - y[i]))]
        }
        OpKind::Gap => {
            let (_, _, h, w) = x.dims4().expect("validated in forward");
            let inv = T::from_f64(1.0 / (h * w) as f64);
            let mut dx = Vec::with_capacity(x.numel());
            for &gv in g {
                dx.extend(std::iter::repeat_n(gv * inv, h * w));
            }
            vec![Some(dx)]
        }
        OpKind::UpsampleBilinear { height, width } => {
            let (n, c, h, w) = x.dims4().expect("validated in forward");
            vec![Some(kernels::upsample_backward(g, n * c, h, w, height, width))]
        }
        OpKind::ConcatChannels => {
            let (n, _, h, w) = x.dims4().expect("validated in forward");
            let ctot = out.shape()[1];
            let mut offset = 0;
            let mut grads = Vec::with_capacity(inputs.len());
            for t in inputs {
                let c = t.shape()[1];
                let mut d = Vec::with_capacity(t.numel());
                for b in 0..n {
                    d.extend_from_slice(&g[(b * ctot + offset) * h * w..][..c * h * w]);
                }
                offset += c;
                grads.push(Some(d));
            }
            grads
        }
        OpKind::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
        OpKind::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())],
        OpKind::MulScalar(c) => {
            let c = T::from_f64(c);
            vec![elementwise(&|_| c)]
        }
        OpKind::Square => {
            let two = T::from_f64(2.0);
            vec![elementwise(&|i| two * x.data()[i])]
        }
        OpKind::Sum => vec![Some(vec![g[0]; x.numel()])],
        OpKind::Mean => {
            let v = g[0] / T::from_f64(x.numel() as f64);
            vec![Some(vec![v; x.numel()])]
        }
    }
}
