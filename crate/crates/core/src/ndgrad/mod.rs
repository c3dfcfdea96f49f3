//! Minimal reverse-mode differentiation over NCHW tensors, with Adam and
//! Xavier initialization.
//!
//! ```
//! use wsod_core::ndgrad::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
//! let sq = g.square(x).unwrap();
//! let loss = g.mean(sq).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0 / 3.0, -4.0 / 3.0, 1.0 / 3.0]);
//! ```

mod checkpoint;
pub mod gradcheck;
mod graph;
mod kernels;
mod optim;
mod tensor;

pub use checkpoint::{load_params, save_params, IndexEntry};
pub use gradcheck::{check_gradients, GradCheckResult};
pub use graph::{CustomOp, Graph, NodeId, OpKind};
pub(crate) use graph::sigmoid;
pub use optim::{adam_step, xavier_bound, xavier_init, AdamConfig, AdamState, Bindings, ParamSet};
pub use tensor::{Real, Tensor};
