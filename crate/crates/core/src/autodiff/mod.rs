//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operator applied to its nodes. Leaves created
//! with [`Tape::leaf`] are differentiable; [`Tape::constant`] leaves are not,
//! and subgraphs that depend only on constants skip their backward work.
//! [`Tape::backward`] seeds a scalar node with 1.0 and accumulates
//! gradients in reverse creation order, which is a valid reverse topological
//! order because parents are always created before their children.
//!
//! ```
//! use gradfaith::autodiff::Tape;
//! use gradfaith::Tensor;
//!
//! let mut tape = Tape::new();
//! let a = tape.leaf(Tensor::vector(&[1.0, 2.0]));
//! let b = tape.constant(Tensor::vector(&[3.0, 4.0]));
//! let prod = tape.mul(a, b).unwrap();
//! let total = tape.sum(prod).unwrap();
//! let grads = tape.backward(total, &[a]).unwrap();
//! assert_eq!(grads.get(a).unwrap().data(), &[3.0, 4.0]);
//! ```

pub mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod tape;

pub use gradcheck::{finite_diff_gradient, relative_error, GradCheckReport};
pub use ops::softmax;
pub use tape::{GradientSet, NodeId, OpKind, Tape};

/// Epsilon added to the variance inside [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;
