//! Minimal dense-tensor compute core.
//!
//! * [`Tensor`]: row-major tensor, usually `(B, C, H, W)`.
//! * [`Graph`]: records a fixed set of operations and runs reverse-mode
//!   differentiation over them.
//! * [`rng`]: Philox4x32-10 counter-based Gaussian streams addressed by
//!   [`RngKey`], so any draw can be regenerated without replaying others.
//!
//! All kernels are single-threaded and deterministic: identical inputs give
//! bit-identical outputs on a given platform.

mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod rng;
mod scalar;
mod tensor;

pub use error::{DiffError, Result};
pub use graph::{sign0, Graph, OpKind, Var};
pub use rng::{gaussian_stream, RngKey, StreamRole};
pub use scalar::Scalar;
pub use tensor::Tensor;
