//! Minimal tensor engine with reverse-mode automatic differentiation.
//!
//! Graphs are built eagerly: every op on a [`Graph`] evaluates immediately
//! and records what its vector-Jacobian product needs. [`Graph::backward`]
//! walks the tape in reverse creation order. Feature maps are channel-last
//! (`[H, W, C]`), so `conv1x1`, `layernorm` and `softmax` all act on the
//! last axis.

pub mod checkpoint;
mod error;
mod flops;
pub mod gradcheck;
mod graph;
mod ops;
mod params;
mod scalar;
mod tensor;

pub use error::{AutodiffError, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamStore, Vars};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

/// Half-pixel bilinear taps `(i0, i1, frac)` used by
/// [`Graph::bilinear_upsample2d`], exposed for independent oracles.
pub fn bilinear_upsample_taps(n: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    ops::bilinear_taps(n, factor)
}
