//! Minimal dense numerics: tensors, affine and MLP layers with explicit
//! analytic gradients, bias-corrected Adam, and a central finite-difference
//! gradient checker.
//!
//! Everything is `f32` in flat row-major storage; loss reductions accumulate
//! in `f64` so gradient checks stay tight. There is no autograd — each layer
//! exposes a `backward` that consumes cached forward activations, and the
//! training module chains them by hand.

mod adam;
mod affine;
mod grad_check;
mod mlp;
pub mod rng;
mod tensor;

pub use adam::AdamState;
pub use affine::{affine_apply, AffineLayer};
pub use grad_check::grad_check;
pub use mlp::{MlpCache, MlpNet};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors from the numeric kernels. Shape mismatches always name both sides
/// so the caller can see which contract was violated.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{context}: data length {len} does not match shape {shape:?}")]
    LengthMismatch {
        context: &'static str,
        shape: Vec<usize>,
        len: usize,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, NumericsError>;
