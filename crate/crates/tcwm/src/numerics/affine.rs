//! Affine layer `y = W x + b` with accumulated gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, Result, Tensor};

/// Affine map with weight `[out_dim, in_dim]`, bias `[out_dim]`, and
/// gradient buffers shaped identically to the parameters. Gradients
/// accumulate across calls until [`AffineLayer::zero_grad`].
#[derive(Debug, Clone)]
pub struct AffineLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
}

impl AffineLayer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![out_dim, in_dim]),
            bias: Tensor::zeros(vec![out_dim]),
            grad_weight: Tensor::zeros(vec![out_dim, in_dim]),
            grad_bias: Tensor::zeros(vec![out_dim]),
        }
    }

    /// Xavier-uniform init: `w ~ U(-s, s)` with `s = sqrt(6 / (in + out))`,
    /// zero bias. Matches what the training defaults were tuned against.
    pub fn xavier(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = Self::zeros(out_dim, in_dim);
        let s = (6.0 / (in_dim + out_dim) as f64).sqrt() as f32;
        for w in layer.weight.data_mut() {
            *w = rng.gen_range(-s..=s);
        }
        layer
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// `y = W x + b` for a single input vector, into a caller buffer.
    pub fn forward_into(&self, x: &[f32], y: &mut [f32]) {
        let (o, i) = (self.out_dim(), self.in_dim());
        debug_assert_eq!(x.len(), i);
        debug_assert_eq!(y.len(), o);
        let w = self.weight.data();
        for r in 0..o {
            let row = &w[r * i..(r + 1) * i];
            let mut acc = self.bias.data()[r];
            for c in 0..i {
                acc += row[c] * x[c];
            }
            y[r] = acc;
        }
    }

    /// Accumulates parameter gradients for one example and adds the input
    /// gradient `W^T dy` into `dx` (pass an empty slice to skip it).
    pub fn backward_into(&mut self, x: &[f32], dy: &[f32], dx: &mut [f32]) {
        let (o, i) = (self.out_dim(), self.in_dim());
        debug_assert_eq!(x.len(), i);
        debug_assert_eq!(dy.len(), o);
        let gw = self.grad_weight.data_mut();
        for r in 0..o {
            let g = dy[r];
            let row = &mut gw[r * i..(r + 1) * i];
            for c in 0..i {
                row[c] += g * x[c];
            }
        }
        let gb = self.grad_bias.data_mut();
        for r in 0..o {
            gb[r] += dy[r];
        }
        if !dx.is_empty() {
            debug_assert_eq!(dx.len(), i);
            let w = self.weight.data();
            for r in 0..o {
                let g = dy[r];
                let row = &w[r * i..(r + 1) * i];
                for c in 0..i {
                    dx[c] += g * row[c];
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.data_mut().fill(0.0);
        self.grad_bias.data_mut().fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Applies `layer` to `x`, broadcasting over leading batch dimensions.
///
/// `x` may be `[in_dim]` or `[batch..., in_dim]`; the output replaces the
/// trailing axis with `out_dim`. The trailing axis must equal the layer's
/// input dimension, otherwise a shape error naming both shapes is returned.
pub fn affine_apply(layer: &AffineLayer, x: &Tensor) -> Result<Tensor> {
    let (o, i) = (layer.out_dim(), layer.in_dim());
    let xs = x.shape();
    if xs.last() != Some(&i) {
        return Err(NumericsError::ShapeMismatch {
            context: "affine_apply",
            expected: vec![o, i],
            got: xs.to_vec(),
        });
    }
    let rows = x.len() / i;
    let mut out_shape = xs.to_vec();
    *out_shape.last_mut().unwrap() = o;
    let mut out = vec![0.0f32; rows * o];
    for r in 0..rows {
        layer.forward_into(&x.data()[r * i..(r + 1) * i], &mut out[r * o..(r + 1) * o]);
    }
    Tensor::new(out_shape, out)
}
