//! Multi-layer perceptron: affine layers with `tanh` between them and an
//! identity output. `forward_cached` keeps every pre-/post-activation so
//! `backward` can run without recomputation.

use rand_chacha::ChaCha8Rng;

use super::{AffineLayer, NumericsError, Result};

#[derive(Debug, Clone)]
pub struct MlpNet {
    pub layers: Vec<AffineLayer>,
}

/// Activations of one forward pass: `acts[0]` is the input, `acts[k+1]` the
/// output of layer `k` *after* its activation. tanh's derivative is
/// recovered from the post-activation, so pre-activations are not kept.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub acts: Vec<Vec<f32>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f32] {
        self.acts.last().unwrap()
    }
}

impl MlpNet {
    /// Builds `in_dim -> hidden[0] -> ... -> out_dim` with Xavier init.
    /// `hidden` may be empty, producing a single affine layer.
    pub fn new(in_dim: usize, hidden: &[usize], out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let layers = dims
            .windows(2)
            .map(|w| AffineLayer::xavier(w[1], w[0], rng))
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().unwrap().in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward_cached(&self, x: &[f32]) -> Result<MlpCache> {
        if x.len() != self.in_dim() {
            return Err(NumericsError::ShapeMismatch {
                context: "MlpNet::forward",
                expected: vec![self.in_dim()],
                got: vec![x.len()],
            });
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = vec![0.0f32; layer.out_dim()];
            layer.forward_into(acts.last().unwrap(), &mut y);
            if k < last {
                for v in &mut y {
                    *v = v.tanh();
                }
            }
            acts.push(y);
        }
        Ok(MlpCache { acts })
    }

    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        Ok(self.forward_cached(x)?.output().to_vec())
    }

    /// Backpropagates `upstream` (dL/d output) through the cached pass,
    /// accumulating parameter gradients and returning dL/d input.
    ///
    /// Errors if `upstream` has the wrong arity or is non-finite: silently
    /// folding NaNs into the gradient buffers would poison the whole run.
    pub fn backward(&mut self, cache: &MlpCache, upstream: &[f32]) -> Result<Vec<f32>> {
        if upstream.len() != self.out_dim() {
            return Err(NumericsError::ShapeMismatch {
                context: "MlpNet::backward",
                expected: vec![self.out_dim()],
                got: vec![upstream.len()],
            });
        }
        if !upstream.iter().all(|v| v.is_finite()) {
            return Err(NumericsError::NonFinite("MlpNet::backward upstream"));
        }
        let last = self.layers.len() - 1;
        let mut dy = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            if k < last {
                // Undo tanh: act = tanh(pre), d pre = (1 - act^2) d act.
                let act = &cache.acts[k + 1];
                for (g, a) in dy.iter_mut().zip(act) {
                    *g *= 1.0 - a * a;
                }
            }
            let mut dx = vec![0.0f32; self.layers[k].in_dim()];
            self.layers[k].backward_into(&cache.acts[k], &dy, &mut dx);
            dy = dx;
        }
        Ok(dy)
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng;
    use rand::Rng;

    /// Independent f64 reference forward over a flat parameter vector, so
    /// the finite-difference quotient is free of f32 rounding noise.
    fn reference_loss(dims: &[usize], params: &[f64], x: &[f64]) -> f64 {
        let mut act = x.to_vec();
        let mut k = 0;
        for li in 0..dims.len() - 1 {
            let (i, o) = (dims[li], dims[li + 1]);
            let w = &params[k..k + o * i];
            k += o * i;
            let b = &params[k..k + o];
            k += o;
            let mut next = vec![0.0f64; o];
            for r in 0..o {
                let mut acc = b[r];
                for c in 0..i {
                    acc += w[r * i + c] * act[c];
                }
                next[r] = if li < dims.len() - 2 { acc.tanh() } else { acc };
            }
            act = next;
        }
        act.iter().map(|v| v * v).sum()
    }

    fn flatten_f64(net: &MlpNet) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &net.layers {
            out.extend(l.weight.data().iter().map(|v| *v as f64));
            out.extend(l.bias.data().iter().map(|v| *v as f64));
        }
        out
    }

    /// Whole-net finite-difference check against the f64 reference:
    /// scalar loss = sum of squared outputs, every parameter and the input
    /// gradient compared, 50 seeds, relative error at most 1e-4 at h=1e-3.
    #[test]
    fn backward_matches_finite_differences() {
        let dims = [4usize, 6, 5, 3];
        for seed in 0..50u64 {
            let mut r = rng::stream(seed, 2);
            let mut net = MlpNet::new(dims[0], &dims[1..3], dims[3], &mut r);
            let x: Vec<f32> = (0..dims[0]).map(|_| r.gen_range(-1.0f32..1.0)).collect();
            let x64: Vec<f64> = x.iter().map(|v| *v as f64).collect();

            net.zero_grad();
            let cache = net.forward_cached(&x).unwrap();
            let upstream: Vec<f32> = cache.output().iter().map(|v| 2.0 * v).collect();
            let dx = net.backward(&cache, &upstream).unwrap();

            let params = flatten_f64(&net);
            let analytic: Vec<f32> = {
                let mut out = Vec::new();
                for l in &net.layers {
                    out.extend_from_slice(l.grad_weight.data());
                    out.extend_from_slice(l.grad_bias.data());
                }
                out
            };

            let h = 1e-3f64;
            for p in 0..params.len() {
                let mut pp = params.clone();
                let mut pm = params.clone();
                pp[p] += h;
                pm[p] -= h;
                let fd = (reference_loss(&dims, &pp, &x64) - reference_loss(&dims, &pm, &x64))
                    / (2.0 * h);
                let a = analytic[p] as f64;
                let rel = (fd - a).abs() / f64::max(1.0, a.abs());
                assert!(rel <= 1e-4, "seed {seed} param {p}: fd={fd} analytic={a}");
            }
            for c in 0..x64.len() {
                let mut xp = x64.clone();
                let mut xm = x64.clone();
                xp[c] += h;
                xm[c] -= h;
                let fd = (reference_loss(&dims, &params, &xp) - reference_loss(&dims, &params, &xm))
                    / (2.0 * h);
                let a = dx[c] as f64;
                let rel = (fd - a).abs() / f64::max(1.0, a.abs());
                assert!(rel <= 1e-4, "seed {seed} dx[{c}]: fd={fd} analytic={a}");
            }
        }
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut r = rng::stream(3, 2);
        let mut net = MlpNet::new(2, &[3], 1, &mut r);
        let x = [0.4f32, -0.2];
        let cache = net.forward_cached(&x).unwrap();
        net.backward(&cache, &[1.0]).unwrap();
        let once = net.layers[0].grad_weight.data().to_vec();
        net.backward(&cache, &[1.0]).unwrap();
        let twice = net.layers[0].grad_weight.data().to_vec();
        for (a, b) in once.iter().zip(&twice) {
            assert!((2.0 * a - b).abs() < 1e-6);
        }
        net.zero_grad();
        assert!(net.layers[0].grad_weight.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn non_finite_upstream_is_an_error() {
        let mut r = rng::stream(4, 2);
        let mut net = MlpNet::new(2, &[], 1, &mut r);
        let cache = net.forward_cached(&[0.1, 0.2]).unwrap();
        assert!(net.backward(&cache, &[f32::NAN]).is_err());
    }

    #[test]
    fn wrong_input_arity_is_an_error() {
        let mut r = rng::stream(5, 2);
        let net = MlpNet::new(3, &[4], 2, &mut r);
        let err = net.forward(&[0.0; 5]).unwrap_err().to_string();
        assert!(err.contains("[3]") && err.contains("[5]"), "{err}");
    }
}
