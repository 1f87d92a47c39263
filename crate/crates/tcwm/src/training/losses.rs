//! The batch-contrastive alignment loss and its analytic gradient.
//!
//! Anchors `u_i` (alignment head of the latent task block) are scored
//! against proprio embeddings `v_j` by cosine similarity at temperature
//! `tau`; every other sample in the batch serves as a negative:
//!
//! `L = mean_i [ -cos(u_i, v_i)/tau + log sum_j exp(cos(u_i, v_j)/tau) ]`
//!
//! The denominator sum runs over all `j` including the positive (the
//! default), or over `j != i` when `include_positive` is false. Cosines use
//! the smooth stabilization `cos = <u,v> / sqrt((|u|^2+eps)(|v|^2+eps))`,
//! which is differentiable everywhere, so the returned gradients are exact
//! for the implemented function — the property the gradient checker pins.

const NORM_EPS: f64 = 1e-12;

/// Loss plus `dL/dc` given a precomputed `b x b` cosine matrix (row `i`:
/// anchor `i` against all proprio embeddings). Exposed separately so tests
/// can drive it with hand-built matrices.
pub fn loss_from_cosines(cos: &[f64], b: usize, tau: f32, include_positive: bool) -> (f64, Vec<f64>) {
    debug_assert_eq!(cos.len(), b * b);
    let tau = tau as f64;
    let mut loss = 0.0f64;
    let mut dcos = vec![0.0f64; b * b];
    for i in 0..b {
        let row = &cos[i * b..(i + 1) * b];
        let denom_js: Vec<usize> = (0..b).filter(|j| include_positive || *j != i).collect();
        let m = denom_js.iter().map(|j| row[*j] / tau).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = denom_js.iter().map(|j| (row[*j] / tau - m).exp()).sum();
        loss += -row[i] / tau + m + sum.ln();
        // d loss_i / d c_ij = (p_ij - delta_ij) / tau with p the softmax
        // over the denominator set (p_ii = 0 when the positive is excluded).
        for j in &denom_js {
            let p = (row[*j] / tau - m).exp() / sum;
            dcos[i * b + j] += p / tau;
        }
        dcos[i * b + i] -= 1.0 / tau;
    }
    let scale = 1.0 / b as f64;
    for g in &mut dcos {
        *g *= scale;
    }
    (loss * scale, dcos)
}

/// Gradients of the alignment loss with respect to the anchor and proprio
/// embedding batches (flat `b x k`).
pub struct AlignGrads {
    pub du: Vec<f32>,
    pub dv: Vec<f32>,
}

/// Full alignment loss over embedding batches `u`, `v` (flat `b x k`).
pub fn loss_align(
    u: &[f32],
    v: &[f32],
    b: usize,
    k: usize,
    tau: f32,
    include_positive: bool,
) -> (f64, AlignGrads) {
    debug_assert_eq!(u.len(), b * k);
    debug_assert_eq!(v.len(), b * k);
    let nu: Vec<f64> = (0..b)
        .map(|i| {
            let r = &u[i * k..(i + 1) * k];
            (r.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>() + NORM_EPS).sqrt()
        })
        .collect();
    let nv: Vec<f64> = (0..b)
        .map(|j| {
            let r = &v[j * k..(j + 1) * k];
            (r.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>() + NORM_EPS).sqrt()
        })
        .collect();
    let mut cos = vec![0.0f64; b * b];
    for i in 0..b {
        let ui = &u[i * k..(i + 1) * k];
        for j in 0..b {
            let vj = &v[j * k..(j + 1) * k];
            let dot: f64 = ui.iter().zip(vj).map(|(a, c)| *a as f64 * *c as f64).sum();
            cos[i * b + j] = dot / (nu[i] * nv[j]);
        }
    }
    let (loss, dcos) = loss_from_cosines(&cos, b, tau, include_positive);
    let mut du = vec![0.0f64; b * k];
    let mut dv = vec![0.0f64; b * k];
    for i in 0..b {
        let ui = &u[i * k..(i + 1) * k];
        for j in 0..b {
            let g = dcos[i * b + j];
            if g == 0.0 {
                continue;
            }
            let vj = &v[j * k..(j + 1) * k];
            let c = cos[i * b + j];
            // d cos / d u = v/(|u||v|) - cos * u/|u|^2, symmetric for v.
            for t in 0..k {
                du[i * k + t] += g * (vj[t] as f64 / (nu[i] * nv[j]) - c * ui[t] as f64 / (nu[i] * nu[i]));
                dv[j * k + t] += g * (ui[t] as f64 / (nu[i] * nv[j]) - c * vj[t] as f64 / (nv[j] * nv[j]));
            }
        }
    }
    (
        loss,
        AlignGrads {
            du: du.into_iter().map(|g| g as f32).collect(),
            dv: dv.into_iter().map(|g| g as f32).collect(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng;
    use rand::Rng;

    /// Perfectly separated batch: positives at cosine 1, the three
    /// negatives of each anchor at -1, tau = 0.1. The loss collapses to
    /// ln(1 + 3 e^{-20}) ~ 3e-20, i.e. numerically zero but non-negative.
    #[test]
    fn perfectly_separated_batch_has_near_zero_loss() {
        let b = 4;
        let mut cos = vec![-1.0f64; b * b];
        for i in 0..b {
            cos[i * b + i] = 1.0;
        }
        let (loss, _) = loss_from_cosines(&cos, b, 0.1, true);
        let expect = (1.0f64 + 3.0 * (-20.0f64).exp()).ln();
        assert!((loss - expect).abs() < 1e-12, "loss = {loss:e}");
        assert!(loss >= 0.0 && loss < 1e-8);
    }

    /// Uninformative batch: every cosine identical. With the positive in
    /// the denominator the loss is exactly ln(B) regardless of tau.
    #[test]
    fn constant_cosines_give_log_b() {
        let b = 4;
        let cos = vec![0.37f64; b * b];
        let (loss, _) = loss_from_cosines(&cos, b, 0.1, true);
        assert!((loss - (b as f64).ln()).abs() < 1e-12, "loss = {loss}");
    }

    /// Same separated matrix with the positive excluded from the
    /// denominator: loss_i = -1/tau + ln(3 e^{-1/tau}) = ln 3 - 2/tau.
    /// The expectation uses the same f32 temperature the code sees.
    #[test]
    fn exclude_positive_matches_hand_computation() {
        let b = 4;
        let mut cos = vec![-1.0f64; b * b];
        for i in 0..b {
            cos[i * b + i] = 1.0;
        }
        let (loss, _) = loss_from_cosines(&cos, b, 0.1, false);
        let expect = 3.0f64.ln() - 2.0 / (0.1f32 as f64);
        assert!((loss - expect).abs() < 1e-12, "loss = {loss}");
    }

    /// Swapping in the include-positive denominator can only increase the
    /// loss (it adds a positive term inside the log).
    #[test]
    fn include_positive_dominates_exclude_positive() {
        let mut r = rng::stream(8, 3);
        for _ in 0..20 {
            let b = 5;
            let cos: Vec<f64> = (0..b * b).map(|_| r.gen_range(-1.0..1.0)).collect();
            let (with, _) = loss_from_cosines(&cos, b, 0.2, true);
            let (without, _) = loss_from_cosines(&cos, b, 0.2, false);
            assert!(with >= without);
        }
    }

    /// Cosine similarity makes the loss invariant to rescaling either side
    /// by positive constants.
    #[test]
    fn invariant_to_positive_rescaling() {
        let mut r = rng::stream(23, 5);
        let (b, k) = (6, 4);
        let u: Vec<f32> = (0..b * k).map(|_| r.gen_range(-1.0f32..1.0)).collect();
        let v: Vec<f32> = (0..b * k).map(|_| r.gen_range(-1.0f32..1.0)).collect();
        let (base, _) = loss_align(&u, &v, b, k, 0.1, true);
        for (cu, cv) in [(3.0f32, 1.0f32), (1.0, 0.25), (7.5, 0.5)] {
            let us: Vec<f32> = u.iter().map(|x| cu * x).collect();
            let vs: Vec<f32> = v.iter().map(|x| cv * x).collect();
            let (scaled, _) = loss_align(&us, &vs, b, k, 0.1, true);
            assert!((scaled - base).abs() < 1e-5, "{base} vs {scaled} at ({cu}, {cv})");
        }
    }

    /// Finite-difference check of the full u/v gradients (f64 FD on the
    /// f32 inputs; the implemented cosine is smooth, so this is tight).
    #[test]
    fn gradients_match_finite_differences() {
        for include in [true, false] {
            let mut r = rng::stream(17, 4);
            let (b, k) = (5, 3);
            let u: Vec<f32> = (0..b * k).map(|_| r.gen_range(-1.0f32..1.0)).collect();
            let v: Vec<f32> = (0..b * k).map(|_| r.gen_range(-1.0f32..1.0)).collect();
            let (_, grads) = loss_align(&u, &v, b, k, 0.1, include);
            let h = 1e-3f32;
            for t in 0..b * k {
                let mut up = u.clone();
                let mut um = u.clone();
                up[t] += h;
                um[t] -= h;
                let fd = (loss_align(&up, &v, b, k, 0.1, include).0
                    - loss_align(&um, &v, b, k, 0.1, include).0)
                    / (2.0 * h as f64);
                let a = grads.du[t] as f64;
                assert!((fd - a).abs() / f64::max(1.0, a.abs()) < 1e-3, "du[{t}] fd={fd} a={a}");

                let mut vp = v.clone();
                let mut vm = v.clone();
                vp[t] += h;
                vm[t] -= h;
                let fd = (loss_align(&u, &vp, b, k, 0.1, include).0
                    - loss_align(&u, &vm, b, k, 0.1, include).0)
                    / (2.0 * h as f64);
                let a = grads.dv[t] as f64;
                assert!((fd - a).abs() / f64::max(1.0, a.abs()) < 1e-3, "dv[{t}] fd={fd} a={a}");
            }
        }
    }
}
