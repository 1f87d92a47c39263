//! Central finite-difference gradient checking.

use super::{NumericsError, Result};

/// Compares an analytic gradient against central finite differences of
/// `loss_fn` and returns the maximum relative error over all parameters:
///
/// `max_i |analytic_i - fd_i| / max(1, |analytic_i|)`
///
/// where `fd_i = (L(p + h e_i) - L(p - h e_i)) / 2h`. The caller asserts
/// the result against its tolerance. `loss_fn` receives the full perturbed
/// parameter vector and must be deterministic; a non-finite loss at any
/// perturbed point is an error.
pub fn grad_check<F>(
    params: &[f32],
    analytic: &[f32],
    mut loss_fn: F,
    h: f32,
) -> Result<f64>
where
    F: FnMut(&[f32]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(NumericsError::ShapeMismatch {
            context: "grad_check",
            expected: vec![params.len()],
            got: vec![analytic.len()],
        });
    }
    let mut scratch = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = scratch[i];
        scratch[i] = orig + h;
        let lp = loss_fn(&scratch)?;
        scratch[i] = orig - h;
        let lm = loss_fn(&scratch)?;
        scratch[i] = orig;
        if !lp.is_finite() || !lm.is_finite() {
            return Err(NumericsError::NonFinite("grad_check perturbed loss"));
        }
        let fd = (lp - lm) / (2.0 * h as f64);
        let a = analytic[i] as f64;
        let rel = (a - fd).abs() / f64::max(1.0, a.abs());
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
