//! Observation perturbations for robustness studies. Both kinds touch the
//! embeddings (the model's visual input) and the renders when present;
//! proprio, actions, and ground-truth latents stay untouched. Renders are
//! clamped back into `[0, 1]`.

use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numerics::rng::{self, tags};
use crate::synthworld::nav::RENDER_SIDE;
use crate::synthworld::TrajectoryBatch;

use super::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PerturbKind {
    /// Additive i.i.d. Gaussian noise on every channel.
    GaussNoise { sigma: f32 },
    /// Per-episode, per-channel affine jitter: scale uniform in
    /// `[scale_lo, scale_hi]`, shift Gaussian with `shift_sigma`.
    ChannelJitter { scale_lo: f32, scale_hi: f32, shift_sigma: f32 },
}

impl PerturbKind {
    /// The default robustness noise level.
    pub fn gauss() -> Self {
        PerturbKind::GaussNoise { sigma: 0.1 }
    }

    /// The default camera-style jitter.
    pub fn jitter() -> Self {
        PerturbKind::ChannelJitter { scale_lo: 0.8, scale_hi: 1.2, shift_sigma: 0.05 }
    }
}

/// Returns a perturbed copy of the dataset. Draw order is fixed:
/// episodes in order; within an episode, embedding scales, embedding
/// shifts, render scale/shift (when rendering), then data sweeps.
pub fn perturb(batch: &TrajectoryBatch, kind: PerturbKind, seed: u64) -> Result<TrajectoryBatch> {
    let mut out = batch.clone();
    let mut r = rng::stream(seed, tags::PERTURB);
    match kind {
        PerturbKind::GaussNoise { sigma } => {
            if sigma < 0.0 {
                return Err(EvalError::Config("noise sigma must be nonnegative".into()));
            }
            if sigma == 0.0 {
                return Ok(out);
            }
            for v in out.embeddings.iter_mut() {
                let n: f32 = r.sample(StandardNormal);
                *v += sigma * n;
            }
            if let Some(renders) = out.renders.as_mut() {
                for v in renders.iter_mut() {
                    let n: f32 = r.sample(StandardNormal);
                    *v = (*v + sigma * n).clamp(0.0, 1.0);
                }
            }
        }
        PerturbKind::ChannelJitter { scale_lo, scale_hi, shift_sigma } => {
            if !(scale_lo <= scale_hi) || shift_sigma < 0.0 {
                return Err(EvalError::Config(format!(
                    "invalid jitter ({scale_lo}, {scale_hi}, {shift_sigma})"
                )));
            }
            let shift_dist = Normal::new(0.0f32, shift_sigma)
                .map_err(|e| EvalError::Config(format!("invalid shift sigma: {e}")))?;
            let d_x = out.d_x;
            let px = RENDER_SIDE * RENDER_SIDE;
            for e in 0..batch.n_episodes() {
                let (s, end) = batch.episode_range(e);
                let scales: Vec<f32> =
                    (0..d_x).map(|_| r.gen_range(scale_lo..=scale_hi)).collect();
                let shifts: Vec<f32> = (0..d_x).map(|_| r.sample(shift_dist)).collect();
                let render_jitter = out.renders.as_ref().map(|_| {
                    (r.gen_range(scale_lo..=scale_hi), r.sample::<f32, _>(shift_dist))
                });
                for t in s..end {
                    let row = &mut out.embeddings[t * d_x..(t + 1) * d_x];
                    for (v, (sc, sh)) in row.iter_mut().zip(scales.iter().zip(&shifts)) {
                        *v = sc * *v + sh;
                    }
                }
                if let (Some(renders), Some((sc, sh))) = (out.renders.as_mut(), render_jitter) {
                    for t in s..end {
                        for v in renders[t * px..(t + 1) * px].iter_mut() {
                            *v = (sc * *v + sh).clamp(0.0, 1.0);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::synthworld::nav::{NavConfig, NavEnv};
    use crate::synthworld::{generate_dataset, Policy, WorldConfig, WorldSpec};

    fn batch() -> TrajectoryBatch {
        let wc = WorldConfig { d_s: 2, d_c: 2, d_x: 5, seed: 8, ..Default::default() };
        let world = WorldSpec::new(wc);
        generate_dataset(&world, Policy::UniformRandom, 4, 6, 9, false).unwrap()
    }

    #[test]
    fn zero_sigma_noise_is_an_exact_identity() {
        let b = batch();
        let p = perturb(&b, PerturbKind::GaussNoise { sigma: 0.0 }, 7).unwrap();
        assert_eq!(b, p);
    }

    #[test]
    fn noise_magnitude_tracks_sigma() {
        let b = batch();
        let sigma = 0.1f32;
        let p = perturb(&b, PerturbKind::GaussNoise { sigma }, 7).unwrap();
        let n = b.embeddings.len() as f64;
        let rms = (b
            .embeddings
            .iter()
            .zip(&p.embeddings)
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        assert!(
            (0.5 * sigma as f64..1.5 * sigma as f64).contains(&rms),
            "rms = {rms}"
        );
        assert_eq!(b.proprio, p.proprio);
        assert_eq!(b.actions, p.actions);
    }

    #[test]
    fn perturbation_is_deterministic_in_the_seed() {
        let b = batch();
        let p1 = perturb(&b, PerturbKind::jitter(), 3).unwrap();
        let p2 = perturb(&b, PerturbKind::jitter(), 3).unwrap();
        let p3 = perturb(&b, PerturbKind::jitter(), 4).unwrap();
        assert_eq!(p1, p2);
        assert_ne!(p1.embeddings, p3.embeddings);
    }

    #[test]
    fn jitter_is_affine_and_constant_within_an_episode() {
        let b = batch();
        let p = perturb(&b, PerturbKind::jitter(), 11).unwrap();
        let d_x = b.d_x;
        for e in 0..b.n_episodes() {
            let (s, end) = b.episode_range(e);
            for c in 0..d_x {
                // Identify the per-channel affine map from the two most
                // spread rows, then check every row obeys it.
                let lo = (s..end).min_by(|&i, &j| {
                    b.embeddings[i * d_x + c].total_cmp(&b.embeddings[j * d_x + c])
                });
                let hi = (s..end).max_by(|&i, &j| {
                    b.embeddings[i * d_x + c].total_cmp(&b.embeddings[j * d_x + c])
                });
                let (lo, hi) = (lo.unwrap(), hi.unwrap());
                let (x0, y0) = (b.embeddings[lo * d_x + c], p.embeddings[lo * d_x + c]);
                let (x1, y1) = (b.embeddings[hi * d_x + c], p.embeddings[hi * d_x + c]);
                if (x1 - x0).abs() < 1e-3 {
                    continue;
                }
                let scale = (y1 - y0) / (x1 - x0);
                let shift = y0 - scale * x0;
                assert!((0.79..=1.21).contains(&scale), "scale = {scale}");
                for t in s..end {
                    let want = scale * b.embeddings[t * d_x + c] + shift;
                    assert!((p.embeddings[t * d_x + c] - want).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn rendered_pixels_stay_in_unit_range() {
        let env = NavEnv::new(NavConfig { d_c: 2, d_x: 6, seed: 4, ..Default::default() });
        let b = generate_dataset(&env, Policy::UniformRandom, 2, 5, 3, true).unwrap();
        assert!(b.renders.is_some());
        for kind in [PerturbKind::gauss(), PerturbKind::jitter()] {
            let p = perturb(&b, kind, 13).unwrap();
            let r = p.renders.as_ref().unwrap();
            assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_ne!(r, b.renders.as_ref().unwrap());
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let b = batch();
        assert!(perturb(&b, PerturbKind::GaussNoise { sigma: -0.1 }, 0).is_err());
        assert!(
            perturb(
                &b,
                PerturbKind::ChannelJitter { scale_lo: 1.5, scale_hi: 0.5, shift_sigma: 0.05 },
                0
            )
            .is_err()
        );
    }
}
