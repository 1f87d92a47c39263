//! Structural similarity over sliding 8x8 windows, unit dynamic range,
//! conventional stabilizers C1 = 0.01^2 and C2 = 0.03^2.

use super::{EvalError, Result};

const WIN: usize = 8;
const C1: f64 = 1e-4; // (0.01)^2
const C2: f64 = 9e-4; // (0.03)^2

/// Mean SSIM between two grayscale images in `[0, 1]`, stored row-major.
/// Both sides must share `width x height` and be at least 8x8.
pub fn ssim(a: &[f32], b: &[f32], width: usize, height: usize) -> Result<f64> {
    if a.len() != width * height || b.len() != width * height {
        return Err(EvalError::Config(format!(
            "images of {} and {} values are not {width}x{height}",
            a.len(),
            b.len()
        )));
    }
    if width < WIN || height < WIN {
        return Err(EvalError::Config(format!(
            "images must be at least {WIN}x{WIN}, got {width}x{height}"
        )));
    }
    let mut total = 0.0f64;
    let mut windows = 0usize;
    let inv = 1.0 / (WIN * WIN) as f64;
    for y0 in 0..=height - WIN {
        for x0 in 0..=width - WIN {
            let (mut ma, mut mb) = (0.0f64, 0.0f64);
            for y in y0..y0 + WIN {
                for x in x0..x0 + WIN {
                    ma += a[y * width + x] as f64;
                    mb += b[y * width + x] as f64;
                }
            }
            ma *= inv;
            mb *= inv;
            let (mut va, mut vb, mut cab) = (0.0f64, 0.0f64, 0.0f64);
            for y in y0..y0 + WIN {
                for x in x0..x0 + WIN {
                    let da = a[y * width + x] as f64 - ma;
                    let db = b[y * width + x] as f64 - mb;
                    va += da * da;
                    vb += db * db;
                    cab += da * db;
                }
            }
            va *= inv;
            vb *= inv;
            cab *= inv;
            total += ((2.0 * ma * mb + C1) * (2.0 * cab + C2))
                / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}
