//! Small dense `f64` linear algebra for the evaluation statistics:
//! Gaussian elimination with partial pivoting and a cyclic Jacobi
//! eigenvalue solver for symmetric matrices. Matrices are flat row-major.

use super::{EvalError, Result};

/// Solves `A X = B` in place for `k` right-hand sides, `A` being `n x n`
/// and `B` `n x k`. Fails on pivots below an absolute floor scaled by the
/// largest initial entry.
pub fn solve_multi(a: &mut [f64], b: &mut [f64], n: usize, k: usize) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n * k);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * (1.0 + scale);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        let pivot = a[pivot_row * n + col];
        if pivot.abs() < tol {
            return Err(EvalError::Singular { col, pivot });
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            for j in 0..k {
                b.swap(col * k + j, pivot_row * k + j);
            }
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= f * a[col * n + j];
            }
            for j in 0..k {
                b[row * k + j] -= f * b[col * k + j];
            }
        }
    }
    for col in (0..n).rev() {
        let d = a[col * n + col];
        for j in 0..k {
            let mut s = b[col * k + j];
            for m in col + 1..n {
                s -= a[col * n + m] * b[m * k + j];
            }
            b[col * k + j] = s / d;
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// descending. The input is consumed as scratch.
pub fn jacobi_eigenvalues(mut m: Vec<f64>, n: usize) -> Vec<f64> {
    debug_assert_eq!(m.len(), n * n);
    if n == 1 {
        return vec![m[0]];
    }
    let frob: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-14 * (1.0 + frob);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q].abs();
            }
        }
        if off < tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < tol / (n * n) as f64 {
                    continue;
                }
                let (app, aqq) = (m[p * n + p], m[q * n + q]);
                let theta = 0.5 * (2.0 * apq).atan2(app - aqq);
                let (s, c) = theta.sin_cos();
                for j in 0..n {
                    let (mpj, mqj) = (m[p * n + j], m[q * n + j]);
                    m[p * n + j] = c * mpj + s * mqj;
                    m[q * n + j] = -s * mpj + c * mqj;
                }
                for i in 0..n {
                    let (mip, miq) = (m[i * n + p], m[i * n + q]);
                    m[i * n + p] = c * mip + s * miq;
                    m[i * n + q] = -s * mip + c * miq;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::numerics::rng;

    #[test]
    fn solves_a_hand_checked_system() {
        // [2 1; 1 3] x = [5; 10] => x = (1, 3).
        let mut a = vec![2.0, 1.0, 1.0, 3.0];
        let mut b = vec![5.0, 10.0];
        solve_multi(&mut a, &mut b, 2, 1).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12);
        assert!((b[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn solve_inverts_random_well_conditioned_systems() {
        let mut r = rng::stream(3, 1);
        for _ in 0..20 {
            let n = r.gen_range(1..6);
            let mut a = vec![0.0f64; n * n];
            for (i, v) in a.iter_mut().enumerate() {
                *v = r.gen_range(-1.0..1.0);
                if i % (n + 1) == 0 {
                    *v += n as f64; // diagonally dominant
                }
            }
            let x_true: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
            let mut b = vec![0.0f64; n];
            for i in 0..n {
                for j in 0..n {
                    b[i] += a[i * n + j] * x_true[j];
                }
            }
            let mut a_scratch = a.clone();
            solve_multi(&mut a_scratch, &mut b, n, 1).unwrap();
            for (got, want) in b.iter().zip(&x_true) {
                assert!((got - want).abs() < 1e-9, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn singular_systems_are_reported() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0]; // rank 1
        let mut b = vec![1.0, 2.0];
        let err = solve_multi(&mut a, &mut b, 2, 1).unwrap_err();
        assert!(matches!(err, EvalError::Singular { .. }));
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // Q D Q^T with Q a Givens rotation by 0.3 rad in the (0,1) plane
        // of a diag(5, 2, -1) matrix.
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let d = [5.0, 2.0, -1.0];
        let q = [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0];
        let mut m = vec![0.0f64; 9];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    m[i * 3 + j] += q[i * 3 + k] * d[k] * q[j * 3 + k];
                }
            }
        }
        let eig = jacobi_eigenvalues(m, 3);
        assert!((eig[0] - 5.0).abs() < 1e-10);
        assert!((eig[1] - 2.0).abs() < 1e-10);
        assert!((eig[2] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn jacobi_preserves_trace_on_random_symmetric_matrices() {
        let mut r = rng::stream(3, 2);
        for _ in 0..10 {
            let n = r.gen_range(2..7);
            let mut m = vec![0.0f64; n * n];
            for i in 0..n {
                for j in 0..=i {
                    let v = r.gen_range(-1.0..1.0);
                    m[i * n + j] = v;
                    m[j * n + i] = v;
                }
            }
            let trace: f64 = (0..n).map(|i| m[i * n + i]).sum();
            let eig = jacobi_eigenvalues(m, n);
            let sum: f64 = eig.iter().sum();
            assert!((trace - sum).abs() < 1e-9);
        }
    }
}
