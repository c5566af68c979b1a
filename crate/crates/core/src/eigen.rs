//! Cyclic Jacobi eigen-decomposition for small symmetric matrices.

use nalgebra::DMatrix;

/// Relative off-diagonal tolerance at which the sweep stops.
pub const JACOBI_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 64;

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymmetricEigen {
    /// Reassemble `Q diag(d) Qᵀ` for an arbitrary spectral vector `d`.
    pub fn compose(&self, d: &[f64]) -> DMatrix<f64> {
        let n = self.values.len();
        let q = &self.vectors;
        DMatrix::from_fn(n, n, |i, j| (0..n).map(|m| q[(i, m)] * d[m] * q[(j, m)]).sum())
    }

    /// `Qᵀ X Q`, the matrix `X` written in the eigenbasis.
    pub fn rotate_in(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.vectors.transpose() * x * &self.vectors
    }
}

fn off_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Diagonalise a symmetric matrix by cyclic Jacobi rotations.
///
/// Only the upper triangle is trusted; the input is symmetrised first.
pub fn jacobi_eigen(input: &DMatrix<f64>) -> SymmetricEigen {
    let n = input.nrows();
    assert_eq!(n, input.ncols(), "jacobi_eigen needs a square matrix");
    let mut a = DMatrix::from_fn(n, n, |i, j| 0.5 * (input[(i, j)] + input[(j, i)]));
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm();

    if scale > 0.0 {
        for _ in 0..MAX_SWEEPS {
            if off_norm(&a) <= JACOBI_TOL * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    SymmetricEigen { values, vectors }
}
