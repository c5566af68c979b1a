//! Sparse square systems assembled from triplets and solved by sparse LU.

use faer::sparse::{SparseColMat, Triplet};
use faer::prelude::Solve;
use faer::Col;

use crate::error::{Error, Result};

/// Accumulates `(row, col, value)` entries; duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct SparseSystem {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseSystem {
    pub fn new(n: usize) -> Self {
        SparseSystem { n, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, value));
    }

    pub fn extend_row(&mut self, row: usize, cols: impl IntoIterator<Item = (usize, f64)>) {
        for (c, v) in cols {
            self.push(row, c, v);
        }
    }

    fn merged(&self) -> Vec<(usize, usize, f64)> {
        let mut e = self.entries.clone();
        e.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(e.len());
        for (r, c, v) in e {
            match out.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => out.push((r, c, v)),
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// Dense copy, for tests and small systems.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// Solve `A x = b`. The relative residual of the computed solution is
    /// checked; a failure is reported as a singular matrix.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::Argument("right-hand side has the wrong length".into()));
        }
        let triplets: Vec<Triplet<usize, usize, f64>> =
            self.merged().into_iter().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &triplets)
            .map_err(|e| Error::Argument(format!("sparse assembly failed: {e:?}")))?;
        let lu = a.sp_lu().map_err(|_| Error::SingularJacobian { min_pivot: 0.0 })?;
        let rhs = Col::from_fn(self.n, |i| b[i]);
        let x = lu.solve(&rhs);
        let x: Vec<f64> = (0..self.n).map(|i| x[i]).collect();
        let ax = self.matvec(&x);
        let bnorm = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let res = ax.iter().zip(b).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
        if !x.iter().all(|v| v.is_finite()) || res > 1e-6 * bnorm.max(f64::MIN_POSITIVE) {
            return Err(Error::SingularJacobian { min_pivot: res / bnorm.max(f64::MIN_POSITIVE) });
        }
        Ok(x)
    }
}
