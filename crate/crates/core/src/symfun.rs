//! Elementary symmetric functions and the curvature operators built on them.
//!
//! Both operators are restricted to the positive cone, where they can be
//! written as `F = exp(Σ_t c_t log σ_{m_t}(λ))`:
//!
//! ```text
//! primal  F  = σ_k^{1/k}                  terms (1/k, k)
//! dual    F* = (σ_n / σ_{n-k})^{1/k}      terms (1/k, n), (-1/k, n-k)
//! ```
//!
//! Spectral first and second derivatives follow from the log form, and the
//! matrix derivatives from the usual chain rule through an eigenbasis.

use nalgebra::DMatrix;

use crate::eigen::{jacobi_eigen, SymmetricEigen};
use crate::error::{Error, Result};

/// Eigenvalue gap (relative to `max|λ|`) below which the second-order chain
/// rule switches to the coalesced limit of the divided difference.
pub const DEGENERATE_GAP: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Primal,
    Dual,
}

#[derive(Debug, Clone)]
pub struct SpectrumRequest {
    pub a: DMatrix<f64>,
    pub k: usize,
    pub mode: Mode,
}

#[derive(Debug, Clone)]
pub struct OperatorValue {
    pub value: f64,
    /// `F^{ij} = ∂F/∂a_{ij}`.
    pub gradient: DMatrix<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
}

/// All elementary symmetric functions `σ_0, …, σ_n` by expanding
/// `Π (1 + λ_i t)` one factor at a time.
pub fn elementary_symmetric(lambda: &[f64]) -> Vec<f64> {
    let n = lambda.len();
    let mut e = vec![0.0; n + 1];
    e[0] = 1.0;
    for (i, &l) in lambda.iter().enumerate() {
        for j in (1..=i + 1).rev() {
            e[j] += l * e[j - 1];
        }
    }
    e
}

/// `σ_k(λ)` for `1 ≤ k ≤ n`.
pub fn sigma_k(lambda: &[f64], k: usize) -> Result<f64> {
    check_order(lambda.len(), k)?;
    Ok(elementary_symmetric(lambda)[k])
}

/// `σ_m` of `λ` with the entries listed in `skip` removed. Negative orders
/// give zero.
pub fn sigma_without(lambda: &[f64], skip: &[usize], m: isize) -> f64 {
    if m < 0 {
        return 0.0;
    }
    let reduced: Vec<f64> = lambda
        .iter()
        .enumerate()
        .filter(|(i, _)| !skip.contains(i))
        .map(|(_, &l)| l)
        .collect();
    let m = m as usize;
    if m > reduced.len() {
        return 0.0;
    }
    elementary_symmetric(&reduced)[m]
}

fn check_order(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Argument(format!("order k = {k} outside 1..={n}")));
    }
    Ok(())
}

fn log_terms(n: usize, k: usize, mode: Mode) -> Vec<(f64, usize)> {
    let c = 1.0 / k as f64;
    match mode {
        Mode::Primal => vec![(c, k)],
        Mode::Dual => vec![(c, n), (-c, n - k)],
    }
}

fn require_positive(lambda: &[f64]) -> Result<()> {
    if lambda.iter().all(|&l| l > 0.0 && l.is_finite()) {
        Ok(())
    } else {
        Err(Error::ConeViolation {
            eigenvalues: lambda.to_vec(),
        })
    }
}

/// Value of the operator as a function of the eigenvalues.
pub fn spectral_value(lambda: &[f64], k: usize, mode: Mode) -> Result<f64> {
    let n = lambda.len();
    check_order(n, k)?;
    require_positive(lambda)?;
    let e = elementary_symmetric(lambda);
    let g: f64 = log_terms(n, k, mode)
        .iter()
        .map(|&(c, m)| c * e[m].ln())
        .sum();
    Ok(g.exp())
}

/// Value, gradient `f_i` and Hessian `f_ij` with respect to the eigenvalues.
pub fn spectral_derivatives(
    lambda: &[f64],
    k: usize,
    mode: Mode,
) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
    let n = lambda.len();
    check_order(n, k)?;
    require_positive(lambda)?;
    let e = elementary_symmetric(lambda);
    let mut g = 0.0;
    let mut gi = vec![0.0; n];
    let mut gij = DMatrix::<f64>::zeros(n, n);
    for (c, m) in log_terms(n, k, mode) {
        let s = e[m];
        g += c * s.ln();
        if m == 0 {
            continue;
        }
        let m = m as isize;
        let d1: Vec<f64> = (0..n).map(|i| sigma_without(lambda, &[i], m - 1)).collect();
        for i in 0..n {
            gi[i] += c * d1[i] / s;
            for j in 0..n {
                let d2 = if i == j {
                    0.0
                } else {
                    sigma_without(lambda, &[i, j], m - 2)
                };
                gij[(i, j)] += c * (d2 / s - d1[i] * d1[j] / (s * s));
            }
        }
    }
    let f = g.exp();
    let fi: Vec<f64> = gi.iter().map(|x| f * x).collect();
    let fij = DMatrix::from_fn(n, n, |i, j| f * (gij[(i, j)] + gi[i] * gi[j]));
    Ok((f, fi, fij))
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Argument(format!(
            "matrix is {}x{}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOL * a.amax().max(f64::MIN_POSITIVE) {
        return Err(Error::Argument(format!("matrix asymmetry {asym:.3e}")));
    }
    Ok(())
}

/// Evaluate `F` or `F*` and the matrix gradient `∂F/∂a_{ij}`.
pub fn eval_operator(req: &SpectrumRequest) -> Result<OperatorValue> {
    check_symmetric(&req.a)?;
    let eig = jacobi_eigen(&req.a);
    let (value, fi, _) = spectral_derivatives(&eig.values, req.k, req.mode)?;
    Ok(OperatorValue {
        value,
        gradient: eig.compose(&fi),
        eigenvalues: eig.values,
    })
}

/// Gradient of the bare `σ_k(A)` (no root), `σ_k^{pq}`.
pub fn sigma_k_matrix_gradient(a: &DMatrix<f64>, k: usize) -> Result<(f64, DMatrix<f64>)> {
    check_symmetric(a)?;
    let n = a.nrows();
    check_order(n, k)?;
    let eig = jacobi_eigen(a);
    let d: Vec<f64> = (0..n)
        .map(|i| sigma_without(&eig.values, &[i], k as isize - 1))
        .collect();
    Ok((elementary_symmetric(&eig.values)[k], eig.compose(&d)))
}

/// Second variation `Σ F^{ij,rs} X_ij X_rs` in the direction of a symmetric
/// matrix `X`.
///
/// Off-diagonal eigenbasis entries are weighted by `(f_i - f_j)/(λ_i - λ_j)`,
/// replaced by its coalesced limit `f_ii - f_ij` for near-equal eigenvalues.
pub fn second_variation(req: &SpectrumRequest, x: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(&req.a)?;
    let eig: SymmetricEigen = jacobi_eigen(&req.a);
    let lam = &eig.values;
    let (_, fi, fij) = spectral_derivatives(lam, req.k, req.mode)?;
    let xt = eig.rotate_in(x);
    let n = lam.len();
    let scale = lam.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += fij[(i, j)] * xt[(i, i)] * xt[(j, j)];
            if i != j {
                let gap = lam[i] - lam[j];
                let gamma = if gap.abs() < DEGENERATE_GAP * scale {
                    fij[(i, i)] - fij[(i, j)]
                } else {
                    (fi[i] - fi[j]) / gap
                };
                s += gamma * xt[(i, j)] * xt[(i, j)];
            }
        }
    }
    Ok(s)
}

/// `F(diag κ) · F*(diag 1/κ)`, identically one on the positive cone.
pub fn duality_product(kappa: &[f64], k: usize) -> Result<f64> {
    require_positive(kappa)?;
    let radii: Vec<f64> = kappa.iter().map(|x| 1.0 / x).collect();
    Ok(spectral_value(kappa, k, Mode::Primal)? * spectral_value(&radii, k, Mode::Dual)?)
}

/// Cone membership summary for an eigenvalue vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeReport {
    pub lambda_positive: Vec<bool>,
    /// `sigma_positive[j-1]` tells whether `σ_j > 0`.
    pub sigma_positive: Vec<bool>,
    pub lambda_min: f64,
    pub strictly_convex: bool,
    /// Nonnegative with at least one (numerically) zero entry.
    pub on_boundary: bool,
}

impl ConeReport {
    pub fn inside(&self) -> bool {
        self.strictly_convex
    }
}

pub fn cone_check(lambda: &[f64]) -> ConeReport {
    let e = elementary_symmetric(lambda);
    let scale = lambda.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let zero_tol = 1e-14 * scale.max(f64::MIN_POSITIVE);
    let lambda_min = lambda.iter().copied().fold(f64::INFINITY, f64::min);
    ConeReport {
        lambda_positive: lambda.iter().map(|&l| l > 0.0).collect(),
        sigma_positive: e[1..].iter().map(|&s| s > 0.0).collect(),
        lambda_min,
        strictly_convex: lambda_min > 0.0,
        on_boundary: lambda_min.abs() <= zero_tol,
    }
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn subset_sum(lambda: &[f64], k: usize) -> f64 {
        let n = lambda.len();
        (0u32..(1 << n))
            .filter(|m| m.count_ones() as usize == k)
            .map(|m| (0..n).filter(|i| m & (1 << i) != 0).map(|i| lambda[i]).product::<f64>())
            .sum()
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(n, n) * 0.3
    }

    #[test]
    fn small_cases() {
        assert_eq!(sigma_k(&[1.0, 2.0, 3.0], 2).unwrap(), 11.0);
        for n in 1..7 {
            for k in 1..=n {
                let v = sigma_k(&vec![1.0; n], k).unwrap();
                assert!((v - binomial(n, k)).abs() < 1e-12);
            }
        }
        assert!(sigma_k(&[1.0, 2.0], 3).is_err());
        assert!(sigma_k(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn matches_subset_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lambda: Vec<f64> = (0..10).map(|_| rng.gen_range(0.1..2.0)).collect();
        for k in 1..=10 {
            let fast = sigma_k(&lambda, k).unwrap();
            let slow = subset_sum(&lambda, k);
            assert!(((fast - slow) / slow).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn operator_examples() {
        let v = eval_operator(&SpectrumRequest {
            a: DMatrix::identity(3, 3),
            k: 2,
            mode: Mode::Primal,
        })
        .unwrap();
        assert!((v.value - 3f64.sqrt()).abs() < 1e-14);

        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 1.0 / 3.0]));
        let v = eval_operator(&SpectrumRequest { a, k: 2, mode: Mode::Dual }).unwrap();
        assert!((v.value - (1.0f64 / 11.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn cone_violation_carries_eigenvalues() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        match eval_operator(&SpectrumRequest { a, k: 1, mode: Mode::Dual }) {
            Err(Error::ConeViolation { eigenvalues }) => assert_eq!(eigenvalues, vec![-0.5, 1.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn fd_gradient(a: &DMatrix<f64>, k: usize, mode: Mode, h: f64) -> DMatrix<f64> {
        let n = a.nrows();
        let f = |m: &DMatrix<f64>| {
            let e = jacobi_eigen(m);
            spectral_value(&e.values, k, mode).unwrap()
        };
        DMatrix::from_fn(n, n, |i, j| {
            // perturb a_ij and a_ji together; halve the off-diagonal response
            let mut p = a.clone();
            let mut m = a.clone();
            p[(i, j)] += h;
            m[(i, j)] -= h;
            if i != j {
                p[(j, i)] += h;
                m[(j, i)] -= h;
            }
            let d = (f(&p) - f(&m)) / (2.0 * h);
            if i == j {
                d
            } else {
                0.5 * d
            }
        })
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for mode in [Mode::Primal, Mode::Dual] {
            for _ in 0..10 {
                let a = random_spd(&mut rng, 4);
                let v = eval_operator(&SpectrumRequest { a: a.clone(), k: 2, mode }).unwrap();
                let fd = fd_gradient(&a, 2, mode, 1e-6);
                let err = (&v.gradient - &fd).amax() / v.gradient.amax();
                assert!(err < 1e-6, "{mode:?} err {err}");
            }
        }
    }

    #[test]
    fn gradient_near_degenerate_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let q = b.qr().q();
        let d = DVector::from_vec(vec![1.0, 1.0 + 1e-9, 2.5]);
        let a = &q * DMatrix::from_diagonal(&d) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        for mode in [Mode::Primal, Mode::Dual] {
            let v = eval_operator(&SpectrumRequest { a: a.clone(), k: 2, mode }).unwrap();
            let fd = fd_gradient(&a, 2, mode, 1e-6);
            assert!((&v.gradient - &fd).amax() / v.gradient.amax() < 1e-6);
        }
    }

    #[test]
    fn second_variation_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for mode in [Mode::Primal, Mode::Dual] {
            for degenerate in [false, true] {
                let a = if degenerate {
                    let q = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
                    let d = DVector::from_vec(vec![0.7, 0.7 + 1e-10, 1.9]);
                    let a = &q * DMatrix::from_diagonal(&d) * q.transpose();
                    (&a + a.transpose()) * 0.5
                } else {
                    random_spd(&mut rng, 3)
                };
                let x = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
                let x = (&x + x.transpose()) * 0.5;
                let req = SpectrumRequest { a: a.clone(), k: 2, mode };
                let exact = second_variation(&req, &x).unwrap();
                let f = |t: f64| {
                    let e = jacobi_eigen(&(&a + &x * t));
                    spectral_value(&e.values, 2, mode).unwrap()
                };
                let h = 1e-4;
                let fd = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
                assert!((exact - fd).abs() < 1e-5 * (1.0 + exact.abs()), "{exact} vs {fd}");
            }
        }
    }

    #[test]
    fn cone_reports() {
        assert!(cone_check(&[1.0, 1.0]).inside());
        let r = cone_check(&[1.0, -0.5]);
        assert!(!r.inside() && r.lambda_min < 0.0);
        let r = cone_check(&[0.0, 0.3, 2.0]);
        assert!(r.on_boundary && !r.strictly_convex);
    }

    #[test]
    fn duality_product_examples() {
        assert!((duality_product(&[1.0, 2.0, 3.0], 2).unwrap() - 1.0).abs() < 1e-14);
        assert!((duality_product(&[0.37; 4], 3).unwrap() - 1.0).abs() < 1e-14);
        assert!(duality_product(&[1.0, 0.0], 1).is_err());
    }

    proptest! {
        #[test]
        fn newton_maclaurin(lambda in prop::collection::vec(0.01f64..10.0, 2..8)) {
            let n = lambda.len();
            let means: Vec<f64> = (1..=n)
                .map(|k| (sigma_k(&lambda, k).unwrap() / binomial(n, k)).powf(1.0 / k as f64))
                .collect();
            for w in means.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }

        #[test]
        fn duality_product_is_one(kappa in prop::collection::vec(0.05f64..20.0, 1..7), kk in 1usize..7) {
            let k = 1 + (kk - 1) % kappa.len();
            let p = duality_product(&kappa, k).unwrap();
            prop_assert!((p - 1.0).abs() < 1e-12);
        }

        #[test]
        fn concave_along_segments(seed in 0u64..10_000, t in 0.0f64..1.0, k in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_spd(&mut rng, 3);
            let b = random_spd(&mut rng, 3);
            for mode in [Mode::Primal, Mode::Dual] {
                let f = |m: &DMatrix<f64>| spectral_value(&jacobi_eigen(m).values, k, mode).unwrap();
                let mid = f(&(&a * t + &b * (1.0 - t)));
                prop_assert!(mid >= t * f(&a) + (1.0 - t) * f(&b) - 1e-12);
            }
        }

        #[test]
        fn orthogonal_invariance(seed in 0u64..10_000, k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_spd(&mut rng, 4);
            let q = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
            let b = q.transpose() * &a * &q;
            let b = (&b + b.transpose()) * 0.5;
            for mode in [Mode::Primal, Mode::Dual] {
                let fa = spectral_value(&jacobi_eigen(&a).values, k, mode).unwrap();
                let fb = spectral_value(&jacobi_eigen(&b).values, k, mode).unwrap();
                prop_assert!((fa - fb).abs() < 1e-12 * fa.max(1.0));
            }
        }
    }
}
