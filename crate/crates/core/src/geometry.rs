//! Pointwise tensors of the graph `X = (x, u(x))` computed from a 2-jet.
//!
//! With `w = √(1+|Du|²)`:
//!
//! ```text
//! g_ij  = δ_ij + u_i u_j          g^ij = δ_ij - u_i u_j / w²
//! b^ij  = δ_ij - u_i u_j/(w(1+w)) b_ij = δ_ij + u_i u_j/(1+w)
//! N     = (-Du, 1)/w              h_ij = u_ij / w
//! a_ij  = b^ik u_kl b^lj / w      (eigenvalues are the principal curvatures)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::body::ConvexBody;
use crate::eigen::jacobi_eigen;
use crate::error::{Error, Result};
use crate::psi::PsiSpec;
use crate::symfun::{self, Mode, SpectrumRequest};

/// Tolerance on the target defining function for boundary data.
pub const BOUNDARY_DATA_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    pub point: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl Jet2 {
    pub fn new(point: DVector<f64>, value: f64, gradient: DVector<f64>, hessian: DMatrix<f64>) -> Result<Self> {
        let n = point.len();
        if gradient.len() != n || hessian.nrows() != n || hessian.ncols() != n {
            return Err(Error::Argument(format!("jet dimensions disagree (n = {n})")));
        }
        let asym = (&hessian - hessian.transpose()).amax();
        if asym > 1e-14 * hessian.amax().max(1.0) {
            return Err(Error::Argument(format!("jet Hessian asymmetry {asym:.3e}")));
        }
        Ok(Jet2 { point, value, gradient, hessian })
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }
}

#[derive(Debug, Clone)]
pub struct CurvaturePack {
    pub w: f64,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_inv: DMatrix<f64>,
    pub normal: DVector<f64>,
    pub second_form: DMatrix<f64>,
    pub curvature_matrix: DMatrix<f64>,
    /// Ascending.
    pub kappa: Vec<f64>,
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// `b = (I + p pᵀ)^{-1/2}` in closed form.
pub fn inverse_sqrt_metric(p: &DVector<f64>) -> (f64, DMatrix<f64>) {
    let n = p.len();
    let w = (1.0 + p.norm_squared()).sqrt();
    (w, DMatrix::identity(n, n) - p * p.transpose() / (w * (1.0 + w)))
}

/// `a = b D²u b / w`.
pub fn curvature_matrix(p: &DVector<f64>, hess: &DMatrix<f64>) -> DMatrix<f64> {
    let (w, b) = inverse_sqrt_metric(p);
    symmetrize(&b * hess * &b / w)
}

pub fn curvature_pack(jet: &Jet2) -> CurvaturePack {
    let n = jet.dim();
    let du = &jet.gradient;
    let (w, b) = inverse_sqrt_metric(du);
    let outer = du * du.transpose();
    let id = DMatrix::<f64>::identity(n, n);
    let mut normal = DVector::zeros(n + 1);
    for i in 0..n {
        normal[i] = -du[i] / w;
    }
    normal[n] = 1.0 / w;
    let a = symmetrize(&b * &jet.hessian * &b / w);
    let kappa = jacobi_eigen(&a).values;
    CurvaturePack {
        w,
        g: &id + &outer,
        g_inv: &id - &outer / (w * w),
        b,
        b_inv: &id + &outer / (1.0 + w),
        normal,
        second_form: &jet.hessian / w,
        curvature_matrix: a,
        kappa,
    }
}

/// Support value `(x·Du - u)/w`, the `z` argument of `ψ`.
pub fn support_value(jet: &Jet2) -> f64 {
    let w = (1.0 + jet.gradient.norm_squared()).sqrt();
    (jet.point.dot(&jet.gradient) - jet.value) / w
}

/// `F(a) - ψ(z, N)`.
pub fn primal_residual(jet: &Jet2, k: usize, psi: &PsiSpec) -> Result<f64> {
    let pack = curvature_pack(jet);
    let f = symfun::spectral_value(&pack.kappa, k, Mode::Primal)?;
    Ok(f - psi.evaluate(support_value(jet), pack.normal.as_slice()))
}

/// `G(Du, D²u) = σ_k(a)`.
pub fn sigma_k_of_graph(p: &DVector<f64>, hess: &DMatrix<f64>, k: usize) -> Result<f64> {
    let a = curvature_matrix(p, hess);
    symfun::sigma_k(&jacobi_eigen(&a).values, k)
}

#[derive(Debug, Clone)]
pub struct PrimalLinearization {
    /// `∂G/∂u_ij`.
    pub gij: DMatrix<f64>,
    /// `∂G/∂u_s`.
    pub gs: DVector<f64>,
    /// `∂ψ/∂u_s` at fixed `x` and `u`.
    pub psis: DVector<f64>,
}

/// Coefficients of the linearized primal operator.
///
/// The gradient part is
///
/// ```text
/// G^s = -(u_s/w²) Σ G^ij u_ij
///       - 2/(w(1+w)) Σ_{i,j,t} σ_k^ij a_it (w u_t b^sj + u_j b^ts)
/// ```
///
/// The `1/w²` in the first term is what finite differences of `σ_k(a)`
/// reproduce; the index pairing of the second term is taken as `b^sj`,
/// `b^ts`.
pub fn primal_linearization(jet: &Jet2, k: usize, psi: &PsiSpec) -> Result<PrimalLinearization> {
    let n = jet.dim();
    let du = &jet.gradient;
    let (w, b) = inverse_sqrt_metric(du);
    let a = symmetrize(&b * &jet.hessian * &b / w);
    let lam = jacobi_eigen(&a).values;
    if !symfun::cone_check(&lam).inside() {
        return Err(Error::ConeViolation { eigenvalues: lam });
    }
    let (_, sij) = symfun::sigma_k_matrix_gradient(&a, k)?;
    let gij = symmetrize(&b * &sij * &b / w);
    let trace: f64 = gij.component_mul(&jet.hessian).sum();

    let mut gs = DVector::zeros(n);
    for s in 0..n {
        let mut t2 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for t in 0..n {
                    t2 += sij[(i, j)] * a[(i, t)] * (w * du[t] * b[(s, j)] + du[j] * b[(t, s)]);
                }
            }
        }
        gs[s] = -du[s] / (w * w) * trace - 2.0 / (w * (1.0 + w)) * t2;
    }

    let z = support_value(jet);
    let pack_normal: Vec<f64> = (0..n).map(|i| -du[i] / w).chain(std::iter::once(1.0 / w)).collect();
    let (pz, pp) = psi.partials(z, &pack_normal)?;
    let w3 = w * w * w;
    let xdu = jet.point.dot(du);
    let mut psis = DVector::zeros(n);
    for s in 0..n {
        let mut v = pz * (jet.point[s] / w - (xdu - jet.value) / w3 * du[s]);
        for i in 0..n {
            let dn = if i == s { -1.0 / w } else { 0.0 } + du[i] * du[s] / w3;
            v += pp[i] * dn;
        }
        v -= pp[n] * du[s] / w3;
        psis[s] = v;
    }
    Ok(PrimalLinearization { gij, gs, psis })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obliqueness {
    pub chi_def: f64,
    pub chi_formula: f64,
}

/// Moore–Penrose inverse of a symmetric matrix.
pub fn symmetric_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = jacobi_eigen(m);
    let scale = e.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let inv: Vec<f64> = e
        .values
        .iter()
        .map(|&v| if v.abs() > 1e-12 * scale { 1.0 / v } else { 0.0 })
        .collect();
    e.compose(&inv)
}

/// Strict obliqueness `⟨Dh(Du), ν⟩` and its closed form
/// `√((u^ij ν_i ν_j)(u_kl h_{p_k} h_{p_l}))`.
pub fn obliqueness_chi(jet: &Jet2, nu: &DVector<f64>, target: &ConvexBody) -> Result<Obliqueness> {
    let d = target.defining(&jet.gradient);
    if d.value.abs() > BOUNDARY_DATA_TOL {
        return Err(Error::BoundaryMismatch { defect: d.value });
    }
    let chi_def = d.gradient.dot(nu);
    let hinv = symmetric_pinv(&jet.hessian);
    let q1 = (nu.transpose() * hinv * nu)[0];
    let q2 = (d.gradient.transpose() * &jet.hessian * &d.gradient)[0];
    Ok(Obliqueness {
        chi_def,
        chi_formula: (q1 * q2).max(0.0).sqrt(),
    })
}

/// `F` and its matrix gradient for the curvature matrix of a jet.
pub fn primal_operator(jet: &Jet2, k: usize) -> Result<symfun::OperatorValue> {
    symfun::eval_operator(&SpectrumRequest {
        a: curvature_matrix(&jet.gradient, &jet.hessian),
        k,
        mode: Mode::Primal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psi::{GeneralPsi, Profile, TrigProfile, TrigTerm};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn cap_jet(x: &[f64], r: f64) -> Jet2 {
        let x = DVector::from_row_slice(x);
        let n = x.len();
        let s = (r * r - x.norm_squared()).sqrt();
        let grad = &x / s;
        let hess = DMatrix::identity(n, n) / s + &x * x.transpose() / (s * s * s);
        Jet2::new(x, -s, grad, hess).unwrap()
    }

    /// Convex quartic `Σ c_i x_i² + (Σ d_i x_i)⁴ + ½|x|²` evaluated exactly.
    fn quartic_jet(rng: &mut ChaCha8Rng, n: usize) -> Jet2 {
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let d = DVector::from_fn(n, |_, _| rng.gen_range(-0.7..0.7));
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-0.8..0.8));
        let l = d.dot(&x);
        let value = (0..n).map(|i| c[i] * x[i] * x[i]).sum::<f64>() + l.powi(4) + 0.5 * x.norm_squared();
        let grad = DVector::from_fn(n, |i, _| 2.0 * c[i] * x[i] + 4.0 * l.powi(3) * d[i] + x[i]);
        let hess = DMatrix::from_fn(n, n, |i, j| {
            (if i == j { 2.0 * c[i] + 1.0 } else { 0.0 }) + 12.0 * l * l * d[i] * d[j]
        });
        Jet2::new(x, value, grad, hess).unwrap()
    }

    fn trig_psi() -> PsiSpec {
        PsiSpec::Exponential {
            eps: 0.3,
            profile: Profile::Trig(TrigProfile {
                base: 1.5,
                terms: vec![
                    TrigTerm { component: 0, amplitude: 0.3, frequency: 2.0, phase: 0.1 },
                    TrigTerm { component: 2, amplitude: 0.2, frequency: 1.0, phase: 0.0 },
                ],
            }),
        }
    }

    #[test]
    fn flat_point() {
        let jet = Jet2::new(DVector::zeros(3), 0.0, DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        let p = curvature_pack(&jet);
        assert_eq!(p.w, 1.0);
        assert_eq!(p.g, DMatrix::identity(3, 3));
        assert_eq!(p.kappa, vec![1.0; 3]);
    }

    #[test]
    fn sphere_has_constant_curvature() {
        let r = 1.3;
        for x in [[0.0, 0.0], [0.5, -0.3], [1.0, 0.6]] {
            let p = curvature_pack(&cap_jet(&x, r));
            for kv in p.kappa {
                assert!((kv - 1.0 / r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pack_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in 2..6 {
            for _ in 0..20 {
                let jet = quartic_jet(&mut rng, n);
                let p = curvature_pack(&jet);
                assert!((&p.b * &p.b - &p.g_inv).amax() < 1e-12);
                assert!((&p.b * &p.b_inv - DMatrix::identity(n, n)).amax() < 1e-12);
                assert!((p.normal.norm() - 1.0).abs() < 1e-14);
                assert!(p.kappa.iter().all(|&k| k > 0.0));
                // shape operator h_ik g^kj, an independent path
                let shape = &p.second_form * &p.g_inv;
                let mut ev: Vec<f64> = shape.complex_eigenvalues().iter().map(|c| c.re).collect();
                ev.sort_by(f64::total_cmp);
                for (a, b) in ev.iter().zip(&p.kappa) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn residual_examples() {
        let r = 0.9;
        for k in 1..=3 {
            let psi = PsiSpec::Constant(symfun::binomial(3, k).powf(1.0 / k as f64) / r);
            let res = primal_residual(&cap_jet(&[0.2, -0.1, 0.3], r), k, &psi).unwrap();
            assert!(res.abs() < 1e-12);
        }
        let jet = Jet2::new(DVector::zeros(2), 0.0, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!((primal_residual(&jet, 1, &PsiSpec::Constant(1.0)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn residual_matches_raw_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let psi = trig_psi();
        for _ in 0..50 {
            let jet = quartic_jet(&mut rng, 2);
            let (x, u, du, hs) = (&jet.point, jet.value, &jet.gradient, &jet.hessian);
            // the 2x2 case written out: σ_1 = tr, σ_2 = det of the shape operator
            let w2 = 1.0 + du.norm_squared();
            let w = w2.sqrt();
            let gi = DMatrix::identity(2, 2) - du * du.transpose() / w2;
            let sh = hs * &gi / w;
            let sig1 = sh.trace();
            let z = (x.dot(du) - u) / w;
            let p = [-du[0] / w, -du[1] / w, 1.0 / w];
            let raw = sig1 - (-0.3 * z * w).exp()
                * (1.5 + 0.3 * (2.0 * p[0] + 0.1).cos() + 0.2 * p[2].cos());
            assert!((primal_residual(&jet, 1, &psi).unwrap() - raw).abs() < 1e-12);
        }
    }

    fn fd_check(jet: &Jet2, k: usize, psi: &PsiSpec) {
        let n = jet.dim();
        let lin = primal_linearization(jet, k, psi).unwrap();
        let h = 1e-6;
        let g = |p: &DVector<f64>, m: &DMatrix<f64>| sigma_k_of_graph(p, m, k).unwrap();
        let scale = lin.gij.amax().max(lin.gs.amax());
        for i in 0..n {
            for j in 0..n {
                let mut a = jet.hessian.clone();
                let mut c = jet.hessian.clone();
                a[(i, j)] += h;
                c[(i, j)] -= h;
                if i != j {
                    a[(j, i)] += h;
                    c[(j, i)] -= h;
                }
                let d = (g(&jet.gradient, &a) - g(&jet.gradient, &c)) / (2.0 * h);
                let d = if i == j { d } else { 0.5 * d };
                assert!((d - lin.gij[(i, j)]).abs() < 1e-6 * scale, "G^ij");
            }
        }
        let psi_of = |p: &DVector<f64>| {
            let j2 = Jet2 { gradient: p.clone(), ..jet.clone() };
            let pack = curvature_pack(&j2);
            psi.evaluate(support_value(&j2), pack.normal.as_slice())
        };
        for s in 0..n {
            let mut a = jet.gradient.clone();
            let mut c = jet.gradient.clone();
            a[s] += h;
            c[s] -= h;
            let d = (g(&a, &jet.hessian) - g(&c, &jet.hessian)) / (2.0 * h);
            assert!((d - lin.gs[s]).abs() < 1e-6 * scale, "G^s {d} vs {}", lin.gs[s]);
            let dp = (psi_of(&a) - psi_of(&c)) / (2.0 * h);
            assert!((dp - lin.psis[s]).abs() < 1e-6 * (1.0 + dp.abs()), "psi^s");
        }
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let psi = trig_psi();
        for i in 0..100 {
            let n = 2 + i % 3;
            let jet = quartic_jet(&mut rng, n);
            fd_check(&jet, 1 + i % n, &psi);
        }
    }

    #[test]
    fn linearization_symmetric_critical_point() {
        let jet = Jet2::new(DVector::zeros(3), 0.0, DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        let lin = primal_linearization(&jet, 2, &PsiSpec::Constant(1.0)).unwrap();
        assert!((&lin.gij - DMatrix::identity(3, 3) * lin.gij[(0, 0)]).amax() < 1e-12);
        assert_eq!(lin.psis, DVector::zeros(3));
    }

    #[test]
    fn missing_partials_surface() {
        let psi = PsiSpec::General(GeneralPsi {
            value: Arc::new(|_, _| 1.0),
            partials: None,
            monotone: true,
            decays: false,
        });
        let jet = Jet2::new(DVector::zeros(2), 0.0, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(primal_linearization(&jet, 1, &psi), Err(Error::Capability(_))));
    }

    #[test]
    fn cap_obliqueness_is_one() {
        let rho: f64 = 0.5;
        let r = (1.0 + rho * rho).sqrt();
        let target = ConvexBody::ball(vec![0.0, 0.0], rho).unwrap();
        for t in [0.0f64, 0.7, 2.0, 4.4] {
            // |Du| = ρ exactly when |x| = ρ because R² = 1 + ρ²
            let x = [rho * t.cos(), rho * t.sin()];
            let jet = cap_jet(&x, r);
            let nu = -DVector::from_row_slice(&x) / rho;
            let o = obliqueness_chi(&jet, &nu, &target).unwrap();
            assert!((o.chi_def - 1.0).abs() < 1e-12);
            assert!((o.chi_formula - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_obliqueness() {
        let target = ConvexBody::ball(vec![0.0, 0.0], 1.0).unwrap();
        // Du on the boundary, Dh(Du) = -e1, probe normal e2, Hessian blind to e2
        let jet = Jet2::new(
            DVector::zeros(2),
            0.0,
            DVector::from_vec(vec![1.0, 0.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])),
        )
        .unwrap();
        let o = obliqueness_chi(&jet, &DVector::from_vec(vec![0.0, 1.0]), &target).unwrap();
        assert_eq!(o.chi_def, 0.0);
        assert_eq!(o.chi_formula, 0.0);
    }

    #[test]
    fn boundary_mismatch_reported() {
        let target = ConvexBody::ball(vec![0.0, 0.0], 1.0).unwrap();
        let jet = Jet2::new(DVector::zeros(2), 0.0, DVector::from_vec(vec![0.5, 0.0]), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(
            obliqueness_chi(&jet, &DVector::from_vec(vec![1.0, 0.0]), &target),
            Err(Error::BoundaryMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn rotation_invariance(seed in 0u64..5000, angle in 0.0f64..6.3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let jet = quartic_jet(&mut rng, 2);
            let (s, c) = angle.sin_cos();
            let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            // ũ(x) = u(Qᵀx): jet at Qx
            let rot = Jet2 {
                point: &q * &jet.point,
                value: jet.value,
                gradient: &q * &jet.gradient,
                hessian: symmetrize(&q * &jet.hessian * q.transpose()),
            };
            let a = curvature_pack(&jet).kappa;
            let b = curvature_pack(&rot).kappa;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            // ψ depends on the normal only through p_{n+1} and z here
            let psi = PsiSpec::Exponential { eps: 0.2, profile: Profile::Trig(TrigProfile {
                base: 2.0, terms: vec![TrigTerm { component: 2, amplitude: 0.5, frequency: 1.0, phase: 0.0 }] }) };
            let r1 = primal_residual(&jet, 2, &psi).unwrap();
            let r2 = primal_residual(&rot, 2, &psi).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-12);
        }
    }
}
