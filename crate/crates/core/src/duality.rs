//! Hemisphere projection, support functions and the Legendre transform.
//!
//! A unit normal `x` in the open upper hemisphere is charted by
//! `y = P(x) = -x'/x_{n+1}`, so that `P(N) = Du`. In that chart the dual
//! function `u*` satisfies
//!
//! ```text
//! F*(w* b* D²u* b*) = ψ*(y, u*),   w* = √(1+|y|²),   b* = I + y yᵀ/(1+w*)
//! ```
//!
//! and `u*/w*` is the support value `v = -⟨X, N⟩` carried to the chart.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::Jet2;
use crate::interp::{invert_all, SampledField, Sample, P2};
use crate::psi::PsiSpec;
use crate::symfun::{self, Mode, OperatorValue, SpectrumRequest};

pub fn project(x: &DVector<f64>) -> Result<DVector<f64>> {
    let n = x.len() - 1;
    let last = x[n];
    if !(last > 0.0) {
        return Err(Error::Domain(format!("point with x_(n+1) = {last} is not in the upper hemisphere")));
    }
    if (x.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("point of norm {} is not on the sphere", x.norm())));
    }
    Ok(DVector::from_fn(n, |i, _| -x[i] / last))
}

pub fn unproject(y: &DVector<f64>) -> DVector<f64> {
    let n = y.len();
    let w = (1.0f64 + y.norm_squared()).sqrt();
    DVector::from_fn(n + 1, |i, _| if i < n { -y[i] / w } else { 1.0 / w })
}

/// The gradient map, which is the Gauss map read in the projected chart.
pub fn gauss_image(jet: &Jet2) -> DVector<f64> {
    jet.gradient.clone()
}

/// `b* = (I + y yᵀ)^{1/2}`.
pub fn b_star(y: &DVector<f64>) -> DMatrix<f64> {
    let n = y.len();
    let w = (1.0f64 + y.norm_squared()).sqrt();
    DMatrix::identity(n, n) + y * y.transpose() / (1.0 + w)
}

/// Signature of a `b*` builder, swappable so that fault injection can
/// exercise the verification suites.
pub type BStarFn = fn(&DVector<f64>) -> DMatrix<f64>;

#[derive(Debug, Clone)]
pub struct DualChartPack {
    pub y: DVector<f64>,
    pub w_star: f64,
    pub b_star: DMatrix<f64>,
    pub g_y: DMatrix<f64>,
    pub dual_matrix: DMatrix<f64>,
    /// Ascending.
    pub radii: Vec<f64>,
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// `w* b* H b*` for a chart Hessian `H`.
pub fn dual_matrix(y: &DVector<f64>, hess: &DMatrix<f64>) -> DMatrix<f64> {
    dual_matrix_with(b_star, y, hess)
}

pub fn dual_matrix_with(bs: BStarFn, y: &DVector<f64>, hess: &DMatrix<f64>) -> DMatrix<f64> {
    let w = (1.0f64 + y.norm_squared()).sqrt();
    let b = bs(y);
    symmetrize(&b * hess * &b * w)
}

pub fn dual_chart_pack(jet_star: &Jet2) -> DualChartPack {
    dual_chart_pack_with(b_star, jet_star)
}

pub fn dual_chart_pack_with(bs: BStarFn, jet_star: &Jet2) -> DualChartPack {
    let y = jet_star.point.clone();
    let n = y.len();
    let w_star = (1.0 + y.norm_squared()).sqrt();
    let dm = dual_matrix_with(bs, &y, &jet_star.hessian);
    let radii = crate::eigen::jacobi_eigen(&dm).values;
    DualChartPack {
        g_y: DMatrix::identity(n, n) + &y * y.transpose(),
        b_star: bs(&y),
        y,
        w_star,
        dual_matrix: dm,
        radii,
    }
}

/// `F*` of the dual matrix with its gradient.
pub fn dual_operator(jet_star: &Jet2, k: usize) -> Result<OperatorValue> {
    symfun::eval_operator(&SpectrumRequest {
        a: dual_matrix(&jet_star.point, &jet_star.hessian),
        k,
        mode: Mode::Dual,
    })
}

/// `F*(w* b* D²u* b*) - ψ*(y, u*)`.
pub fn dual_residual(jet_star: &Jet2, k: usize, psi: &PsiSpec) -> Result<f64> {
    let op = dual_operator(jet_star, k)?;
    Ok(op.value - psi.star(jet_star.point.as_slice(), jet_star.value))
}

#[derive(Debug, Clone)]
pub struct SupportData {
    pub v: f64,
    /// Components of `∇v` in the orthonormal frame `e_i = w* b*_ik ∂_k`.
    pub grad_v: DVector<f64>,
    pub lambda_matrix: DMatrix<f64>,
}

/// Spherical Hessian `∇²v + v I` of the support function read from the chart
/// function `V = w*·v`.
pub fn spherical_hessian(v_chart: &Jet2) -> SupportData {
    spherical_hessian_with(b_star, v_chart)
}

pub fn spherical_hessian_with(bs: BStarFn, v_chart: &Jet2) -> SupportData {
    let y = &v_chart.point;
    let w = (1.0f64 + y.norm_squared()).sqrt();
    let v = v_chart.value / w;
    // ∂(V/w) = DV/w - V y/w³
    let dv = &v_chart.gradient / w - y * (v_chart.value / (w * w * w));
    let frame = bs(y) * w;
    SupportData {
        v,
        grad_v: frame.transpose() * dv,
        lambda_matrix: dual_matrix_with(bs, y, &v_chart.hessian),
    }
}

/// Round metric of the sphere pulled back to the chart.
pub fn sphere_metric(y: &DVector<f64>) -> DMatrix<f64> {
    let n = y.len();
    let w2 = 1.0 + y.norm_squared();
    (DMatrix::identity(n, n) - y * y.transpose() / w2) / w2
}

/// Columns are the chart components of `e_i = w* b*_ik ∂_k`.
pub fn sphere_frame(y: &DVector<f64>) -> DMatrix<f64> {
    let w = (1.0f64 + y.norm_squared()).sqrt();
    b_star(y) * w
}

/// `Γ^k_ij = -(y_i δ_kj + y_j δ_ki)/w*²` of the pulled-back round metric.
pub fn christoffel(y: &DVector<f64>, k: usize, i: usize, j: usize) -> f64 {
    let w2 = 1.0 + y.norm_squared();
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    -(y[i] * d(k, j) + y[j] * d(k, i)) / w2
}

/// Covariant spherical Hessian `∇²f + f I` in the frame, from chart
/// derivatives of `f` (value, gradient and Hessian of `f` itself, not `w*f`).
pub fn covariant_lambda(y: &DVector<f64>, f: f64, df: &DVector<f64>, ddf: &DMatrix<f64>) -> DMatrix<f64> {
    let n = y.len();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        ddf[(i, j)] - (0..n).map(|k| christoffel(y, k, i, j) * df[k]).sum::<f64>()
    });
    let e = sphere_frame(y);
    symmetrize(e.transpose() * cov * e + DMatrix::identity(n, n) * f)
}

/// Right-hand sides of the sphere and chart forms of the equation.
#[derive(Debug, Clone)]
pub struct PsiTilde(pub PsiSpec);

#[derive(Debug, Clone)]
pub struct PsiStar(pub PsiSpec);

impl PsiTilde {
    /// `1/ψ(v, x)` for a unit normal `x` and support value `v`.
    pub fn eval(&self, x: &[f64], v: f64) -> f64 {
        self.0.tilde(x, v)
    }
}

impl PsiStar {
    pub fn eval(&self, y: &[f64], z: f64) -> f64 {
        self.0.star(y, z)
    }

    pub fn partials(&self, y: &[f64], z: f64) -> Result<(f64, Vec<f64>, f64)> {
        self.0.star_partials(y, z)
    }
}

pub fn psi_conversions(psi: &PsiSpec) -> (PsiTilde, PsiStar) {
    (PsiTilde(psi.clone()), PsiStar(psi.clone()))
}

/// One point of a numerical Legendre transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegendrePoint {
    pub y: P2,
    /// `f*(y) = x·y - f(x)`.
    pub value: f64,
    /// `x = Df*(y)`.
    pub x: P2,
    /// The sample of `f` at `x`.
    pub source: Sample,
}

/// Legendre transform of a sampled convex function at the given gradients.
pub fn legendre(field: &dyn SampledField, targets: &[P2]) -> Result<Vec<LegendrePoint>> {
    invert_all(field, targets)
        .into_iter()
        .zip(targets)
        .map(|(inv, &y)| {
            let inv = inv.ok_or_else(|| Error::OutOfImage { y: y.to_vec() })?;
            let x = inv.point;
            Ok(LegendrePoint {
                y,
                value: x[0] * y[0] + x[1] * y[1] - inv.sample.value,
                x,
                source: inv.sample,
            })
        })
        .collect()
}
