//! Damped Newton with ε-continuation for the dual oblique problem
//!
//! ```text
//! F*(w* b* D²u* b*) = ψ*_ε(y, u*)   in Ω*,      h*(Du*) = 0   on ∂Ω*,
//! ```
//!
//! on a body-fitted polar grid of `Ω*`, followed by recovery of the primal
//! graph, the constant `c` and the boundary diagnostics.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::body::ConvexBody;
use crate::duality::{b_star, dual_matrix};
use crate::eigen::jacobi_eigen;
use crate::error::{Error, Result};
use crate::geometry::{obliqueness_chi, Jet2};
use crate::grid::{Grid, NodeClass, PolarField, G1, G2, H11, H12, H22};
use crate::interp::{invert_gradient, SampledField, P2};
use crate::linsolve::SparseSystem;
use crate::psi::PsiSpec;
use crate::symfun::{eval_operator, Mode, SpectrumRequest};

pub const DEFAULT_SCHEDULE: [f64; 5] = [0.4, 0.2, 0.1, 0.05, 0.025];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub eps: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub spd_floor: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, spd_floor: 1e-8, max_iter: 200 }
    }
}

/// `Ω` (through its defining function `h*`), `Ω*` (gridded), `k` and the
/// normal-only right-hand side `ψ₀`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub omega: ConvexBody,
    pub omega_star: ConvexBody,
    pub k: usize,
    pub psi: PsiSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub chi_min: f64,
    /// Formula (a) at the minimising node.
    pub chi_formula: f64,
    /// Polar angle of the minimising boundary node about the grid centre.
    pub chi_angle: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "M_tilde")]
    pub m_tilde: f64,
}

/// `u*` is carried as `level + u_star[i]`. Continuation drives the constant
/// part to `O(1/ε)`, and its ulp times the near-pole stencil weights would
/// otherwise set a residual floor above the Newton tolerance.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub grid: Arc<Grid>,
    pub level: f64,
    pub u_star: Vec<f64>,
    pub eps: f64,
    pub residual_norm: f64,
    /// Completed continuation levels.
    pub history: Vec<LevelRecord>,
    /// Residual ∞-norms of every Newton iterate, across levels.
    pub newton_history: Vec<f64>,
    /// `(ε, mean_u)` per completed level.
    pub means: Vec<(f64, f64)>,
    pub c_estimate: Option<f64>,
}

impl SolverState {
    /// Splits `values` into its mean and the deviations from it.
    pub fn new(grid: Arc<Grid>, values: Vec<f64>, eps: f64) -> Self {
        let level = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / values.len() as f64 };
        SolverState {
            grid,
            level,
            u_star: values.iter().map(|v| v - level).collect(),
            eps,
            residual_norm: f64::INFINITY,
            history: Vec::new(),
            newton_history: Vec::new(),
            means: Vec::new(),
            c_estimate: None,
        }
    }

    /// Nodal values of `u*`.
    pub fn values(&self) -> Vec<f64> {
        self.u_star.iter().map(|v| self.level + v).collect()
    }

    pub fn mean_u(&self) -> Option<f64> {
        self.means.last().map(|m| m.1)
    }
}

/// Gradient and Hessian of `u*` at every node.
pub fn node_derivatives(grid: &Grid, u: &[f64]) -> Vec<(P2, [[f64; 2]; 2])> {
    (0..grid.len()).into_par_iter().map(|i| grid.derivatives(u, i)).collect()
}

fn hess_matrix(h: &[[f64; 2]; 2]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[h[0][0], h[0][1], h[1][0], h[1][1]])
}

fn lambda_min2(h: &[[f64; 2]; 2]) -> f64 {
    let m = Matrix2::new(h[0][0], h[0][1], h[1][0], h[1][1]);
    let tr = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let d = (0.25 * (m[(0, 0)] - m[(1, 1)]).powi(2) + m[(0, 1)] * m[(0, 1)]).sqrt();
    tr - d
}

/// Residual with the set of interior nodes breaking the SPD floor.
#[derive(Debug, Clone)]
pub struct ResidualEval {
    pub values: Vec<f64>,
    pub violations: Vec<usize>,
    pub lambda_min: f64,
}

impl ResidualEval {
    pub fn norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

pub fn evaluate_residual(
    grid: &Grid,
    u: &[f64],
    level: f64,
    problem: &Problem,
    psi: &PsiSpec,
    spd_floor: f64,
) -> ResidualEval {
    let rows: Vec<(f64, Option<f64>)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (g, h) = grid.derivatives(u, i);
            let y = grid.point(i);
            match grid.class[i] {
                NodeClass::Boundary => {
                    (problem.omega.defining(&DVector::from_column_slice(&g)).value, None)
                }
                NodeClass::Interior => {
                    let lmin = lambda_min2(&h);
                    if !(lmin >= spd_floor) {
                        return (f64::NAN, Some(lmin));
                    }
                    let a = dual_matrix(&y, &hess_matrix(&h));
                    match eval_operator(&SpectrumRequest { a, k: problem.k, mode: Mode::Dual }) {
                        Ok(op) => (op.value - psi.star(y.as_slice(), level + u[i]), Some(lmin)),
                        Err(_) => (f64::NAN, Some(lmin)),
                    }
                }
            }
        })
        .collect();
    let mut violations = Vec::new();
    let mut lambda_min = f64::INFINITY;
    for (i, (v, l)) in rows.iter().enumerate() {
        if let Some(l) = l {
            lambda_min = lambda_min.min(*l);
        }
        if v.is_nan() {
            violations.push(i);
        }
    }
    ResidualEval { values: rows.into_iter().map(|r| r.0).collect(), violations, lambda_min }
}

/// Interior rows `F*(w*b*D²u*b*) - ψ*_ε`, boundary rows `h*(Du*)`.
pub fn assemble_residual(state: &SolverState, problem: &Problem, psi: &PsiSpec) -> Result<Vec<f64>> {
    let ev = evaluate_residual(&state.grid, &state.u_star, state.level, problem, psi, 0.0);
    if let Some(&i) = ev.violations.first() {
        let (_, h) = state.grid.derivatives(&state.u_star, i);
        return Err(Error::ConeViolation { eigenvalues: jacobi_eigen(&hess_matrix(&h)).values });
    }
    Ok(ev.values)
}

/// Analytic Jacobian of [`assemble_residual`].
pub fn assemble_jacobian(
    grid: &Grid,
    u: &[f64],
    level: f64,
    problem: &Problem,
    psi: &PsiSpec,
) -> Result<SparseSystem> {
    let rows: Vec<Result<Vec<(usize, f64)>>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (g, h) = grid.derivatives(u, i);
            let y = grid.point(i);
            let weights = grid.stencils[i].weights();
            match grid.class[i] {
                NodeClass::Boundary => {
                    let dh = problem.omega.defining(&DVector::from_column_slice(&g)).gradient;
                    Ok(weights.iter().map(|(c, w)| (*c, dh[0] * w[G1] + dh[1] * w[G2])).collect())
                }
                NodeClass::Interior => {
                    let a = dual_matrix(&y, &hess_matrix(&h));
                    let op = eval_operator(&SpectrumRequest { a, k: problem.k, mode: Mode::Dual })?;
                    let b = b_star(&y);
                    let w = (1.0 + y.norm_squared()).sqrt();
                    let gh = &b * &op.gradient * &b * w;
                    let (_, _, dz) = psi.star_partials(y.as_slice(), level + u[i])?;
                    Ok(weights
                        .iter()
                        .map(|(c, wt)| {
                            let mut v = gh[(0, 0)] * wt[H11] + (gh[(0, 1)] + gh[(1, 0)]) * wt[H12] + gh[(1, 1)] * wt[H22];
                            if *c == i {
                                v -= dz;
                            }
                            (*c, v)
                        })
                        .collect())
                }
            }
        })
        .collect();
    let mut sys = SparseSystem::new(grid.len());
    for (i, r) in rows.into_iter().enumerate() {
        sys.extend_row(i, r?);
    }
    Ok(sys)
}

/// Outcome of one Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub history: Vec<f64>,
    pub rejected_steps: usize,
    /// `τ` added as `τ|y - c|²/2` to restore the SPD floor, if any.
    pub repair: Option<f64>,
}

/// Adds `τ|y - c|²/2` with doubling `τ` until every interior Hessian clears
/// the floor.
pub fn spd_repair(grid: &Grid, u: &mut [f64], spd_floor: f64) -> Result<Option<f64>> {
    let lmin = |u: &[f64]| {
        grid.interior_nodes().map(|i| lambda_min2(&grid.derivatives(u, i).1)).fold(f64::INFINITY, f64::min)
    };
    let l0 = lmin(u);
    if l0 >= spd_floor {
        return Ok(None);
    }
    let c = &grid.body.center;
    let bump: Vec<f64> = grid.nodes.iter().map(|p| 0.5 * ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2))).collect();
    let mut tau = (2.0 * (spd_floor - l0)).max(1e-3);
    for _ in 0..60 {
        let trial: Vec<f64> = u.iter().zip(&bump).map(|(a, b)| a + tau * b).collect();
        if lmin(&trial) >= spd_floor {
            u.copy_from_slice(&trial);
            return Ok(Some(tau));
        }
        tau *= 2.0;
    }
    Err(Error::StrictConvexity("SPD repair failed".into()))
}

/// Damped Newton on the residual ∞-norm with Armijo backtracking and the
/// SPD floor as a hard line-search constraint.
pub fn newton_solve(
    state: &mut SolverState,
    problem: &Problem,
    psi: &PsiSpec,
    opts: &SolverOptions,
) -> Result<NewtonReport> {
    let grid = Arc::clone(&state.grid);
    let repair = spd_repair(&grid, &mut state.u_star, opts.spd_floor)?;
    let level = state.level;
    let mut ev = evaluate_residual(&grid, &state.u_star, level, problem, psi, opts.spd_floor);
    if !ev.violations.is_empty() {
        return Err(Error::Stall { iteration: 0, residual: f64::NAN, history: vec![] });
    }
    let mut history = vec![ev.norm()];
    let mut rejected = 0;
    for it in 0..opts.max_iter {
        let r = ev.norm();
        state.residual_norm = r;
        if r <= opts.tol {
            state.newton_history.extend(&history);
            return Ok(NewtonReport { iterations: it, history, rejected_steps: rejected, repair });
        }
        let jac = assemble_jacobian(&grid, &state.u_star, level, problem, psi)?;
        let rhs: Vec<f64> = ev.values.iter().map(|v| -v).collect();
        let delta = jac.solve(&rhs)?;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = state.u_star.iter().zip(&delta).map(|(u, d)| u + alpha * d).collect();
            let tev = evaluate_residual(&grid, &trial, level, problem, psi, opts.spd_floor);
            if tev.violations.is_empty() && tev.norm() <= (1.0 - 1e-4 * alpha) * r {
                accepted = Some((trial, tev));
                break;
            }
            rejected += 1;
            alpha *= 0.5;
        }
        match accepted {
            Some((u, tev)) => {
                state.u_star = u;
                ev = tev;
                history.push(ev.norm());
            }
            None => {
                state.newton_history.extend(&history);
                return Err(Error::Stall { iteration: it, residual: r, history });
            }
        }
    }
    state.residual_norm = ev.norm();
    state.newton_history.extend(&history);
    if state.residual_norm <= opts.tol {
        return Ok(NewtonReport { iterations: opts.max_iter, history, rejected_steps: rejected, repair });
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, residual: state.residual_norm, history })
}

/// `α w* + β·y` with `α, β` fitted so that `Du*` sends 16 boundary samples
/// of `Ω*` onto `∂Ω` in the least-squares sense.
pub fn initial_profile(grid: &Grid, problem: &Problem) -> Result<Vec<f64>> {
    let samples: Vec<DVector<f64>> = (0..16)
        .map(|s| problem.omega_star.boundary_point(&[s as f64 * std::f64::consts::PI / 8.0]))
        .collect::<Result<_>>()?;
    let dirs: Vec<Vector2<f64>> = samples
        .iter()
        .map(|y| {
            let w = (1.0 + y.norm_squared()).sqrt();
            Vector2::new(y[0] / w, y[1] / w)
        })
        .collect();
    let mean = dirs.iter().fold(Vector2::zeros(), |a, d| a + d) / dirs.len() as f64;
    let spread = dirs.iter().map(|d| (d - mean).norm()).fold(0.0, f64::max);
    let c = &problem.omega.center;
    let mut p = DVector::from_vec(vec![problem.omega.bounding_radius() / spread, 0.0, 0.0]);
    p[1] = c[0] - p[0] * mean[0];
    p[2] = c[1] - p[0] * mean[1];
    let residuals = |p: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let mut r = DVector::zeros(dirs.len());
        let mut j = DMatrix::zeros(dirs.len(), 3);
        for (s, d) in dirs.iter().enumerate() {
            let x = DVector::from_vec(vec![p[0] * d[0] + p[1], p[0] * d[1] + p[2]]);
            let dj = problem.omega.defining(&x);
            r[s] = dj.value;
            j[(s, 0)] = dj.gradient[0] * d[0] + dj.gradient[1] * d[1];
            j[(s, 1)] = dj.gradient[0];
            j[(s, 2)] = dj.gradient[1];
        }
        (r, j)
    };
    let mut lambda = 1e-6;
    for _ in 0..100 {
        let (r, j) = residuals(&p);
        let f0 = r.norm_squared();
        if f0 < 1e-28 {
            break;
        }
        let jt = j.transpose();
        let normal = &jt * &j + DMatrix::identity(3, 3) * lambda;
        let step = normal.lu().solve(&(-(&jt * &r))).ok_or_else(|| Error::Argument("degenerate profile fit".into()))?;
        let trial = &p + &step;
        if trial[0] > 0.0 && residuals(&trial).0.norm_squared() < f0 {
            p = trial;
            lambda = (lambda * 0.3).max(1e-12);
            if step.norm() < 1e-14 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e8 {
                break;
            }
        }
    }
    Ok(grid
        .nodes
        .iter()
        .map(|y| p[0] * (1.0 + y[0] * y[0] + y[1] * y[1]).sqrt() + p[1] * y[0] + p[2] * y[1])
        .collect())
}

/// Constant shift `γ` balancing `log F*` against `log ψ*_ε` over the
/// interior; zero outside the exponential family.
pub fn fit_shift(grid: &Grid, u: &[f64], level: f64, problem: &Problem, psi: &PsiSpec) -> f64 {
    let eps = match psi {
        PsiSpec::Exponential { eps, .. } if *eps > 0.0 => *eps,
        _ => return 0.0,
    };
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in grid.interior_nodes() {
        let (_, h) = grid.derivatives(u, i);
        let y = grid.point(i);
        let a = dual_matrix(&y, &hess_matrix(&h));
        if let Ok(op) = eval_operator(&SpectrumRequest { a, k: problem.k, mode: Mode::Dual }) {
            let star = psi.star(y.as_slice(), level + u[i]);
            if star > 0.0 && star.is_finite() {
                acc += (op.value.ln() - star.ln()) / eps;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        acc / count as f64
    }
}

/// Mean of the primal `u` over `Ω`, by the change of variables `x = Du*(y)`:
/// `∫(y·Du* - u*) det D²u* dy / ∫ det D²u* dy`.
pub fn primal_mean(grid: &Grid, u: &[f64], level: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..grid.len() {
        let (g, h) = grid.derivatives(u, i);
        let y = grid.nodes[i];
        let det = (h[0][0] * h[1][1] - h[0][1] * h[1][0]).max(0.0);
        let wgt = grid.weights[i] * det;
        num += wgt * (y[0] * g[0] + y[1] * g[1] - level - u[i]);
        den += wgt;
    }
    num / den
}

/// Linear extrapolation of `ε·mean_u` to `ε = 0` from the last two levels,
/// mapped to `c = exp(k L₀)`.
pub fn extrapolate_c(means: &[(f64, f64)], k: usize) -> Option<f64> {
    let l = |m: &(f64, f64)| m.0 * m.1;
    let l0 = match means {
        [] => return None,
        [only] => l(only),
        [.., a, b] => (a.0 * l(b) - b.0 * l(a)) / (a.0 - b.0),
    };
    Some((k as f64 * l0).exp())
}

/// Solve along the ε schedule, warm starting every level.
pub fn continuation_solve(
    problem: &Problem,
    grid: Arc<Grid>,
    schedule: &[f64],
    opts: &SolverOptions,
) -> Result<SolverState> {
    if schedule.is_empty() || schedule.windows(2).any(|w| w[1] >= w[0]) || schedule.iter().any(|&e| e <= 0.0) {
        return Err(Error::Argument("ε schedule must be positive and strictly decreasing".into()));
    }
    let mut state = SolverState::new(Arc::clone(&grid), initial_profile(&grid, problem)?, schedule[0]);
    for &eps in schedule {
        let psi = problem.psi.with_eps(eps)?;
        state.level += fit_shift(&grid, &state.u_star, state.level, problem, &psi);
        state.eps = eps;
        match newton_solve(&mut state, problem, &psi, opts) {
            Ok(rep) => {
                state.history.push(LevelRecord { eps, iterations: rep.iterations, residual: state.residual_norm });
                state.means.push((eps, primal_mean(&grid, &state.u_star, state.level)));
            }
            Err(e) => {
                return Err(Error::PartialContinuation { eps, completed: state.history.clone(), source: Box::new(e) })
            }
        }
    }
    state.c_estimate = extrapolate_c(&state.means, problem.k);
    Ok(state)
}

/// Strict obliqueness, `M` and `M̃` on a converged state.
pub fn diagnostics(state: &SolverState, problem: &Problem) -> Result<Diagnostics> {
    let grid = &state.grid;
    let u = &state.u_star;
    let ders = node_derivatives(grid, u);
    let mut chi = (f64::INFINITY, f64::NAN, f64::NAN);
    let mut m_tilde = f64::NEG_INFINITY;
    for i in grid.boundary_nodes() {
        let (g, h) = ders[i];
        let y = grid.point(i);
        let x = DVector::from_column_slice(&g);
        let hs = hess_matrix(&h);
        let dh_star = problem.omega.defining(&x).gradient;
        let nu = &dh_star / dh_star.norm();
        let chi_def = problem.omega_star.defining(&y).gradient.dot(&nu);
        if chi_def < chi.0 {
            let inv = hs.clone().try_inverse().ok_or(Error::ConeViolation { eigenvalues: jacobi_eigen(&hs).values })?;
            let jet = Jet2::new(x.clone(), x.dot(&y) - state.level - u[i], y.clone(), inv)?;
            let formula = obliqueness_chi(&jet, &nu, &problem.omega_star)?.chi_formula;
            let c = &grid.body.center;
            chi = (chi_def, formula, (y[1] - c[1]).atan2(y[0] - c[0]));
        }
        let eta = problem.omega_star.tangent(&y);
        let dtt = (eta.transpose() * &hs * &eta)[0];
        m_tilde = m_tilde.max((1.0 + y.norm_squared()) * dtt);
    }
    let m = (0..grid.len())
        .map(|i| {
            let y = grid.point(i);
            jacobi_eigen(&dual_matrix(&y, &hess_matrix(&ders[i].1))).values[1]
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Diagnostics { chi_min: chi.0, chi_formula: chi.1, chi_angle: chi.2, m, m_tilde })
}

/// The primal graph read off a converged dual state.
#[derive(Debug, Clone)]
pub struct PrimalRecovery {
    /// Samples `x_s` on `∂Ω`.
    pub boundary: Vec<P2>,
    /// `Du(x_s)`, the preimages under `Du*`.
    pub image: Vec<P2>,
    /// Hausdorff distance between the closed polygon through `image` and
    /// `∂Ω*`.
    pub hausdorff: f64,
    /// `max |h(Du(x_s))|`.
    pub boundary_defect: f64,
}

fn segment_distance(p: P2, a: P2, b: P2) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn polygon_distance(p: P2, poly: &[P2]) -> f64 {
    (0..poly.len()).map(|i| segment_distance(p, poly[i], poly[(i + 1) % poly.len()])).fold(f64::INFINITY, f64::min)
}

/// Hausdorff distance between two closed polygons.
pub fn hausdorff(a: &[P2], b: &[P2]) -> f64 {
    let ab = a.par_iter().map(|p| polygon_distance(*p, b)).reduce(|| 0.0, f64::max);
    let ba = b.par_iter().map(|p| polygon_distance(*p, a)).reduce(|| 0.0, f64::max);
    ab.max(ba)
}

/// `u(x) = x·y - u*(y)` with `Du*(y) = x`, for each query point.
pub fn primal_values(state: &SolverState, xs: &[P2]) -> Vec<Option<(P2, f64)>> {
    let field = PolarField::new(&state.grid, &state.u_star);
    let seeds = field.seeds();
    xs.par_iter()
        .map(|&x| {
            invert_gradient(&field, &seeds, x)
                .map(|inv| (inv.point, x[0] * inv.point[0] + x[1] * inv.point[1] - state.level - inv.sample.value))
        })
        .collect()
}

pub fn recover_primal(state: &SolverState, problem: &Problem) -> Result<PrimalRecovery> {
    let grid = &state.grid;
    let nt = grid.n_theta;
    let boundary: Vec<P2> = (0..nt)
        .map(|j| {
            let p = problem.omega.boundary_point(&[j as f64 * grid.dtheta])?;
            Ok([p[0], p[1]])
        })
        .collect::<Result<_>>()?;
    let inv = primal_values(state, &boundary);
    let mut image = Vec::with_capacity(nt);
    for (x, r) in boundary.iter().zip(inv) {
        match r {
            Some((y, _)) => image.push(y),
            None => return Err(Error::OutOfImage { y: x.to_vec() }),
        }
    }
    let dense: Vec<P2> = (0..8 * nt)
        .map(|j| {
            let p = problem.omega_star.boundary_point(&[j as f64 * grid.dtheta / 8.0])?;
            Ok([p[0], p[1]])
        })
        .collect::<Result<_>>()?;
    let boundary_defect = image
        .iter()
        .map(|y| problem.omega_star.defining(&DVector::from_column_slice(y)).value.abs())
        .fold(0.0, f64::max);
    Ok(PrimalRecovery { hausdorff: hausdorff(&image, &dense), boundary, image, boundary_defect })
}
