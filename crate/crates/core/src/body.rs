//! Strictly convex bodies with smooth concave defining functions.
//!
//! Each body has a level function `G` that is uniformly convex with `G = 1`
//! on the boundary. The defining function
//!
//! ```text
//! h = (1 - G) / √(|∇G|² + μ(1 - G))
//! ```
//!
//! is positive inside, vanishes on the boundary with `|Dh| = 1` there, and
//! reduces to `(ρ² - |p - c|²)/(2ρ)` for a ball of radius `ρ`. On the
//! boundary `h_νν = (G_νν - μ)/|∇G|`, so `μ` is set to twice the largest
//! curvature of `G` over the body. Far outside, where the radicand can turn
//! negative, it is replaced by a smooth positive floor.

use nalgebra::{DMatrix, DVector};

use crate::eigen::jacobi_eigen;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Ball { radius: f64 },
    Ellipse { semi_axes: [f64; 2], angle: f64 },
    /// Level function `½Σ(q_i/a_i)² + ½Σ|q_i/a_i|^m`; the quadratic part keeps
    /// the curvature bounded below where the pure power law flattens.
    Superellipse { semi_axes: [f64; 2], exponent: f64, angle: f64 },
}

/// Value, gradient and Hessian of the defining function at a point.
#[derive(Debug, Clone)]
pub struct DefiningJet {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvexBody {
    pub shape: Shape,
    pub center: DVector<f64>,
    mu: f64,
    floor: f64,
}

/// Boundary radius along a ray and its first two angular derivatives.
#[derive(Debug, Clone, Copy)]
pub struct RayRadius {
    pub r: f64,
    pub dr: f64,
    pub ddr: f64,
}

struct LocalLevel {
    g: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    /// `Σ_k G_{ijk} G_k`.
    third_grad: DMatrix<f64>,
}

impl ConvexBody {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || center.len() < 2 {
            return Err(Error::StrictConvexity(format!(
                "ball needs positive radius and dimension >= 2 (radius {radius}, dim {})",
                center.len()
            )));
        }
        Ok(ConvexBody {
            shape: Shape::Ball { radius },
            center: DVector::from_vec(center),
            mu: 4.0 / (radius * radius),
            floor: 1.0 / (radius * radius),
        })
    }

    pub fn ellipse(center: [f64; 2], semi_axes: [f64; 2], angle: f64) -> Result<Self> {
        if !(semi_axes[0] > 0.0 && semi_axes[1] > 0.0) {
            return Err(Error::StrictConvexity(format!("semi-axes {semi_axes:?} not positive")));
        }
        let amin = semi_axes[0].min(semi_axes[1]);
        let amax = semi_axes[0].max(semi_axes[1]);
        Ok(ConvexBody {
            shape: Shape::Ellipse { semi_axes, angle },
            center: DVector::from_row_slice(&center),
            mu: 4.0 / (amin * amin),
            floor: 1.0 / (amax * amax),
        })
    }

    /// Exponents below 2 give unbounded boundary curvature at the axes and
    /// are rejected.
    pub fn superellipse(center: [f64; 2], semi_axes: [f64; 2], exponent: f64, angle: f64) -> Result<Self> {
        if !(semi_axes[0] > 0.0 && semi_axes[1] > 0.0) {
            return Err(Error::StrictConvexity(format!("semi-axes {semi_axes:?} not positive")));
        }
        if !(exponent >= 2.0) {
            return Err(Error::StrictConvexity(format!(
                "superellipse exponent {exponent} < 2: defining function Hessian is unbounded at the axes, no uniform concavity bound"
            )));
        }
        let amin = semi_axes[0].min(semi_axes[1]);
        let amax = semi_axes[0].max(semi_axes[1]);
        // |q_i/a_i| <= 1 inside, where G_ii peaks at (1 + m(m-1)/2)/a_i²
        let gmax = (1.0 + 0.5 * exponent * (exponent - 1.0)) / (amin * amin);
        Ok(ConvexBody {
            shape: Shape::Superellipse { semi_axes, exponent, angle },
            center: DVector::from_row_slice(&center),
            mu: 2.0 * gmax,
            floor: 0.25 / (amax * amax),
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn interior_point(&self) -> DVector<f64> {
        self.center.clone()
    }

    fn rotation(&self) -> Option<DMatrix<f64>> {
        let angle = match self.shape {
            Shape::Ball { .. } => return None,
            Shape::Ellipse { angle, .. } | Shape::Superellipse { angle, .. } => angle,
        };
        let (s, c) = angle.sin_cos();
        Some(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]))
    }

    fn to_local(&self, p: &DVector<f64>) -> DVector<f64> {
        let d = p - &self.center;
        match self.rotation() {
            Some(r) => r.transpose() * d,
            None => d,
        }
    }

    fn local_level(&self, q: &DVector<f64>) -> LocalLevel {
        let n = q.len();
        match self.shape {
            Shape::Ball { radius } => {
                let c = 1.0 / (radius * radius);
                LocalLevel {
                    g: c * q.norm_squared(),
                    grad: q * (2.0 * c),
                    hess: DMatrix::identity(n, n) * (2.0 * c),
                    third_grad: DMatrix::zeros(n, n),
                }
            }
            Shape::Ellipse { semi_axes: a, .. } => {
                let c = [1.0 / (a[0] * a[0]), 1.0 / (a[1] * a[1])];
                LocalLevel {
                    g: c[0] * q[0] * q[0] + c[1] * q[1] * q[1],
                    grad: DVector::from_vec(vec![2.0 * c[0] * q[0], 2.0 * c[1] * q[1]]),
                    hess: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0 * c[0], 2.0 * c[1]])),
                    third_grad: DMatrix::zeros(2, 2),
                }
            }
            Shape::Superellipse { semi_axes: a, exponent: m, .. } => {
                let mut g = 0.0;
                let mut d1 = DVector::zeros(2);
                let mut d2 = DMatrix::zeros(2, 2);
                let mut d3g = DMatrix::zeros(2, 2);
                for i in 0..2 {
                    let t = q[i] / a[i];
                    let at = t.abs();
                    let sg = t.signum();
                    g += 0.5 * t * t + 0.5 * at.powf(m);
                    d1[i] = (t + 0.5 * m * at.powf(m - 1.0) * sg) / a[i];
                    d2[(i, i)] = (1.0 + 0.5 * m * (m - 1.0) * at.powf(m - 2.0)) / (a[i] * a[i]);
                    let third = if at == 0.0 {
                        0.0
                    } else {
                        0.5 * m * (m - 1.0) * (m - 2.0) * at.powf(m - 3.0) * sg / a[i].powi(3)
                    };
                    d3g[(i, i)] = third * d1[i];
                }
                LocalLevel { g, grad: d1, hess: d2, third_grad: d3g }
            }
        }
    }

    /// Level function `G` (value, gradient, Hessian) in world coordinates.
    pub fn level(&self, p: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let l = self.local_level(&self.to_local(p));
        match self.rotation() {
            Some(r) => (l.g, &r * l.grad, &r * l.hess * r.transpose()),
            None => (l.g, l.grad, l.hess),
        }
    }

    /// Defining function `h` with its gradient and Hessian.
    pub fn defining(&self, p: &DVector<f64>) -> DefiningJet {
        let l = self.local_level(&self.to_local(p));
        let n = p.len();
        let phi = 1.0 - l.g;
        let raw = l.grad.norm_squared() + self.mu * phi;
        let mut ds = &l.hess * &l.grad * 2.0 - &l.grad * self.mu;
        let mut dds = &l.hess * &l.hess * 2.0 + &l.third_grad * 2.0 - &l.hess * self.mu;
        // C¹ floor f0(1 + exp((S - 2f0)/f0)) below S = 2f0
        let f0 = self.floor;
        let s = if raw >= 2.0 * f0 {
            raw
        } else {
            let e = ((raw - 2.0 * f0) / f0).exp();
            dds = &dds * e + &ds * ds.transpose() * (e / f0);
            ds *= e;
            f0 * (1.0 + e)
        };
        let rs = s.sqrt();
        let value = phi / rs;
        let dphi = -&l.grad;
        let grad = &dphi / rs - &ds * (0.5 * phi / (s * rs));
        let s32 = s * rs;
        let s52 = s32 * s;
        let mut hess = -&l.hess / rs;
        hess -= (&dphi * ds.transpose() + &ds * dphi.transpose()) * (0.5 / s32);
        hess += &ds * ds.transpose() * (0.75 * phi / s52);
        hess -= &dds * (0.5 * phi / s32);
        let hess = DMatrix::from_fn(n, n, |i, j| 0.5 * (hess[(i, j)] + hess[(j, i)]));
        match self.rotation() {
            Some(r) => DefiningJet {
                value,
                gradient: &r * grad,
                hessian: &r * hess * r.transpose(),
            },
            None => DefiningJet { value, gradient: grad, hessian: hess },
        }
    }

    pub fn contains(&self, p: &DVector<f64>) -> bool {
        self.level(p).0 < 1.0
    }

    fn ray_level(&self, theta: f64, r: f64) -> (f64, f64) {
        let e = DVector::from_vec(vec![theta.cos(), theta.sin()]);
        let (g, dg, _) = self.level(&(&self.center + &e * r));
        (g - 1.0, dg.dot(&e))
    }

    /// Distance from the centre to the boundary along angle `theta`, with
    /// its angular derivatives from implicit differentiation of `G = 1`.
    pub fn ray_radius(&self, theta: f64) -> Result<RayRadius> {
        if self.dim() != 2 {
            return Err(Error::Argument("ray radius is defined for planar bodies only".into()));
        }
        let mut hi = 1.0;
        let mut guard = 0;
        while self.ray_level(theta, hi).0 < 0.0 {
            hi *= 2.0;
            guard += 1;
            if guard > 200 {
                return Err(Error::Grid(format!("ray at angle {theta} never leaves the body")));
            }
        }
        let mut lo = 0.0;
        let mut r = 0.5 * hi;
        for _ in 0..200 {
            let (f, df) = self.ray_level(theta, r);
            if f < 0.0 {
                lo = r;
            } else {
                hi = r;
            }
            let mut next = r - f / df;
            if !(next > lo && next < hi) || df <= 0.0 {
                next = 0.5 * (lo + hi);
            }
            if (next - r).abs() <= 1e-16 * r {
                r = next;
                break;
            }
            r = next;
        }
        // polish the last ulp
        let (f, df) = self.ray_level(theta, r);
        if df > 0.0 {
            r -= f / df;
        }

        let e = DVector::from_vec(vec![theta.cos(), theta.sin()]);
        let ep = DVector::from_vec(vec![-theta.sin(), theta.cos()]);
        let (_, dg, hg) = self.level(&(&self.center + &e * r));
        let pr = dg.dot(&e);
        let pt = r * dg.dot(&ep);
        let prr = (e.transpose() * &hg * &e)[0];
        let prt = dg.dot(&ep) + r * (e.transpose() * &hg * &ep)[0];
        let ptt = r * r * (ep.transpose() * &hg * &ep)[0] - r * dg.dot(&e);
        let dr = -pt / pr;
        let ddr = -(prr * dr * dr + 2.0 * prt * dr + ptt) / pr;
        Ok(RayRadius { r, dr, ddr })
    }

    /// Boundary point for spherical angles (one angle in the plane).
    pub fn boundary_point(&self, angles: &[f64]) -> Result<DVector<f64>> {
        let n = self.dim();
        if angles.len() != n - 1 {
            return Err(Error::Argument(format!(
                "expected {} boundary angles, got {}",
                n - 1,
                angles.len()
            )));
        }
        match self.shape {
            Shape::Ball { radius } => Ok(&self.center + sphere_direction(angles) * radius),
            _ => {
                let rr = self.ray_radius(angles[0])?;
                let e = DVector::from_vec(vec![angles[0].cos(), angles[0].sin()]);
                Ok(&self.center + e * rr.r)
            }
        }
    }

    /// A unit tangent at a planar boundary point (counter-clockwise).
    pub fn tangent(&self, p: &DVector<f64>) -> DVector<f64> {
        let g = self.defining(p).gradient;
        let g = &g / g.norm();
        DVector::from_vec(vec![g[1], -g[0]])
    }

    /// Largest distance from the centre to the boundary.
    pub fn bounding_radius(&self) -> f64 {
        match &self.shape {
            Shape::Ball { radius } => *radius,
            Shape::Ellipse { semi_axes, .. } => semi_axes[0].max(semi_axes[1]),
            Shape::Superellipse { .. } => (0..720)
                .filter_map(|j| self.ray_radius(j as f64 * std::f64::consts::PI / 360.0).ok())
                .map(|r| r.r)
                .fold(0.0, f64::max),
        }
    }

    /// Uniform concavity constant `θ_c` with `D²h ⪯ -θ_c I` on a probe sample
    /// of the closed body.
    pub fn concavity_probe(&self) -> Result<f64> {
        let n = self.dim();
        let mut worst = f64::NEG_INFINITY;
        let fractions = [0.0, 0.25, 0.5, 0.75, 0.9, 1.0];
        for dir in probe_directions(n) {
            let reach = match self.shape {
                Shape::Ball { radius } => radius,
                _ => self.ray_radius(dir[1].atan2(dir[0]))?.r,
            };
            for f in fractions {
                let p = &self.center + &dir * (f * reach);
                let l = jacobi_eigen(&self.defining(&p).hessian);
                worst = worst.max(l.values[n - 1]);
            }
        }
        if worst < 0.0 {
            Ok(-worst)
        } else {
            Err(Error::StrictConvexity(format!(
                "defining function Hessian has eigenvalue {worst:.3e} >= 0 on the probe sample"
            )))
        }
    }
}

/// Unit vector for spherical angles `(φ_1, …, φ_{n-1})`.
pub fn sphere_direction(angles: &[f64]) -> DVector<f64> {
    let n = angles.len() + 1;
    let mut v = DVector::zeros(n);
    let mut s = 1.0;
    // hyperspherical coordinates, azimuth in the first two components
    let m = angles.len();
    for i in (1..m).rev() {
        v[i + 1] = s * angles[i].cos();
        s *= angles[i].sin();
    }
    v[0] = s * angles[0].cos();
    v[1] = s * angles[0].sin();
    v
}

fn probe_directions(n: usize) -> Vec<DVector<f64>> {
    use std::f64::consts::PI;
    if n == 2 {
        (0..64)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / 64.0;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect()
    } else {
        let mut dirs = Vec::new();
        for i in 0..n {
            for s in [-1.0, 1.0] {
                let mut v = DVector::zeros(n);
                v[i] = s;
                dirs.push(v);
            }
        }
        dirs
    }
}
