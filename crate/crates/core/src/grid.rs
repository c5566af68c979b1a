//! Body-fitted polar grids on planar convex domains.
//!
//! Logical coordinates `(q, θ)` with `q_i = (i - ½)Δq`, `Δq = 1/(N_r - ½)`,
//! so the outermost ring sits at `q = 1`. With `S = sin(βq)/sin β`,
//! `β = π/3`, the physical radius along the ray at angle `θ` is
//!
//! ```text
//! ρ(S, θ) = ρ0 S + S³ a_e(θ) + S⁴ a_o(θ)
//! ```
//!
//! where `a = r_b - ρ0` is split into parts even and odd under `θ ↦ θ + π`.
//! This gives `ρ(1, θ) = r_b(θ)` exactly and `Y(-q, θ) = Y(q, θ + π)`, so the
//! first ring is continued through the centre by the opposite ring node.
//! Ring spacing at the boundary is half of that at the centre.
//!
//! Derivatives are taken in logical space and mapped by the chain rule; a
//! least-norm correction then makes every stencil exact on quadratics.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use std::f64::consts::PI;

use crate::body::ConvexBody;
use crate::error::{Error, Result};
use crate::interp::{SampledField, Sample, P2};

/// Column layout of stencil weights.
pub const G1: usize = 0;
pub const G2: usize = 1;
pub const H11: usize = 2;
pub const H12: usize = 3;
pub const H22: usize = 4;

const BOUNDARY_TOL: f64 = 1e-12;
const BETA: f64 = std::f64::consts::FRAC_PI_3;

fn radial(q: f64) -> (f64, f64, f64) {
    let k = 1.0 / BETA.sin();
    let (s, c) = (BETA * q).sin_cos();
    (s * k, BETA * c * k, -BETA * BETA * s * k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Boundary,
}

/// Weights of `[∂1, ∂2, ∂11, ∂12, ∂22]` at one node. Applied to differences
/// `u_c - u_self`, so constants are annihilated exactly.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub node: usize,
    pub entries: Vec<(usize, [f64; 5])>,
}

impl Stencil {
    pub fn apply(&self, u: &[f64]) -> [f64; 5] {
        let u0 = u[self.node];
        let mut out = [0.0; 5];
        for (c, w) in &self.entries {
            let d = u[*c] - u0;
            for k in 0..5 {
                out[k] += w[k] * d;
            }
        }
        out
    }

    /// The weight on `u_c` including the implied self weight.
    pub fn weights(&self) -> Vec<(usize, [f64; 5])> {
        let mut own = [0.0; 5];
        let mut out = Vec::with_capacity(self.entries.len() + 1);
        for (c, w) in &self.entries {
            for k in 0..5 {
                own[k] -= w[k];
            }
            out.push((*c, *w));
        }
        out.push((self.node, own));
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Ray {
    ae: [f64; 3],
    ao: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub body: ConvexBody,
    pub n_r: usize,
    pub n_theta: usize,
    pub dq: f64,
    pub dtheta: f64,
    pub rho0: f64,
    pub nodes: Vec<P2>,
    pub class: Vec<NodeClass>,
    pub stencils: Vec<Stencil>,
    /// Midpoint-rule area weights; the boundary ring owns a half cell.
    pub weights: Vec<f64>,
    /// Angular offset used by the interior stencils of each ring (index 0
    /// unused). Near the pole it widens so the arc step tracks the radial
    /// step; otherwise the `θθ` weights grow like `N_θ²N_r²` and roundoff in
    /// `u` floods the residual.
    pub stride: Vec<usize>,
    rays: Vec<Ray>,
}

struct MapJet {
    y: Vector2<f64>,
    /// Columns `Y_q`, `Y_θ`.
    jac: Matrix2<f64>,
    /// `[Y_qq, Y_qθ, Y_θθ]`.
    second: [Vector2<f64>; 3],
}

impl Ray {
    fn rho(&self, rho0: f64, s: f64) -> [f64; 6] {
        let (ae, ao) = (self.ae, self.ao);
        let (s2, s3) = (s * s, s * s * s);
        let s4 = s3 * s;
        [
            rho0 * s + s3 * ae[0] + s4 * ao[0],
            rho0 + 3.0 * s2 * ae[0] + 4.0 * s3 * ao[0],
            6.0 * s * ae[0] + 12.0 * s2 * ao[0],
            s3 * ae[1] + s4 * ao[1],
            s3 * ae[2] + s4 * ao[2],
            3.0 * s2 * ae[1] + 4.0 * s3 * ao[1],
        ]
    }
}

fn ray_for(body: &ConvexBody, theta: f64, rho0: f64) -> Result<Ray> {
    let a = body.ray_radius(theta)?;
    let b = body.ray_radius(theta + PI)?;
    let (a0, b0) = (a.r - rho0, b.r - rho0);
    Ok(Ray {
        ae: [0.5 * (a0 + b0), 0.5 * (a.dr + b.dr), 0.5 * (a.ddr + b.ddr)],
        ao: [0.5 * (a0 - b0), 0.5 * (a.dr - b.dr), 0.5 * (a.ddr - b.ddr)],
    })
}

impl Grid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node index of ring `i ∈ 1..=N_r` and ray `j` (taken modulo `N_θ`).
    pub fn index(&self, i: usize, j: isize) -> usize {
        let nt = self.n_theta as isize;
        (i - 1) * self.n_theta + j.rem_euclid(nt) as usize
    }

    pub fn q(&self, i: usize) -> f64 {
        (i as f64 - 0.5) * self.dq
    }

    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.dtheta
    }

    pub fn point(&self, idx: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.nodes[idx])
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.class[i] == NodeClass::Boundary)
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.class[i] == NodeClass::Interior)
    }

    /// Largest physical ring spacing scale, `max r_b / N_r`.
    pub fn h(&self) -> f64 {
        let rmax = (0..self.n_theta)
            .map(|j| {
                let p = &self.nodes[self.index(self.n_r, j as isize)];
                let c = &self.body.center;
                ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max);
        rmax / self.n_r as f64
    }

    fn map_jet(&self, q: f64, ray: &Ray, theta: f64) -> MapJet {
        let (s, sq, sqq) = radial(q);
        let [r, rs, rss, rt, rtt, rst] = ray.rho(self.rho0, s);
        let rq = rs * sq;
        let rqq = rss * sq * sq + rs * sqq;
        let rqt = rst * sq;
        let e = Vector2::new(theta.cos(), theta.sin());
        let ep = Vector2::new(-theta.sin(), theta.cos());
        let center = Vector2::new(self.body.center[0], self.body.center[1]);
        MapJet {
            y: center + e * r,
            jac: Matrix2::from_columns(&[e * rq, e * rt + ep * r]),
            second: [e * rqq, e * rqt + ep * rq, e * (rtt - r) + ep * (2.0 * rt)],
        }
    }

    /// Logical stencil `(i', j', [c_q, c_θ, c_qq, c_qθ, c_θθ])`; `i' = 0`
    /// denotes the mirrored ring.
    fn logical_stencil(&self, i: usize, j: isize) -> Vec<(usize, isize, [f64; 5])> {
        let (dq, dt) = (self.dq, self.dtheta);
        let mut v = Vec::new();
        let n = self.n_r;
        let s = self.stride[i] as isize;
        let dt = dt * s as f64;
        if i < n {
            let (a, b) = (i + 1, i - 1);
            v.push((a, j, [0.5 / dq, 0.0, 1.0 / (dq * dq), 0.0, 0.0]));
            v.push((b, j, [-0.5 / dq, 0.0, 1.0 / (dq * dq), 0.0, 0.0]));
            v.push((i, j, [0.0, 0.0, -2.0 / (dq * dq), 0.0, -2.0 / (dt * dt)]));
            let m = 1.0 / (4.0 * dq * dt);
            v.push((a, j + s, [0.0, 0.0, 0.0, m, 0.0]));
            v.push((a, j - s, [0.0, 0.0, 0.0, -m, 0.0]));
            v.push((b, j + s, [0.0, 0.0, 0.0, -m, 0.0]));
            v.push((b, j - s, [0.0, 0.0, 0.0, m, 0.0]));
        } else {
            let d1 = [3.0, -4.0, 1.0];
            let d2 = [2.0, -5.0, 4.0, -1.0];
            for (k, c) in d2.iter().enumerate() {
                let q1 = if k < 3 { d1[k] / (2.0 * dq) } else { 0.0 };
                v.push((n - k, j, [q1, 0.0, c / (dq * dq), 0.0, 0.0]));
            }
            v.push((n, j, [0.0, 0.0, 0.0, 0.0, -2.0 / (dt * dt)]));
            for (k, c) in d1.iter().enumerate() {
                let m = c / (2.0 * dq * 2.0 * dt);
                v.push((n - k, j + 1, [0.0, 0.0, 0.0, m, 0.0]));
                v.push((n - k, j - 1, [0.0, 0.0, 0.0, -m, 0.0]));
            }
        }
        v.push((i, j + s, [0.0, 0.5 / dt, 0.0, 0.0, 1.0 / (dt * dt)]));
        v.push((i, j - s, [0.0, -0.5 / dt, 0.0, 0.0, 1.0 / (dt * dt)]));
        v
    }

    fn physical_stencil(&self, i: usize, j: usize) -> Result<Stencil> {
        let me = self.index(i, j as isize);
        let ray = self.rays[j];
        let mj = self.map_jet(self.q(i), &ray, self.theta(j));
        let k = mj
            .jac
            .try_inverse()
            .ok_or_else(|| Error::Grid(format!("degenerate map at ring {i}, ray {j}")))?
            .transpose();
        let half = self.n_theta as isize / 2;
        let mut merged: Vec<(usize, [f64; 5])> = Vec::new();
        for (ii, jj, l) in self.logical_stencil(i, j as isize) {
            let col = if ii == 0 { self.index(1, jj + half) } else { self.index(ii, jj) };
            let g = k * Vector2::new(l[0], l[1]);
            let mut lm = Matrix2::new(l[2], l[3], l[3], l[4]);
            for m in 0..2 {
                lm -= Matrix2::new(mj.second[0][m], mj.second[1][m], mj.second[1][m], mj.second[2][m]) * g[m];
            }
            let h = k * lm * k.transpose();
            let w = [g[0], g[1], h[(0, 0)], 0.5 * (h[(0, 1)] + h[(1, 0)]), h[(1, 1)]];
            match merged.iter_mut().find(|(c, _)| *c == col) {
                Some((_, acc)) => (0..5).for_each(|t| acc[t] += w[t]),
                None => merged.push((col, w)),
            }
        }
        self.quadratic_correction(me, &mut merged)?;
        let entries = merged.into_iter().filter(|(c, _)| *c != me).collect();
        Ok(Stencil { node: me, entries })
    }

    /// Least-norm change of the weights making the stencil exact on the six
    /// monomials of degree ≤ 2 about the node, in units of the stencil size.
    fn quadratic_correction(&self, me: usize, w: &mut [(usize, [f64; 5])]) -> Result<()> {
        let p0 = self.nodes[me];
        let d: Vec<P2> = w.iter().map(|(c, _)| [self.nodes[*c][0] - p0[0], self.nodes[*c][1] - p0[1]]).collect();
        let s = d.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
        let nc = w.len();
        let m = DMatrix::from_fn(6, nc, |a, c| {
            let (x, y) = (d[c][0] / s, d[c][1] / s);
            [1.0, x, y, x * x, x * y, y * y][a]
        });
        let gram = (&m * m.transpose())
            .cholesky()
            .ok_or_else(|| Error::Grid(format!("stencil at node {me} is not unisolvent for quadratics")))?;
        let targets: [[f64; 6]; 5] = [
            [0.0, 1.0 / s, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0 / s, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 2.0 / (s * s), 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 1.0 / (s * s), 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 2.0 / (s * s)],
        ];
        // a second pass removes the roundoff left by the first
        for (t, target) in targets.iter().enumerate().flat_map(|e| [e, e]) {
            let cur = DVector::from_fn(nc, |c, _| w[c].1[t]);
            let r = DVector::from_column_slice(target) - &m * &cur;
            let delta = m.transpose() * gram.solve(&r);
            for c in 0..nc {
                w[c].1[t] += delta[c];
            }
        }
        Ok(())
    }

    /// Gradient and Hessian of nodal data at node `idx`.
    pub fn derivatives(&self, u: &[f64], idx: usize) -> (P2, [[f64; 2]; 2]) {
        let d = self.stencils[idx].apply(u);
        ([d[G1], d[G2]], [[d[H11], d[H12]], [d[H12], d[H22]]])
    }

    /// Physical point to logical `(s, t)` with ring `i` at `s = i` and ray `j`
    /// at `t = j`; `s` may exceed `N_r` outside the body.
    pub fn logical(&self, y: P2) -> Option<(f64, f64)> {
        let c = &self.body.center;
        let (dx, dy) = (y[0] - c[0], y[1] - c[1]);
        let r = dx.hypot(dy);
        let theta = dy.atan2(dx).rem_euclid(2.0 * PI);
        let t = theta / self.dtheta;
        if r == 0.0 {
            return Some((0.5, t));
        }
        let ray = ray_for(&self.body, theta, self.rho0).ok()?;
        let rb = ray.rho(self.rho0, 1.0)[0];
        if r > rb {
            let rin = ray.rho(self.rho0, radial(self.q(self.n_r - 1)).0)[0];
            return Some((self.n_r as f64 + (r - rb) / (rb - rin), t));
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut s = r / rb;
        for _ in 0..100 {
            let v = ray.rho(self.rho0, s);
            let f = v[0] - r;
            if f > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let mut next = s - f / v[1];
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() < 1e-15 {
                s = next;
                break;
            }
            s = next;
        }
        Some(((s.min(1.0) * BETA.sin()).asin() / BETA / self.dq + 0.5, t))
    }
}

pub fn build_grid(body: &ConvexBody, n_r: usize, n_theta: usize) -> Result<Grid> {
    if body.dim() != 2 {
        return Err(Error::Grid("polar grids are planar".into()));
    }
    if n_r < 8 || n_theta < 16 || n_theta % 2 != 0 {
        return Err(Error::Grid(format!("need N_r ≥ 8 and even N_θ ≥ 16, got {n_r}×{n_theta}")));
    }
    let dq = 1.0 / (n_r as f64 - 0.5);
    let dtheta = 2.0 * PI / n_theta as f64;
    let radii: Vec<f64> = (0..n_theta)
        .map(|j| body.ray_radius(j as f64 * dtheta).map(|r| r.r))
        .collect::<Result<_>>()?;
    let rho0 = radii.iter().cloned().fold(f64::INFINITY, f64::min);
    let rays: Vec<Ray> = (0..n_theta)
        .map(|j| ray_for(body, j as f64 * dtheta, rho0))
        .collect::<Result<_>>()?;
    for (j, ray) in rays.iter().enumerate() {
        for k in 0..=100 {
            if ray.rho(rho0, k as f64 / 100.0)[1] <= 0.0 {
                return Err(Error::Grid(format!("radial map folds on ray {j}; body is not star-shaped enough")));
            }
        }
    }
    let mut grid = Grid {
        body: body.clone(),
        n_r,
        n_theta,
        dq,
        dtheta,
        rho0,
        nodes: Vec::with_capacity(n_r * n_theta),
        class: Vec::with_capacity(n_r * n_theta),
        stencils: Vec::new(),
        weights: Vec::with_capacity(n_r * n_theta),
        stride: (0..=n_r)
            .map(|i| {
                if i == 0 || i == n_r {
                    return 1;
                }
                let (s0, s1) = (radial(dq * (i as f64 - 0.5)).0, radial(dq * (i as f64 + 0.5)).0);
                (((s1 - s0) / (s0 * dtheta)).floor() as usize).clamp(1, n_theta / 8)
            })
            .collect(),
        rays,
    };
    for i in 1..=n_r {
        for j in 0..n_theta {
            let mj = grid.map_jet(grid.q(i), &grid.rays[j], grid.theta(j));
            let mut p = [mj.y[0], mj.y[1]];
            if i == n_r {
                // the boundary ring is placed from the ray solve directly
                let t = grid.theta(j);
                let c = &body.center;
                p = [c[0] + radii[j] * t.cos(), c[1] + radii[j] * t.sin()];
                let h = body.defining(&DVector::from_column_slice(&p)).value;
                if h.abs() > BOUNDARY_TOL {
                    return Err(Error::Grid(format!("boundary node {j} has h = {h:e}")));
                }
            }
            let half = if i == n_r { 0.5 } else { 1.0 };
            grid.weights.push(half * mj.jac.determinant().abs() * dq * dtheta);
            grid.nodes.push(p);
            grid.class.push(if i == n_r { NodeClass::Boundary } else { NodeClass::Interior });
        }
    }
    let stencils: Vec<Stencil> = {
        use rayon::prelude::*;
        (0..n_r * n_theta)
            .into_par_iter()
            .map(|idx| grid.physical_stencil(idx / n_theta + 1, idx % n_theta))
            .collect::<Result<_>>()?
    };
    grid.stencils = stencils;
    validate(&grid)?;
    Ok(grid)
}

fn validate(grid: &Grid) -> Result<()> {
    let c = &grid.body.center;
    let quad = |p: &P2| {
        let (x, y) = (p[0] - c[0], p[1] - c[1]);
        0.3 + x - 0.5 * y + 0.7 * x * x + 0.3 * x * y - 0.4 * y * y
    };
    let u: Vec<f64> = grid.nodes.iter().map(quad).collect();
    for idx in 0..grid.len() {
        let (g, h) = grid.derivatives(&u, idx);
        let p = grid.nodes[idx];
        let (x, y) = (p[0] - c[0], p[1] - c[1]);
        let err = [
            g[0] - (1.0 + 1.4 * x + 0.3 * y),
            g[1] - (-0.5 + 0.3 * x - 0.8 * y),
            h[0][0] - 1.4,
            h[0][1] - 0.3,
            h[1][1] + 0.8,
        ];
        let e = err.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if e > 1e-6 {
            return Err(Error::Grid(format!("stencil at node {idx} misses a quadratic by {e:e}")));
        }
    }
    Ok(())
}

/// Nodal data with derivatives, interpolated bilinearly in logical space.
#[derive(Debug, Clone)]
pub struct PolarField<'a> {
    pub grid: &'a Grid,
    pub samples: Vec<Sample>,
}

impl<'a> PolarField<'a> {
    pub fn new(grid: &'a Grid, u: &[f64]) -> Self {
        let samples = (0..grid.len())
            .map(|idx| {
                let (g, h) = grid.derivatives(u, idx);
                Sample { value: u[idx], gradient: g, hessian: h }
            })
            .collect();
        PolarField { grid, samples }
    }

    fn ring_sample(&self, i: usize, j: isize) -> &Sample {
        if i == 0 {
            &self.samples[self.grid.index(1, j + self.grid.n_theta as isize / 2)]
        } else {
            &self.samples[self.grid.index(i, j)]
        }
    }
}

impl SampledField for PolarField<'_> {
    fn eval(&self, x: P2) -> Option<Sample> {
        let (s, t) = self.grid.logical(x)?;
        let n = self.grid.n_r;
        if s > n as f64 + 1.0 {
            return None;
        }
        let i0 = (s.floor() as usize).min(n - 1);
        let j0 = t.floor();
        let (fs, ft) = (s - i0 as f64, t - j0);
        let j0 = j0 as isize;
        Some(Sample::bilinear(
            self.ring_sample(i0, j0),
            self.ring_sample(i0 + 1, j0),
            self.ring_sample(i0, j0 + 1),
            self.ring_sample(i0 + 1, j0 + 1),
            fs,
            ft,
        ))
    }

    fn seeds(&self) -> Vec<(P2, P2)> {
        self.grid.nodes.iter().zip(&self.samples).map(|(p, s)| (*p, s.gradient)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::invert_gradient;

    #[test]
    fn unit_disk_layout() {
        let body = ConvexBody::ball(vec![0.0, 0.0], 1.0).unwrap();
        let g = build_grid(&body, 8, 16).unwrap();
        assert_eq!(g.len(), 128);
        for idx in g.boundary_nodes() {
            let p = g.nodes[idx];
            assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-14);
        }
        assert_eq!(g.boundary_nodes().count(), 16);
    }

    #[test]
    fn ellipse_boundary_on_level() {
        let body = ConvexBody::ellipse([0.1, -0.2], [1.0, 0.6], 0.4).unwrap();
        let g = build_grid(&body, 12, 24).unwrap();
        for idx in g.boundary_nodes() {
            assert!(body.defining(&g.point(idx)).value.abs() <= 1e-12);
        }
    }

    #[test]
    fn quadrature_weights_sum_to_area() {
        let body = ConvexBody::ellipse([0.1, 0.0], [0.6, 0.4], 0.3).unwrap();
        let err = |nr: usize| {
            let g = build_grid(&body, nr, 2 * nr).unwrap();
            (g.weights.iter().sum::<f64>() - PI * 0.6 * 0.4).abs()
        };
        let (e1, e2) = (err(16), err(32));
        assert!(e2 < 1e-3 && e1 / e2 > 3.0, "{e1} {e2}");
    }

    #[test]
    fn rejects_small_or_odd_grids() {
        let body = ConvexBody::ball(vec![0.0, 0.0], 1.0).unwrap();
        assert!(matches!(build_grid(&body, 4, 16), Err(Error::Grid(_))));
        assert!(matches!(build_grid(&body, 8, 17), Err(Error::Grid(_))));
    }

    fn quadratic_exactness(body: &ConvexBody, nr: usize, nt: usize) {
        let g = build_grid(body, nr, nt).unwrap();
        let a = [[1.3, -0.4], [-0.4, 0.9]];
        let b = [0.2, -0.7];
        let u: Vec<f64> = g
            .nodes
            .iter()
            .map(|p| 0.5 * (a[0][0] * p[0] * p[0] + 2.0 * a[0][1] * p[0] * p[1] + a[1][1] * p[1] * p[1]) + b[0] * p[0] + b[1] * p[1] + 0.1)
            .collect();
        for idx in 0..g.len() {
            let (gr, h) = g.derivatives(&u, idx);
            let p = g.nodes[idx];
            for r in 0..2 {
                let exact = a[r][0] * p[0] + a[r][1] * p[1] + b[r];
                assert!((gr[r] - exact).abs() < 1e-11, "grad at {idx}");
                for c in 0..2 {
                    assert!((h[r][c] - a[r][c]).abs() < 1e-11, "hess at {idx}: {} vs {}", h[r][c], a[r][c]);
                }
            }
        }
    }

    #[test]
    fn quadratics_are_differentiated_exactly() {
        quadratic_exactness(&ConvexBody::ball(vec![0.0, 0.0], 0.5).unwrap(), 8, 16);
        quadratic_exactness(&ConvexBody::ellipse([0.0, 0.0], [0.6, 0.4], 0.3).unwrap(), 10, 20);
        quadratic_exactness(&ConvexBody::superellipse([0.0, 0.0], [0.5, 0.4], 4.0, 0.0).unwrap(), 8, 16);
    }

    #[test]
    fn smooth_function_second_order() {
        // near the pole (ring 1 and the strided rings) the angular step does
        // not shrink at a fixed ring index and the Hessian is first order;
        // every other ring is second order
        let body = ConvexBody::ellipse([0.0, 0.0], [0.6, 0.4], 0.3).unwrap();
        let f = |p: &P2| (p[0] + 0.3 * p[1]).exp() + (2.0 * p[1]).sin();
        let hxx = |p: &P2| (p[0] + 0.3 * p[1]).exp();
        let err = |nr: usize, inner: bool| {
            let g = build_grid(&body, nr, 2 * nr).unwrap();
            let u: Vec<f64> = g.nodes.iter().map(f).collect();
            let ring = |i: usize| i / g.n_theta + 1;
            (0..g.len())
                .filter(|&i| (ring(i) == 1 || g.stride[ring(i)] > 1) == inner)
                .map(|i| (g.derivatives(&u, i).1[0][0] - hxx(&g.nodes[i])).abs())
                .fold(0.0, f64::max)
        };
        let r = err(16, false) / err(32, false);
        assert!(r > 3.2 && r < 4.8, "{r}");
        let r1 = err(16, true) / err(32, true);
        assert!(r1 > 1.6, "{r1}");
    }

    #[test]
    fn polar_field_interpolates_and_inverts() {
        let body = ConvexBody::ellipse([0.05, 0.0], [0.6, 0.45], 0.2).unwrap();
        let g = build_grid(&body, 24, 48).unwrap();
        let f = |p: &P2| 0.5 * (p[0] * p[0] + 2.0 * p[1] * p[1]) + 0.1 * p[0];
        let u: Vec<f64> = g.nodes.iter().map(f).collect();
        let field = PolarField::new(&g, &u);
        for x in [[0.05, 0.0], [0.3, 0.2], [-0.4, -0.1], [0.0001, -0.0002]] {
            let s = field.eval(x).unwrap();
            assert!((s.value - f(&x)).abs() < 1e-3, "{x:?}");
            assert!((s.gradient[1] - 2.0 * x[1]).abs() < 1e-2);
        }
        assert!(field.eval([3.0, 0.0]).is_none());
        let inv = invert_gradient(&field, &field.seeds(), [0.2, -0.3]).unwrap();
        assert!((inv.point[0] - 0.1).abs() < 1e-3 && (inv.point[1] + 0.15).abs() < 1e-3);
    }
}
