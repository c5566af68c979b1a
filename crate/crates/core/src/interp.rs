//! Sampled planar fields with interpolated first and second derivatives.
//!
//! Nodal gradients and Hessians come from second-order finite differences;
//! values and derivatives are then interpolated bilinearly in the sampling
//! coordinates, which keeps every quantity second-order accurate.

use rayon::prelude::*;

pub type P2 = [f64; 2];
pub type M2 = [[f64; 2]; 2];

/// Interpolated value, gradient and Hessian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub gradient: P2,
    pub hessian: M2,
}

impl Sample {
    pub fn lerp(a: &Sample, b: &Sample, t: f64) -> Sample {
        let l = |x: f64, y: f64| x + t * (y - x);
        Sample {
            value: l(a.value, b.value),
            gradient: [l(a.gradient[0], b.gradient[0]), l(a.gradient[1], b.gradient[1])],
            hessian: [
                [l(a.hessian[0][0], b.hessian[0][0]), l(a.hessian[0][1], b.hessian[0][1])],
                [l(a.hessian[1][0], b.hessian[1][0]), l(a.hessian[1][1], b.hessian[1][1])],
            ],
        }
    }

    pub fn bilinear(c00: &Sample, c10: &Sample, c01: &Sample, c11: &Sample, s: f64, t: f64) -> Sample {
        Sample::lerp(&Sample::lerp(c00, c10, s), &Sample::lerp(c01, c11, s), t)
    }
}

/// A convex function known at scattered nodes of some grid.
pub trait SampledField: Sync {
    /// `None` outside the sampled region.
    fn eval(&self, x: P2) -> Option<Sample>;
    /// Node positions with their gradients, used to seed inversions.
    fn seeds(&self) -> Vec<(P2, P2)>;
}

/// Uniform tensor grid on `[x0, x0 + (nx-1)h] × [y0, y0 + (ny-1)h]`.
#[derive(Debug, Clone)]
pub struct CartesianField {
    pub origin: P2,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    nodes: Vec<Sample>,
}

fn d1(f: &dyn Fn(isize) -> f64, i: usize, n: usize, h: f64) -> f64 {
    let i = i as isize;
    if i == 0 {
        (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
    } else if i as usize == n - 1 {
        (3.0 * f(i) - 4.0 * f(i - 1) + f(i - 2)) / (2.0 * h)
    } else {
        (f(i + 1) - f(i - 1)) / (2.0 * h)
    }
}

fn d2(f: &dyn Fn(isize) -> f64, i: usize, n: usize, h: f64) -> f64 {
    let i = i as isize;
    let h2 = h * h;
    if i == 0 {
        (2.0 * f(0) - 5.0 * f(1) + 4.0 * f(2) - f(3)) / h2
    } else if i as usize == n - 1 {
        (2.0 * f(i) - 5.0 * f(i - 1) + 4.0 * f(i - 2) - f(i - 3)) / h2
    } else {
        (f(i + 1) - 2.0 * f(i) + f(i - 1)) / h2
    }
}

impl CartesianField {
    /// Samples `f` at the nodes and differentiates numerically.
    pub fn from_fn(origin: P2, h: f64, nx: usize, ny: usize, f: impl Fn(P2) -> f64) -> Self {
        let vals: Vec<f64> = (0..ny)
            .flat_map(|j| (0..nx).map(move |i| (i, j)))
            .map(|(i, j)| f([origin[0] + i as f64 * h, origin[1] + j as f64 * h]))
            .collect();
        Self::from_values(origin, h, nx, ny, vals)
    }

    /// Row-major values (`x` fastest).
    pub fn from_values(origin: P2, h: f64, nx: usize, ny: usize, vals: Vec<f64>) -> Self {
        assert!(nx >= 4 && ny >= 4, "need at least 4 nodes per direction");
        assert_eq!(vals.len(), nx * ny);
        let at = |i: isize, j: isize| vals[j as usize * nx + i as usize];
        let nodes = (0..ny)
            .flat_map(|j| (0..nx).map(move |i| (i, j)))
            .map(|(i, j)| {
                let (ii, jj) = (i as isize, j as isize);
                let gx = d1(&|k| at(k, jj), i, nx, h);
                let gy = d1(&|k| at(ii, k), j, ny, h);
                let hxx = d2(&|k| at(k, jj), i, nx, h);
                let hyy = d2(&|k| at(ii, k), j, ny, h);
                let hxy = d1(&|k| d1(&|m| at(m, k), i, nx, h), j, ny, h);
                Sample {
                    value: at(ii, jj),
                    gradient: [gx, gy],
                    hessian: [[hxx, hxy], [hxy, hyy]],
                }
            })
            .collect();
        CartesianField { origin, h, nx, ny, nodes }
    }

    pub fn node(&self, i: usize, j: usize) -> &Sample {
        &self.nodes[j * self.nx + i]
    }

    pub fn position(&self, i: usize, j: usize) -> P2 {
        [self.origin[0] + i as f64 * self.h, self.origin[1] + j as f64 * self.h]
    }
}

impl SampledField for CartesianField {
    fn eval(&self, x: P2) -> Option<Sample> {
        let s = (x[0] - self.origin[0]) / self.h;
        let t = (x[1] - self.origin[1]) / self.h;
        let (mx, my) = ((self.nx - 1) as f64, (self.ny - 1) as f64);
        if !(s >= 0.0 && t >= 0.0 && s <= mx && t <= my) {
            return None;
        }
        let i = (s.floor() as usize).min(self.nx - 2);
        let j = (t.floor() as usize).min(self.ny - 2);
        Some(Sample::bilinear(
            self.node(i, j),
            self.node(i + 1, j),
            self.node(i, j + 1),
            self.node(i + 1, j + 1),
            s - i as f64,
            t - j as f64,
        ))
    }

    fn seeds(&self) -> Vec<(P2, P2)> {
        (0..self.ny)
            .flat_map(|j| (0..self.nx).map(move |i| (i, j)))
            .map(|(i, j)| (self.position(i, j), self.node(i, j).gradient))
            .collect()
    }
}

/// Result of inverting the gradient map at one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    /// The target gradient `y`.
    pub target: P2,
    /// The point `x` with `Df(x) = y`.
    pub point: P2,
    /// The sample of `f` at `x`.
    pub sample: Sample,
}

fn nearest_seed(seeds: &[(P2, P2)], y: P2) -> P2 {
    let mut best = (f64::INFINITY, seeds[0].0);
    for (x, g) in seeds {
        let d = (g[0] - y[0]).powi(2) + (g[1] - y[1]).powi(2);
        if d < best.0 {
            best = (d, *x);
        }
    }
    best.1
}

fn residual_norm(s: &Sample, y: P2) -> f64 {
    ((s.gradient[0] - y[0]).powi(2) + (s.gradient[1] - y[1]).powi(2)).sqrt()
}

/// Damped Newton on `Df(x) = y`, from the node whose gradient is nearest.
pub fn invert_gradient(field: &dyn SampledField, seeds: &[(P2, P2)], y: P2) -> Option<Inversion> {
    let mut x = nearest_seed(seeds, y);
    let mut s = field.eval(x)?;
    let tol = 1e-12 * (1.0 + y[0].abs() + y[1].abs());
    for _ in 0..200 {
        let r = residual_norm(&s, y);
        if r <= tol {
            return Some(Inversion { target: y, point: x, sample: s });
        }
        let h = s.hessian;
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if !(det > 0.0) {
            return None;
        }
        let (gx, gy) = (s.gradient[0] - y[0], s.gradient[1] - y[1]);
        let dx = [(h[1][1] * gx - h[0][1] * gy) / det, (h[0][0] * gy - h[1][0] * gx) / det];
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = [x[0] - step * dx[0], x[1] - step * dx[1]];
            if let Some(ts) = field.eval(trial) {
                if residual_norm(&ts, y) < r {
                    x = trial;
                    s = ts;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // stalled at roundoff level counts as converged
            return if r <= 1e3 * tol { Some(Inversion { target: y, point: x, sample: s }) } else { None };
        }
    }
    None
}

/// Invert the gradient map at many targets in parallel.
pub fn invert_all(field: &dyn SampledField, targets: &[P2]) -> Vec<Option<Inversion>> {
    let seeds = field.seeds();
    targets.par_iter().map(|&y| invert_gradient(field, &seeds, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratics_are_exact() {
        let f = |p: P2| 0.7 * p[0] * p[0] + 0.3 * p[0] * p[1] + 1.1 * p[1] * p[1] - p[0] + 2.0;
        let field = CartesianField::from_fn([-1.0, -1.0], 0.1, 21, 21, f);
        for x in [[0.0, 0.0], [-0.93, 0.41], [0.55, -0.99], [1.0, 1.0]] {
            let s = field.eval(x).unwrap();
            let g = [1.4 * x[0] + 0.3 * x[1] - 1.0, 0.3 * x[0] + 2.2 * x[1]];
            assert!((s.gradient[0] - g[0]).abs() < 1e-12 && (s.gradient[1] - g[1]).abs() < 1e-12);
            assert!((s.hessian[0][1] - 0.3).abs() < 1e-11);
            assert!((s.hessian[1][1] - 2.2).abs() < 1e-11);
        }
        assert!(field.eval([1.01, 0.0]).is_none());
    }

    #[test]
    fn inversion_of_quadratic() {
        let field = CartesianField::from_fn([-1.0, -1.0], 0.05, 41, 41, |p| 0.5 * (p[0] * p[0] + 2.0 * p[1] * p[1]));
        let inv = invert_all(&field, &[[0.3, -0.4], [5.0, 0.0]]);
        let a = inv[0].unwrap();
        assert!((a.point[0] - 0.3).abs() < 1e-11 && (a.point[1] + 0.2).abs() < 1e-11);
        assert!(inv[1].is_none());
    }
}
