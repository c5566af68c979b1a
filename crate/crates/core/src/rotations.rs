//! Rotation groups of `R^{n+1}` acting on the projected chart.
//!
//! For a boundary anchor `y0` with unit tangent `ξ`, `A_t` rotates the plane
//! spanned by `x0 = P⁻¹(y0)` and `e1 ∝ dP⁻¹(ξ)` and fixes its complement.
//! The induced maps `σ_t = P ∘ A_t ∘ P⁻¹` form a one-parameter group whose
//! generator is
//!
//! ```text
//! T(y) = w (⟨X, e1⟩ (x0' + y x0_{n+1}) - ⟨X, x0⟩ (e1' + y e1_{n+1})),  X = P⁻¹(y)
//!      = C + L y + (q·y) y
//! ```
//!
//! a quadratic polynomial in `y`.

use nalgebra::{DMatrix, DVector};

use crate::body::ConvexBody;
use crate::duality::{dual_operator, sphere_metric, unproject};
use crate::error::{Error, Result};
use crate::geometry::Jet2;
use crate::psi::PsiSpec;

/// Smallest admissible `⟨A_t P⁻¹(y), E_{n+1}⟩` before the flow is refused.
pub const HEMISPHERE_EPS: f64 = 1e-10;
const ANCHOR_TOL: f64 = 1e-10;

/// Coefficients of `T(y) = C + L y + (q·y) y`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPolynomial {
    pub constant: DVector<f64>,
    pub linear: DMatrix<f64>,
    pub quadratic: DVector<f64>,
}

impl FieldPolynomial {
    pub fn eval(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.constant + &self.linear * y + y * self.quadratic.dot(y)
    }

    /// `∂T_m/∂y_j`.
    pub fn jacobian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let n = y.len();
        &self.linear + DMatrix::identity(n, n) * self.quadratic.dot(y) + y * self.quadratic.transpose()
    }
}

#[derive(Debug, Clone)]
pub struct RotationField {
    pub y0: DVector<f64>,
    pub xi: DVector<f64>,
    pub x0: DVector<f64>,
    /// `e_1, …, e_n`, orthonormal and orthogonal to `x0`.
    pub frame: Vec<DVector<f64>>,
    pub t_max: f64,
    /// Multiplies the generator; zero gives the degenerate field.
    pub speed: f64,
    pub poly: FieldPolynomial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub t: f64,
    pub y: DVector<f64>,
    pub image: DVector<f64>,
    /// `g_m(t, y) = -⟨A_t P⁻¹ y, E_m⟩ / ⟨A_t P⁻¹ y, E_{n+1}⟩`.
    pub g_components: DVector<f64>,
}

/// `dP⁻¹(ξ)` at `y`.
fn lift_tangent(y: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
    let n = y.len();
    let w2 = 1.0 + y.norm_squared();
    let w = w2.sqrt();
    let x = unproject(y);
    let mut v = DVector::zeros(n + 1);
    for i in 0..n {
        v[i] = -xi[i] / w;
    }
    v - x * (y.dot(xi) / w2)
}

fn polynomial(x0: &DVector<f64>, e1: &DVector<f64>) -> FieldPolynomial {
    let n = x0.len() - 1;
    FieldPolynomial {
        constant: DVector::from_fn(n, |m, _| e1[n] * x0[m] - x0[n] * e1[m]),
        linear: DMatrix::from_fn(n, n, |m, j| -e1[j] * x0[m] + x0[j] * e1[m]),
        quadratic: DVector::from_fn(n, |j, _| x0[j] * e1[n] - e1[j] * x0[n]),
    }
}

impl RotationField {
    pub fn dim(&self) -> usize {
        self.y0.len()
    }

    pub fn e1(&self) -> &DVector<f64> {
        &self.frame[0]
    }

    /// `A_t v` for an `(n+1)`-vector.
    pub fn rotate(&self, t: f64, v: &DVector<f64>) -> DVector<f64> {
        let t = t * self.speed;
        let (s, c) = t.sin_cos();
        let e1 = self.e1();
        let a = v.dot(&self.x0);
        let b = v.dot(e1);
        v + &self.x0 * ((c - 1.0) * a - s * b) + e1 * ((c - 1.0) * b + s * a)
    }

    /// A copy whose generator is multiplied by `speed`.
    pub fn scaled(&self, speed: f64) -> RotationField {
        let mut f = self.clone();
        f.speed = self.speed * speed;
        f.poly = FieldPolynomial {
            constant: &self.poly.constant * speed,
            linear: &self.poly.linear * speed,
            quadratic: &self.poly.quadratic * speed,
        };
        f
    }

    /// `a_0 = ⟨P⁻¹y, x0⟩` and `a_i = ⟨P⁻¹y, e_i⟩`.
    pub fn frame_coefficients(&self, y: &DVector<f64>) -> (f64, Vec<f64>) {
        let x = unproject(y);
        (x.dot(&self.x0), self.frame.iter().map(|e| x.dot(e)).collect())
    }
}

/// Build the field for an anchor `y0 ∈ ∂body` and unit tangent `ξ`.
pub fn make_field(y0: &DVector<f64>, xi: &DVector<f64>, body: &ConvexBody) -> Result<RotationField> {
    let n = y0.len();
    if xi.len() != n || body.dim() != n {
        return Err(Error::Argument("anchor, tangent and body dimensions disagree".into()));
    }
    let d = body.defining(y0);
    if d.value.abs() > ANCHOR_TOL {
        return Err(Error::Precondition { what: "anchor is not on the boundary".into(), defect: d.value.abs() });
    }
    let unit = (xi.norm() - 1.0).abs();
    if unit > ANCHOR_TOL {
        return Err(Error::Precondition { what: "tangent is not a unit vector".into(), defect: unit });
    }
    let normal_part = d.gradient.dot(xi).abs() / d.gradient.norm();
    if normal_part > ANCHOR_TOL {
        return Err(Error::Precondition { what: "ξ is not tangent to the boundary".into(), defect: normal_part });
    }

    let x0 = unproject(y0);
    let lift = lift_tangent(y0, xi);
    let e1 = &lift / lift.norm();
    let mut basis = vec![x0.clone(), e1.clone()];
    for axis in 0..=n {
        if basis.len() == n + 1 {
            break;
        }
        let mut v = DVector::zeros(n + 1);
        v[axis] = 1.0;
        for b in &basis {
            let c = v.dot(b);
            v -= b * c;
        }
        // second pass for orthogonality at roundoff level
        for b in &basis {
            let c = v.dot(b);
            v -= b * c;
        }
        let nv = v.norm();
        if nv > 1e-6 {
            basis.push(v / nv);
        }
    }
    let frame: Vec<DVector<f64>> = basis[1..].to_vec();
    let poly = polynomial(&x0, &e1);
    let mut field = RotationField {
        y0: y0.clone(),
        xi: xi.clone(),
        x0,
        frame,
        t_max: 0.0,
        speed: 1.0,
        poly,
    };
    field.t_max = validity_interval(&field, body);
    Ok(field)
}

fn ball_samples(body: &ConvexBody) -> Vec<DVector<f64>> {
    let n = body.dim();
    let r = body.bounding_radius();
    let c = &body.center;
    let mut pts = vec![c.clone()];
    let dirs: Vec<DVector<f64>> = if n == 2 {
        (0..72)
            .map(|j| {
                let t = std::f64::consts::PI * j as f64 / 36.0;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect()
    } else {
        // Fibonacci-like deterministic spread plus the axes
        let mut d = Vec::new();
        for i in 0..n {
            for s in [-1.0, 1.0] {
                let mut v = DVector::zeros(n);
                v[i] = s;
                d.push(v);
            }
        }
        for k in 0..200 {
            let v = DVector::from_fn(n, |i, _| ((k * (2 * i + 3)) as f64 * 0.618_033_988_7 * std::f64::consts::TAU).cos());
            if v.norm() > 1e-6 {
                d.push(&v / v.norm());
            }
        }
        d
    };
    for d in dirs {
        for f in [0.5, 1.0] {
            pts.push(c + &d * (f * r));
        }
    }
    pts
}

/// Largest `t ≤ 0.5` keeping `⟨A_{±t} P⁻¹(y), E_{n+1}⟩ ≥ 0.1` over the
/// bounding ball of `body`.
fn validity_interval(field: &RotationField, body: &ConvexBody) -> f64 {
    let n = field.dim();
    let lifted: Vec<DVector<f64>> = ball_samples(body).iter().map(unproject).collect();
    let ok = |t: f64| {
        lifted
            .iter()
            .all(|x| field.rotate(t, x)[n] >= 0.1 && field.rotate(-t, x)[n] >= 0.1)
    };
    let step = 0.005;
    let mut t = 0.0;
    while t + step <= 0.5 + 1e-12 && ok(t + step) {
        t += step;
    }
    t
}

pub fn flow_sample(field: &RotationField, t: f64, y: &DVector<f64>) -> Result<FlowSample> {
    let n = field.dim();
    let moved = field.rotate(t, &unproject(y));
    let den = moved[n];
    if den < HEMISPHERE_EPS {
        return Err(Error::HemisphereExit { denominator: den });
    }
    let g = DVector::from_fn(n, |m, _| -moved[m] / den);
    Ok(FlowSample { t, y: y.clone(), image: g.clone(), g_components: g })
}

/// `σ_t(y)`; negative `t` runs the inverse flow.
pub fn flow(field: &RotationField, t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(flow_sample(field, t, y)?.image)
}

/// `T(y)` from the polynomial coefficients.
pub fn field_eval(field: &RotationField, y: &DVector<f64>) -> DVector<f64> {
    field.poly.eval(y)
}

/// `T(y)` by the unsimplified closed form with explicit square roots.
pub fn field_eval_closed_form(field: &RotationField, y: &DVector<f64>) -> DVector<f64> {
    let n = field.dim();
    let w = (1.0 + y.norm_squared()).sqrt();
    let x = unproject(y);
    let (x0, e1) = (&field.x0, field.e1());
    let a = x.dot(e1);
    let b = x.dot(x0);
    DVector::from_fn(n, |m, _| w * (a * (x0[m] + y[m] * x0[n]) - b * (e1[m] + y[m] * e1[n]))) * field.speed
}

/// Quantities entering the tangency and envelope statements at `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeTerms {
    /// Euclidean `|T(y)|²`.
    pub t_norm_sq: f64,
    /// `(1+|y|²)(a_0² + a_1²)`.
    pub stated_bound: f64,
    /// `1 + |y|²`.
    pub ceiling: f64,
    /// `T` measured in the round metric of the sphere, `g̃(T, T)`.
    pub sphere_norm_sq: f64,
    /// `a_0² + a_1²`.
    pub plane_weight: f64,
}

pub fn envelope_terms(field: &RotationField, y: &DVector<f64>) -> EnvelopeTerms {
    let t = field_eval(field, y);
    let (a0, a) = field.frame_coefficients(y);
    let w2 = 1.0 + y.norm_squared();
    let plane_weight = (a0 * a0 + a[0] * a[0]) * field.speed * field.speed;
    EnvelopeTerms {
        t_norm_sq: t.norm_squared(),
        stated_bound: w2 * plane_weight,
        ceiling: w2 * field.speed * field.speed,
        sphere_norm_sq: (t.transpose() * sphere_metric(y) * &t)[0],
        plane_weight,
    }
}

/// Directional derivatives of `u*` along `T` at a jet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlongField {
    /// `T u* = ⟨T, Du*⟩`.
    pub tu: f64,
    /// `T(T u*) = Tᵀ D²u* T + (DT·T)·Du*`.
    pub ttu: f64,
    /// `D_TT u* = Tᵀ D²u* T = T²u* - (D_T T) u*`.
    pub d_tt_u: f64,
}

pub fn derivative_along(field: &RotationField, jet: &Jet2) -> AlongField {
    let y = &jet.point;
    let t = field_eval(field, y);
    let dt_t = field.poly.jacobian(y) * &t;
    let d_tt_u = (t.transpose() * &jet.hessian * &t)[0];
    AlongField {
        tu: t.dot(&jet.gradient),
        ttu: d_tt_u + dt_t.dot(&jet.gradient),
        d_tt_u,
    }
}

/// `w* T(u*/w*) = T·Du* - u* (T·y)/w*²`.
fn rotated_support(field: &RotationField, jet: &Jet2) -> f64 {
    let y = &jet.point;
    let t = field_eval(field, y);
    let w2 = 1.0 + y.norm_squared();
    t.dot(&jet.gradient) - jet.value * t.dot(y) / w2
}

/// A dual state given pointwise by its 2-jets.
pub type JetOracle<'a> = dyn Fn(&DVector<f64>) -> Result<Jet2> + Sync + 'a;

fn check_flow_inside(field: &RotationField, body: &ConvexBody, y: &DVector<f64>, dt: f64) -> Result<()> {
    for t in [-dt, dt] {
        let img = flow(field, t, y)?;
        if body.defining(&img).value <= 0.0 {
            return Err(Error::Domain(format!("σ_{t}(y) leaves the domain")));
        }
    }
    Ok(())
}

/// Second differences of `g` at `y` with step `h`.
fn fd_hessian(g: &dyn Fn(&DVector<f64>) -> Result<f64>, y: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    let n = y.len();
    let shift = |i: usize, si: f64, j: usize, sj: f64| {
        let mut p = y.clone();
        p[i] += si * h;
        p[j] += sj * h;
        p
    };
    let g0 = g(y)?;
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut p = y.clone();
        let mut m = y.clone();
        p[i] += h;
        m[i] -= h;
        out[(i, i)] = (g(&p)? - 2.0 * g0 + g(&m)?) / (h * h);
        for j in (i + 1)..n {
            let v = (g(&shift(i, 1.0, j, 1.0))? - g(&shift(i, 1.0, j, -1.0))? - g(&shift(i, -1.0, j, 1.0))?
                + g(&shift(i, -1.0, j, -1.0))?)
                / (4.0 * h * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Defect of the once-differentiated dual equation,
/// `|F*^{ij} w* b*_ik (w* T(u*/w*))_kl b*_lj - Tψ* - ψ*_{u*} T u*|`, with the
/// inner second derivatives by central differences of step `h`.
pub fn differentiated_equation_check(
    field: &RotationField,
    k: usize,
    psi: &PsiSpec,
    state: &JetOracle<'_>,
    body: &ConvexBody,
    point: &DVector<f64>,
    h: f64,
) -> Result<f64> {
    check_flow_inside(field, body, point, h)?;
    let jet = state(point)?;
    let op = dual_operator(&jet, k)?;
    let f = |p: &DVector<f64>| -> Result<f64> { Ok(rotated_support(field, &state(p)?)) };
    let ddf = fd_hessian(&f, point, h)?;
    let lhs = op.gradient.component_mul(&crate::duality::dual_matrix(point, &ddf)).sum();
    let (_, dy, dz) = psi.star_partials(point.as_slice(), jet.value)?;
    let t = field_eval(field, point);
    let rhs = t.dot(&DVector::from_vec(dy)) + dz * t.dot(&jet.gradient);
    Ok((lhs - rhs).abs())
}

/// Gap in the twice-differentiated equation,
/// `F*^{ij} Λ(T²v)_ij - d²/dt² ψ*(σ_t y, u*(σ_t y))`. Concavity of `F*`
/// makes it nonnegative; it is reported, never asserted.
pub fn second_order_gap(
    field: &RotationField,
    k: usize,
    psi: &PsiSpec,
    state: &JetOracle<'_>,
    body: &ConvexBody,
    point: &DVector<f64>,
    h: f64,
) -> Result<f64> {
    check_flow_inside(field, body, point, h)?;
    let jet = state(point)?;
    let op = dual_operator(&jet, k)?;
    let f2 = |p: &DVector<f64>| -> Result<f64> {
        let j = state(p)?;
        let n = p.len();
        let w2 = 1.0 + p.norm_squared();
        let w = w2.sqrt();
        let w3 = w2 * w;
        let dv = &j.gradient / w - p * (j.value / w3);
        let ddv = &j.hessian / w
            - (&j.gradient * p.transpose() + p * j.gradient.transpose()) / w3
            - (DMatrix::identity(n, n) / w3 - p * p.transpose() * (3.0 / (w3 * w2))) * j.value;
        let t = field_eval(field, p);
        let ttv = (t.transpose() * ddv * &t)[0] + (field.poly.jacobian(p) * &t).dot(&dv);
        Ok(w * ttv)
    };
    let ddf = fd_hessian(&f2, point, h)?;
    let lhs = op.gradient.component_mul(&crate::duality::dual_matrix(point, &ddf)).sum();
    let along = |t: f64| -> Result<f64> {
        let y = flow(field, t, point)?;
        let j = state(&y)?;
        Ok(psi.star(y.as_slice(), j.value))
    };
    let rhs = (along(h)? - 2.0 * along(0.0)? + along(-h)?) / (h * h);
    Ok(lhs - rhs)
}

/// Chart 2-jet of the support function of `{x : xᵀA⁻¹x ≤ 1}`,
/// `u*(y) = √(Zᵀ A Z)` with `Z = (-y, 1)`.
pub fn ellipsoid_jet(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<Jet2> {
    let n = y.len();
    if a.nrows() != n + 1 || a.ncols() != n + 1 {
        return Err(Error::Argument("ellipsoid matrix has the wrong size".into()));
    }
    let mut z = DVector::from_element(n + 1, 1.0);
    for i in 0..n {
        z[i] = -y[i];
    }
    let az = a * &z;
    let q = z.dot(&az);
    if !(q > 0.0) {
        return Err(Error::Argument("ellipsoid matrix is not positive definite".into()));
    }
    let s = q.sqrt();
    let g = DVector::from_fn(n, |m, _| -az[m] / s);
    let h = DMatrix::from_fn(n, n, |m, j| a[(m, j)] / s - az[m] * az[j] / (q * s));
    Jet2::new(y.clone(), s, g, h)
}

/// An ellipsoid support function together with the right-hand side it
/// solves exactly: `ψ(z, p) = 1/F*(u* at y(p))`, independent of `z`.
/// The `p`-partials are central differences.
pub fn ellipsoid_problem(a: DMatrix<f64>, k: usize) -> PsiSpec {
    use std::sync::Arc;
    let value = move |_z: f64, p: &[f64]| -> f64 {
        let n = p.len() - 1;
        let y = DVector::from_fn(n, |i, _| -p[i] / p[n]);
        match ellipsoid_jet(&a, &y).and_then(|j| dual_operator(&j, k)) {
            Ok(op) => 1.0 / op.value,
            Err(_) => f64::NAN,
        }
    };
    let value: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync> = Arc::new(value);
    let v2 = Arc::clone(&value);
    crate::psi::PsiSpec::General(crate::psi::GeneralPsi {
        value,
        partials: Some(Arc::new(move |z: f64, p: &[f64]| {
            let step = 1e-5;
            let grad = (0..p.len())
                .map(|i| {
                    let mut pp = p.to_vec();
                    let mut pm = p.to_vec();
                    pp[i] += step;
                    pm[i] -= step;
                    (v2(z, &pp) - v2(z, &pm)) / (2.0 * step)
                })
                .collect();
            (0.0, grad)
        })),
        monotone: true,
        decays: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ellipse() -> ConvexBody {
        ConvexBody::ellipse([0.1, -0.05], [0.6, 0.4], 0.3).unwrap()
    }

    fn anchor(body: &ConvexBody, t: f64) -> (DVector<f64>, DVector<f64>) {
        let y0 = body.boundary_point(&[t]).unwrap();
        let xi = body.tangent(&y0);
        (y0, xi)
    }

    #[test]
    fn north_pole_anchor() {
        let body = ConvexBody::ball(vec![-0.5, 0.0], 0.5).unwrap();
        let y0 = DVector::from_vec(vec![0.0, 0.0]);
        let xi = DVector::from_vec(vec![0.0, 1.0]);
        let f = make_field(&y0, &xi, &body).unwrap();
        assert!((f.e1() + DVector::from_vec(vec![0.0, 1.0, 0.0])).amax() < 1e-15);
        assert!((field_eval(&f, &y0) - &xi).amax() < 1e-15);
        let s = flow(&f, 0.1, &y0).unwrap();
        assert!((s[1] - 0.1f64.tan()).abs() < 1e-15 && s[0].abs() < 1e-15);
    }

    #[test]
    fn frame_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b3 = ConvexBody::ball(vec![0.1, 0.2, -0.1], 0.7).unwrap();
        for _ in 0..100 {
            let body = ellipse();
            let (y0, xi) = anchor(&body, rng.gen_range(0.0..2.0 * PI));
            let f = make_field(&y0, &xi, &body).unwrap();
            let mut all = vec![f.x0.clone()];
            all.extend(f.frame.iter().cloned());
            let g = DMatrix::from_fn(3, 3, |i, j| all[i].dot(&all[j]));
            assert!((g - DMatrix::identity(3, 3)).amax() < 1e-13);

            let angles = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.1..3.0)];
            let y0 = b3.boundary_point(&angles).unwrap();
            let nrm = &y0 - &b3.center;
            let mut xi = DVector::from_vec(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            xi -= &nrm * (xi.dot(&nrm) / nrm.norm_squared());
            xi /= xi.norm();
            let f = make_field(&y0, &xi, &b3).unwrap();
            let mut all = vec![f.x0.clone()];
            all.extend(f.frame.iter().cloned());
            let g = DMatrix::from_fn(4, 4, |i, j| all[i].dot(&all[j]));
            assert!((g - DMatrix::identity(4, 4)).amax() < 1e-13);
        }
    }

    #[test]
    fn preconditions_are_checked() {
        let body = ellipse();
        let (y0, xi) = anchor(&body, 1.0);
        assert!(matches!(make_field(&(&y0 * 0.9), &xi, &body), Err(Error::Precondition { .. })));
        let normal = body.defining(&y0).gradient;
        assert!(matches!(make_field(&y0, &normal, &body), Err(Error::Precondition { .. })));
    }

    #[test]
    fn tangency_on_anchors_orthogonal_to_position() {
        // ξ ⟂ y0 holds on every anchor of a ball centred at the origin
        let body = ConvexBody::ball(vec![0.0, 0.0], 0.8).unwrap();
        for j in 0..16 {
            let (y0, xi) = anchor(&body, j as f64 * 0.4);
            let f = make_field(&y0, &xi, &body).unwrap();
            let w = (1.0 + y0.norm_squared()).sqrt();
            assert!((field_eval(&f, &y0) - &xi * w).amax() < 1e-12);
        }
    }

    #[test]
    fn tangency_closed_form_general_anchor() {
        let body = ellipse();
        for j in 0..16 {
            let (y0, xi) = anchor(&body, j as f64 * 0.4);
            let f = make_field(&y0, &xi, &body).unwrap();
            let w2 = 1.0 + y0.norm_squared();
            let s = y0.dot(&xi);
            let expected = &xi * (w2 / (w2 - s * s).sqrt());
            assert!((field_eval(&f, &y0) - expected).amax() < 1e-12);
        }
    }

    #[test]
    fn polynomial_matches_closed_form_and_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let body = ellipse();
        for _ in 0..20 {
            let (y0, xi) = anchor(&body, rng.gen_range(0.0..2.0 * PI));
            let f = make_field(&y0, &xi, &body).unwrap();
            let y = DVector::from_vec(vec![rng.gen_range(-0.5..0.6), rng.gen_range(-0.4..0.4)]);
            let t = field_eval(&f, &y);
            assert!((field_eval_closed_form(&f, &y) - &t).amax() < 1e-13);
            let fd = |dt: f64| (flow(&f, dt, &y).unwrap() - flow(&f, -dt, &y).unwrap()) / (2.0 * dt);
            let e1 = (fd(1e-3) - &t).amax();
            let e2 = (fd(5e-4) - &t).amax();
            assert!(e1 < 1e-5);
            assert!((e1 / e2 - 4.0).abs() < 0.1, "ratio {}", e1 / e2);
        }
    }

    #[test]
    fn group_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let body = ellipse();
        let (y0, xi) = anchor(&body, 2.0);
        let f = make_field(&y0, &xi, &body).unwrap();
        assert!(f.t_max > 0.0);
        for _ in 0..1000 {
            let y = DVector::from_vec(vec![rng.gen_range(-0.5..0.7), rng.gen_range(-0.45..0.35)]);
            let (t, s) = (rng.gen_range(0.0..f.t_max), rng.gen_range(0.0..f.t_max) * 0.5);
            let a = flow(&f, t + s, &y).unwrap();
            let b = flow(&f, t, &flow(&f, s, &y).unwrap()).unwrap();
            let c = flow(&f, s, &flow(&f, t, &y).unwrap()).unwrap();
            assert!((&a - &b).amax() < 1e-10 && (&a - &c).amax() < 1e-10);
            assert!((flow(&f, 0.0, &y).unwrap() - &y).amax() < 1e-13);
            assert!((flow(&f, -t, &flow(&f, t, &y).unwrap()).unwrap() - &y).amax() < 1e-10);
        }
    }

    #[test]
    fn hemisphere_exit() {
        let body = ellipse();
        let (y0, xi) = anchor(&body, 0.5);
        let f = make_field(&y0, &xi, &body).unwrap();
        assert!(matches!(flow(&f, PI, &y0), Err(Error::HemisphereExit { .. })));
    }

    #[test]
    fn sphere_norm_identity_and_unit_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let body = ellipse();
        for _ in 0..200 {
            let (y0, xi) = anchor(&body, rng.gen_range(0.0..2.0 * PI));
            let f = make_field(&y0, &xi, &body).unwrap();
            let y = DVector::from_vec(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let e = envelope_terms(&f, &y);
            assert!((e.sphere_norm_sq - e.plane_weight).abs() < 1e-12);
            assert!(e.plane_weight <= 1.0 + 1e-13);
            let (a0, a) = f.frame_coefficients(&y);
            assert!((a0 * a0 + a.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn third_differences_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let body = ellipse();
        let (y0, xi) = anchor(&body, 4.0);
        let f = make_field(&y0, &xi, &body).unwrap();
        for _ in 0..50 {
            let p = DVector::from_vec(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let d = DVector::from_vec(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let s = 0.3;
            let v: Vec<DVector<f64>> = (0..4).map(|i| field_eval(&f, &(&p + &d * (s * i as f64)))).collect();
            let third = &v[3] - &v[2] * 3.0 + &v[1] * 3.0 - &v[0];
            assert!(third.amax() < 1e-10);
        }
    }

    #[test]
    fn derivative_examples() {
        let body = ellipse();
        let (y0, xi) = anchor(&body, 1.3);
        let f = make_field(&y0, &xi, &body).unwrap();
        let y = DVector::from_vec(vec![0.2, 0.1]);
        let c = Jet2::new(y.clone(), 3.0, DVector::zeros(2), DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(derivative_along(&f, &c), AlongField { tu: 0.0, ttu: 0.0, d_tt_u: 0.0 });
        let g = DVector::from_vec(vec![0.7, -0.4]);
        let lin = Jet2::new(y.clone(), 1.0, g.clone(), DMatrix::zeros(2, 2)).unwrap();
        let a = derivative_along(&f, &lin);
        let t = field_eval(&f, &y);
        assert!((a.ttu - (f.poly.jacobian(&y) * &t).dot(&g)).abs() < 1e-15);
        assert_eq!(a.d_tt_u, 0.0);
    }

    #[test]
    fn transport_of_derivatives() {
        // d/dt h(σ_t y) = T h and d²/dt² h(σ_t y) = T² h for a cubic h
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let body = ellipse();
        let (y0, xi) = anchor(&body, 0.2);
        let f = make_field(&y0, &xi, &body).unwrap();
        let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = |p: &DVector<f64>| c[0] * p[0] + c[1] * p[1] * p[1] + c[2] * p[0] * p[1] + c[3] * p[0].powi(3) + c[4] * p[1] + c[5];
        let jet = |p: &DVector<f64>| {
            Jet2::new(
                p.clone(),
                h(p),
                DVector::from_vec(vec![c[0] + c[2] * p[1] + 3.0 * c[3] * p[0] * p[0], 2.0 * c[1] * p[1] + c[2] * p[0] + c[4]]),
                DMatrix::from_row_slice(2, 2, &[6.0 * c[3] * p[0], c[2], c[2], 2.0 * c[1]]),
            )
            .unwrap()
        };
        let y = DVector::from_vec(vec![0.15, -0.1]);
        let a = derivative_along(&f, &jet(&y));
        let errs: Vec<(f64, f64)> = [1e-3, 5e-4]
            .iter()
            .map(|&dt| {
                let hp = h(&flow(&f, dt, &y).unwrap());
                let hm = h(&flow(&f, -dt, &y).unwrap());
                let d1 = (hp - hm) / (2.0 * dt);
                let d2 = (hp - 2.0 * h(&y) + hm) / (dt * dt);
                ((d1 - a.tu).abs(), (d2 - a.ttu).abs())
            })
            .collect();
        assert!(errs[0].0 < 1e-5 && errs[0].1 < 1e-4);
        assert!((errs[0].0 / errs[1].0 - 4.0).abs() < 0.2);
    }

    fn cap_state(r: f64, beta: [f64; 2], gamma: f64) -> impl Fn(&DVector<f64>) -> Result<Jet2> + Sync {
        move |y: &DVector<f64>| {
            let w2 = 1.0 + y.norm_squared();
            let w = w2.sqrt();
            let b = DVector::from_row_slice(&beta);
            let hess = (DMatrix::identity(2, 2) * w2 - y * y.transpose()) * (r / (w2 * w));
            Jet2::new(y.clone(), r * w + b.dot(y) + gamma, y * (r / w) + b, hess)
        }
    }

    #[test]
    fn differentiated_equation_on_caps() {
        let rho: f64 = 0.5;
        let r = (1.0 + rho * rho).sqrt();
        let body = ConvexBody::ball(vec![0.0, 0.0], rho).unwrap();
        let psi = PsiSpec::Constant(2.0 / r);
        let (y0, xi) = anchor(&body, 0.7);
        let f = make_field(&y0, &xi, &body).unwrap();
        let p = DVector::from_vec(vec![0.1, -0.15]);
        let exact = cap_state(r, [0.0, 0.0], 0.0);
        let d = differentiated_equation_check(&f, 1, &psi, &exact, &body, &p, 1.0 / 128.0).unwrap();
        assert!(d <= 1e-8, "{d}");

        // translated caps are rotation-closed up to affine terms, so f is exact
        let shifted = cap_state(r, [0.1, -0.05], 0.2);
        let d = differentiated_equation_check(&f, 1, &psi, &shifted, &body, &p, 1.0 / 32.0).unwrap();
        assert!(d <= 1e-8, "{d}");

        let zero = f.scaled(0.0);
        let d0 = differentiated_equation_check(&zero, 1, &psi, &shifted, &body, &p, 1.0 / 64.0).unwrap();
        assert_eq!(d0, 0.0);
    }

    #[test]
    fn differentiated_equation_second_order() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.1, 1.4, 0.05, 0.0, 0.05, 0.8]);
        let body = ConvexBody::ball(vec![0.0, 0.0], 0.5).unwrap();
        let (y0, xi) = anchor(&body, 0.7);
        let f = make_field(&y0, &xi, &body).unwrap();
        let p = DVector::from_vec(vec![0.1, -0.15]);
        for k in [1, 2] {
            let psi = ellipsoid_problem(a.clone(), k);
            let state = |y: &DVector<f64>| ellipsoid_jet(&a, y);
            let jet = state(&p).unwrap();
            assert!(crate::duality::dual_residual(&jet, k, &psi).unwrap().abs() < 1e-13);
            let d1 = differentiated_equation_check(&f, k, &psi, &state, &body, &p, 1.0 / 32.0).unwrap();
            let d2 = differentiated_equation_check(&f, k, &psi, &state, &body, &p, 1.0 / 64.0).unwrap();
            assert!(d1 > 1e-7 && (d1 / d2 - 4.0).abs() < 0.3, "{d1} {d2}");
        }
    }

    #[test]
    fn second_order_gap_is_reported() {
        let rho: f64 = 0.5;
        let r = (1.0 + rho * rho).sqrt();
        let body = ConvexBody::ball(vec![0.0, 0.0], rho).unwrap();
        let psi = PsiSpec::Constant(2.0 / r);
        let (y0, xi) = anchor(&body, 0.7);
        let f = make_field(&y0, &xi, &body).unwrap();
        let state = cap_state(r, [0.1, -0.05], 0.2);
        let gap = second_order_gap(&f, 2, &psi, &state, &body, &DVector::from_vec(vec![0.1, 0.0]), 1e-3).unwrap();
        assert!(gap.is_finite());
    }
}
