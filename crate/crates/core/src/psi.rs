//! Prescribed right-hand sides `ψ(z, p)` and their dual forms.
//!
//! `z` is the support value and `p` the upward unit normal in `R^{n+1}`.
//! Throughout the crate `z` is taken as `(x·Du - u)/w`, which is the value
//! `u*/w*` seen by the dual equation.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symfun::binomial;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiKind {
    Constant,
    NormalOnly,
    General,
}

/// One `amplitude · cos(frequency · p[component] + phase)` term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub component: usize,
    pub amplitude: f64,
    #[serde(default = "one")]
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

fn one() -> f64 {
    1.0
}

/// Positive trigonometric polynomial in the normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigProfile {
    pub base: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl TrigProfile {
    pub fn constant(c: f64) -> Self {
        TrigProfile { base: c, terms: vec![] }
    }

    /// Positivity is guaranteed by `base > Σ |amplitude|`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let slack: f64 = self.terms.iter().map(|t| t.amplitude.abs()).sum();
        if !(self.base > slack) {
            return Err(Error::Argument(format!(
                "trigonometric profile not positive: base {} <= {}",
                self.base, slack
            )));
        }
        if let Some(t) = self.terms.iter().find(|t| t.component > dim) {
            return Err(Error::Argument(format!(
                "profile component {} exceeds normal length {}",
                t.component,
                dim + 1
            )));
        }
        Ok(())
    }
}

/// Normal-only profiles `ψ0(p)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Trig(TrigProfile),
    /// `scale · exp(eps·(radius/p_{n+1} + shift))`. Paired with the
    /// exponential family at the same `eps`, it makes `radius·w* + shift` an
    /// exact dual solution on balls centred at the origin.
    CapExact {
        scale: f64,
        eps: f64,
        radius: f64,
        shift: f64,
    },
}

impl Profile {
    pub fn value(&self, p: &[f64]) -> f64 {
        match self {
            Profile::Trig(t) => {
                t.base
                    + t.terms
                        .iter()
                        .map(|s| s.amplitude * (s.frequency * p[s.component] + s.phase).cos())
                        .sum::<f64>()
            }
            Profile::CapExact { scale, eps, radius, shift } => {
                let last = p[p.len() - 1];
                scale * (eps * (radius / last + shift)).exp()
            }
        }
    }

    pub fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; p.len()];
        match self {
            Profile::Trig(t) => {
                for s in &t.terms {
                    g[s.component] -=
                        s.amplitude * s.frequency * (s.frequency * p[s.component] + s.phase).sin();
                }
            }
            Profile::CapExact { eps, radius, .. } => {
                let last = p[p.len() - 1];
                g[p.len() - 1] = -self.value(p) * eps * radius / (last * last);
            }
        }
        g
    }
}

type ValueFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
type PartialsFn = dyn Fn(f64, &[f64]) -> (f64, Vec<f64>) + Send + Sync;

/// Arbitrary `ψ(z, p)` given by closures.
#[derive(Clone)]
pub struct GeneralPsi {
    pub value: Arc<ValueFn>,
    /// `(ψ_z, [ψ_{p_1}, …, ψ_{p_{n+1}}])`.
    pub partials: Option<Arc<PartialsFn>>,
    pub monotone: bool,
    pub decays: bool,
}

impl fmt::Debug for GeneralPsi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralPsi")
            .field("has_partials", &self.partials.is_some())
            .field("monotone", &self.monotone)
            .field("decays", &self.decays)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum PsiSpec {
    Constant(f64),
    Normal(Profile),
    /// `exp(-eps·z/p_{n+1}) · ψ0(p)`; its dual is `exp(eps·z)/ψ0`.
    Exponential { eps: f64, profile: Profile },
    General(GeneralPsi),
}

/// `p(y) = (-y, 1)/√(1+|y|²)`.
pub fn normal_of(y: &[f64]) -> Vec<f64> {
    let w = (1.0 + y.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let mut p: Vec<f64> = y.iter().map(|v| -v / w).collect();
    p.push(1.0 / w);
    p
}

impl PsiSpec {
    pub fn kind(&self) -> PsiKind {
        match self {
            PsiSpec::Constant(_) => PsiKind::Constant,
            PsiSpec::Normal(_) => PsiKind::NormalOnly,
            PsiSpec::Exponential { .. } | PsiSpec::General(_) => PsiKind::General,
        }
    }

    /// Whether `ψ_z ≤ 0` holds everywhere.
    pub fn monotone_flag(&self) -> bool {
        match self {
            PsiSpec::Constant(_) | PsiSpec::Normal(_) => true,
            PsiSpec::Exponential { eps, .. } => *eps >= 0.0,
            PsiSpec::General(g) => g.monotone,
        }
    }

    /// Whether the growth/decay limits in `z` hold.
    pub fn decay_flag(&self) -> bool {
        match self {
            PsiSpec::Constant(_) | PsiSpec::Normal(_) => false,
            PsiSpec::Exponential { eps, .. } => *eps > 0.0,
            PsiSpec::General(g) => g.decays,
        }
    }

    /// The normal-only part, if there is one.
    pub fn profile(&self) -> Option<Profile> {
        match self {
            PsiSpec::Constant(c) => Some(Profile::Trig(TrigProfile::constant(*c))),
            PsiSpec::Normal(p) | PsiSpec::Exponential { profile: p, .. } => Some(p.clone()),
            PsiSpec::General(_) => None,
        }
    }

    /// Member of the continuation family built on this spec's profile.
    pub fn with_eps(&self, eps: f64) -> Result<PsiSpec> {
        let profile = self.profile().ok_or_else(|| {
            Error::Capability("continuation needs a normal-only profile".into())
        })?;
        Ok(PsiSpec::Exponential { eps, profile })
    }

    pub fn evaluate(&self, z: f64, p: &[f64]) -> f64 {
        match self {
            PsiSpec::Constant(c) => *c,
            PsiSpec::Normal(prof) => prof.value(p),
            PsiSpec::Exponential { eps, profile } => {
                let last = p[p.len() - 1];
                (-eps * z / last).exp() * profile.value(p)
            }
            PsiSpec::General(g) => (g.value)(z, p),
        }
    }

    /// `(ψ_z, ψ_p)` with `ψ_p` of length `n+1`.
    pub fn partials(&self, z: f64, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            PsiSpec::Constant(_) => Ok((0.0, vec![0.0; p.len()])),
            PsiSpec::Normal(prof) => Ok((0.0, prof.gradient(p))),
            PsiSpec::Exponential { eps, profile } => {
                let last = p[p.len() - 1];
                let e = (-eps * z / last).exp();
                let v = e * profile.value(p);
                let mut g: Vec<f64> = profile.gradient(p).iter().map(|d| e * d).collect();
                g[p.len() - 1] += v * eps * z / (last * last);
                Ok((-eps / last * v, g))
            }
            PsiSpec::General(gen) => gen
                .partials
                .as_ref()
                .map(|f| f(z, p))
                .ok_or_else(|| Error::Capability("ψ partial derivatives not provided".into())),
        }
    }

    /// `ψ̃(x, v) = 1/ψ(v, x)` on the sphere.
    pub fn tilde(&self, x: &[f64], v: f64) -> f64 {
        1.0 / self.evaluate(v, x)
    }

    /// `ψ*(y, z) = 1/ψ(z/w*, (-y,1)/w*)`.
    pub fn star(&self, y: &[f64], z: f64) -> f64 {
        match self {
            PsiSpec::Exponential { eps, profile } => (eps * z).exp() / profile.value(&normal_of(y)),
            _ => {
                let w = (1.0 + y.iter().map(|v| v * v).sum::<f64>()).sqrt();
                1.0 / self.evaluate(z / w, &normal_of(y))
            }
        }
    }

    /// `(ψ*, ∂_y ψ*, ∂_z ψ*)`.
    pub fn star_partials(&self, y: &[f64], z: f64) -> Result<(f64, Vec<f64>, f64)> {
        let n = y.len();
        let w2 = 1.0 + y.iter().map(|v| v * v).sum::<f64>();
        let w = w2.sqrt();
        let w3 = w2 * w;
        let p = normal_of(y);
        // ∂p_i/∂y_m, rows i = 0..=n
        let dp = |i: usize, m: usize| -> f64 {
            if i < n {
                (if i == m { -1.0 / w } else { 0.0 }) + y[i] * y[m] / w3
            } else {
                -y[m] / w3
            }
        };
        if let PsiSpec::Exponential { eps, profile } = self {
            let q = profile.value(&p);
            let gq = profile.gradient(&p);
            let val = (eps * z).exp() / q;
            let dy = (0..n)
                .map(|m| -val / q * (0..=n).map(|i| gq[i] * dp(i, m)).sum::<f64>())
                .collect();
            return Ok((val, dy, eps * val));
        }
        let zeta = z / w;
        let psi = self.evaluate(zeta, &p);
        let (pz, pp) = self.partials(zeta, &p)?;
        let inv2 = 1.0 / (psi * psi);
        let dy = (0..n)
            .map(|m| {
                let dzeta = -z * y[m] / w3;
                let s = pz * dzeta + (0..=n).map(|i| pp[i] * dp(i, m)).sum::<f64>();
                -s * inv2
            })
            .collect();
        Ok((1.0 / psi, dy, -pz / w * inv2))
    }
}

/// The right-hand side for which `radius·√(1+|y|²) + shift` solves the dual
/// equation on a ball about the origin in `R^n`.
pub fn cap_exact(n: usize, k: usize, radius: f64, eps: f64, shift: f64) -> PsiSpec {
    let scale = binomial(n, k).powf(1.0 / k as f64) / radius;
    PsiSpec::Exponential {
        eps,
        profile: Profile::CapExact { scale, eps, radius, shift },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trig() -> Profile {
        Profile::Trig(TrigProfile {
            base: 1.0,
            terms: vec![
                TrigTerm { component: 0, amplitude: 0.2, frequency: 2.0, phase: 0.3 },
                TrigTerm { component: 2, amplitude: 0.1, frequency: 1.5, phase: -0.4 },
            ],
        })
    }

    fn general() -> PsiSpec {
        // ψ = exp(-0.3 z) (1 + 0.2 p_1²)
        PsiSpec::General(GeneralPsi {
            value: Arc::new(|z, p| (-0.3 * z).exp() * (1.0 + 0.2 * p[0] * p[0])),
            partials: Some(Arc::new(|z, p| {
                let e = (-0.3 * z).exp();
                let v = e * (1.0 + 0.2 * p[0] * p[0]);
                let mut g = vec![0.0; p.len()];
                g[0] = e * 0.4 * p[0];
                (-0.3 * v, g)
            })),
            monotone: true,
            decays: true,
        })
    }

    #[test]
    fn constant_duals() {
        let s = PsiSpec::Constant(2.0);
        assert_eq!(s.star(&[0.3, -0.1], 4.0), 0.5);
        assert_eq!(s.tilde(&[0.0, 0.0, 1.0], 1.0), 0.5);
    }

    #[test]
    fn exponential_dual_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = PsiSpec::Exponential { eps: 0.3, profile: trig() };
        for _ in 0..100 {
            let y = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let z = rng.gen_range(-2.0..2.0);
            let w = (1.0f64 + y[0] * y[0] + y[1] * y[1]).sqrt();
            // generic route through ψ itself
            let generic = 1.0 / spec.evaluate(z / w, &normal_of(&y));
            let closed = (0.3 * z).exp() / trig().value(&normal_of(&y));
            assert!((generic - closed).abs() < 1e-12 * closed);
            assert!((spec.star(&y, z) - closed).abs() < 1e-12 * closed);
        }
    }

    #[test]
    fn star_partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let specs = [
            PsiSpec::Normal(trig()),
            PsiSpec::Exponential { eps: 0.2, profile: trig() },
            general(),
        ];
        for spec in &specs {
            for _ in 0..20 {
                let y = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let z = rng.gen_range(0.5..2.0);
                let (v, dy, dz) = spec.star_partials(&y, z).unwrap();
                assert!((v - spec.star(&y, z)).abs() < 1e-13 * v);
                let h = 1e-6;
                let fdz = (spec.star(&y, z + h) - spec.star(&y, z - h)) / (2.0 * h);
                assert!((fdz - dz).abs() < 1e-7 * (1.0 + dz.abs()));
                for m in 0..2 {
                    let mut a = y;
                    let mut b = y;
                    a[m] += h;
                    b[m] -= h;
                    let fd = (spec.star(&a, z) - spec.star(&b, z)) / (2.0 * h);
                    assert!((fd - dy[m]).abs() < 1e-7 * (1.0 + dy[m].abs()), "{spec:?}");
                }
            }
        }
    }

    #[test]
    fn monotone_transfers_to_dual() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for spec in [PsiSpec::Exponential { eps: 0.4, profile: trig() }, general()] {
            assert!(spec.monotone_flag());
            for _ in 0..50 {
                let y = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let z = rng.gen_range(-3.0..3.0);
                let w = (1.0f64 + y[0] * y[0] + y[1] * y[1]).sqrt();
                let (pz, _) = spec.partials(z / w, &normal_of(&y)).unwrap();
                assert!(pz <= 1e-12);
                let (_, _, dz) = spec.star_partials(&y, z).unwrap();
                assert!(dz >= 0.0);
            }
        }
    }

    #[test]
    fn missing_partials_is_capability_error() {
        let spec = PsiSpec::General(GeneralPsi {
            value: Arc::new(|_, _| 1.0),
            partials: None,
            monotone: false,
            decays: false,
        });
        assert!(matches!(spec.partials(0.0, &[0.0, 0.0, 1.0]), Err(Error::Capability(_))));
    }

    #[test]
    fn cap_exact_profile() {
        let r = 1.25f64.sqrt();
        let spec = cap_exact(2, 2, r, 0.1, 0.3);
        let y = [0.2, -0.1];
        let w = (1.0f64 + 0.05).sqrt();
        // F*(R I) = R / binom(2,2)^{1/2} = R
        assert!((spec.star(&y, r * w + 0.3) - r).abs() < 1e-13);
    }

    #[test]
    fn trig_positivity_validation() {
        let bad = TrigProfile {
            base: 0.1,
            terms: vec![TrigTerm { component: 0, amplitude: 0.2, frequency: 1.0, phase: 0.0 }],
        };
        assert!(bad.validate(2).is_err());
        assert!(TrigProfile::constant(1.0).validate(2).is_ok());
    }
}
