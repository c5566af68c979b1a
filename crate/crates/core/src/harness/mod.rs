//! Configuration, the instance registry, solve reports and grid dumps.

pub mod verify;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::body::ConvexBody;
use crate::eigen::jacobi_eigen;
use crate::error::{Error, Result};
use crate::grid::build_grid;
use crate::psi::{Profile, PsiSpec, TrigProfile, TrigTerm};
use crate::solver::{
    continuation_solve, diagnostics, recover_primal, Diagnostics, PrimalRecovery, Problem, SolverOptions,
    SolverState, DEFAULT_SCHEDULE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BodySpec {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Ellipse {
        center: [f64; 2],
        semi_axes: [f64; 2],
        #[serde(default)]
        angle: f64,
    },
    Superellipse {
        center: [f64; 2],
        semi_axes: [f64; 2],
        exponent: f64,
        #[serde(default)]
        angle: f64,
    },
}

impl BodySpec {
    pub fn dim(&self) -> usize {
        match self {
            BodySpec::Ball { center, .. } => center.len(),
            _ => 2,
        }
    }

    pub fn build(&self) -> Result<ConvexBody> {
        match self {
            BodySpec::Ball { center, radius } => ConvexBody::ball(center.clone(), *radius),
            BodySpec::Ellipse { center, semi_axes, angle } => ConvexBody::ellipse(*center, *semi_axes, *angle),
            BodySpec::Superellipse { center, semi_axes, exponent, angle } => {
                ConvexBody::superellipse(*center, *semi_axes, *exponent, *angle)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PsiConfig {
    Constant {
        value: f64,
    },
    NormalOnly {
        base: f64,
        #[serde(default)]
        terms: Vec<TrigTerm>,
    },
    Exponential {
        eps: f64,
        base: f64,
        #[serde(default)]
        terms: Vec<TrigTerm>,
    },
}

impl PsiConfig {
    pub fn build(&self, dim: usize) -> Result<PsiSpec> {
        let trig = |base: f64, terms: &[TrigTerm]| -> Result<Profile> {
            let p = TrigProfile { base, terms: terms.to_vec() };
            p.validate(dim)?;
            Ok(Profile::Trig(p))
        };
        match self {
            PsiConfig::Constant { value } if *value > 0.0 => Ok(PsiSpec::Constant(*value)),
            PsiConfig::Constant { value } => Err(Error::Config(format!("psi.value: {value} is not positive"))),
            PsiConfig::NormalOnly { base, terms } => Ok(PsiSpec::Normal(trig(*base, terms)?)),
            PsiConfig::Exponential { eps, base, terms } if *eps > 0.0 => {
                Ok(PsiSpec::Exponential { eps: *eps, profile: trig(*base, terms)? })
            }
            PsiConfig::Exponential { eps, .. } => Err(Error::Config(format!("psi.eps: {eps} is not positive"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_r: usize,
    pub n_theta: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n_r: 64, n_theta: 128 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_floor")]
    pub spd_floor: f64,
}

fn default_tol() -> f64 {
    SolverOptions::default().tol
}

fn default_floor() -> f64 {
    SolverOptions::default().spd_floor
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { newton_tol: default_tol(), spd_floor: default_floor() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dimension: usize,
    pub k: usize,
    pub omega: BodySpec,
    pub omega_star: BodySpec,
    pub psi: PsiConfig,
    #[serde(default)]
    pub grid: GridConfig,
    /// Empty means the default schedule, or the configured `ε` alone for an
    /// exponential `ψ`.
    #[serde(default)]
    pub continuation: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl ProblemConfig {
    /// Fills defaults and checks every constraint that does not need a
    /// solve.
    pub fn validate(mut self) -> Result<Self> {
        if self.dimension < 2 {
            return Err(Error::Config(format!("dimension: {} must be at least 2", self.dimension)));
        }
        if self.k < 1 || self.k > self.dimension {
            return Err(Error::Config(format!("k: {} outside 1..={}", self.k, self.dimension)));
        }
        for (key, body) in [("omega", &self.omega), ("omega_star", &self.omega_star)] {
            if body.dim() != self.dimension {
                return Err(Error::Config(format!(
                    "{key}: body of dimension {} in a dimension-{} problem",
                    body.dim(),
                    self.dimension
                )));
            }
            let b = body.build()?;
            b.concavity_probe()?;
        }
        self.psi.build(self.dimension).map_err(|e| match e {
            Error::Argument(m) => Error::Config(format!("psi: {m}")),
            other => other,
        })?;
        if self.grid.n_r < 8 || self.grid.n_theta < 16 || self.grid.n_theta % 2 != 0 {
            return Err(Error::Config(format!(
                "grid: need n_r >= 8 and even n_theta >= 16, got {}x{}",
                self.grid.n_r, self.grid.n_theta
            )));
        }
        if self.continuation.is_empty() {
            self.continuation = match self.psi {
                PsiConfig::Exponential { eps, .. } => vec![eps],
                _ => DEFAULT_SCHEDULE.to_vec(),
            };
        }
        let c = &self.continuation;
        if c.iter().any(|&e| !(e > 0.0)) || c.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("continuation: must be positive and strictly decreasing".into()));
        }
        let t = self.tolerances;
        if !(t.newton_tol > 0.0) || !(t.spd_floor > 0.0) {
            return Err(Error::Config("tolerances: newton_tol and spd_floor must be positive".into()));
        }
        Ok(self)
    }

    pub fn problem(&self) -> Result<Problem> {
        Ok(Problem {
            omega: self.omega.build()?,
            omega_star: self.omega_star.build()?,
            k: self.k,
            psi: self.psi.build(self.dimension)?,
        })
    }

    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tolerances.newton_tol,
            spd_floor: self.tolerances.spd_floor,
            ..SolverOptions::default()
        }
    }
}

pub fn parse_config(text: &str) -> Result<ProblemConfig> {
    let cfg: ProblemConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()
}

/// A named, ready-to-run configuration.
#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub description: &'static str,
    pub config: ProblemConfig,
}

fn ball(r: f64) -> BodySpec {
    BodySpec::Ball { center: vec![0.0, 0.0], radius: r }
}

fn base_config(k: usize, omega: BodySpec, omega_star: BodySpec) -> ProblemConfig {
    ProblemConfig {
        dimension: 2,
        k,
        omega,
        omega_star,
        psi: PsiConfig::Constant { value: 1.0 },
        grid: GridConfig::default(),
        continuation: DEFAULT_SCHEDULE.to_vec(),
        tolerances: Tolerances::default(),
    }
}

/// Caps `Ω = Ω* = B_ρ` for `ρ ∈ {0.3, 0.5, 0.7}`, `k ∈ {1, 2}`; ellipse
/// targets; a superellipse pair.
pub fn registry() -> Vec<Instance> {
    let mut out = Vec::new();
    for rho in [0.3, 0.5, 0.7] {
        for k in [1, 2] {
            out.push(Instance {
                name: format!("cap-r{rho}-k{k}"),
                description: "spherical cap, Ω = Ω* = B_ρ, ψ = 1",
                config: base_config(k, ball(rho), ball(rho)),
            });
        }
    }
    let ellipse = BodySpec::Ellipse { center: [0.0, 0.0], semi_axes: [0.6, 0.4], angle: 0.3 };
    for k in [1, 2] {
        out.push(Instance {
            name: format!("ellipse-target-k{k}"),
            description: "Ω = B_0.5, Ω* a tilted ellipse",
            config: base_config(k, ball(0.5), ellipse.clone()),
        });
    }
    out.push(Instance {
        name: "ellipse-pair-k1".into(),
        description: "off-centre ellipse onto a rotated ellipse",
        config: base_config(
            1,
            BodySpec::Ellipse { center: [0.1, -0.05], semi_axes: [0.7, 0.45], angle: 0.0 },
            BodySpec::Ellipse { center: [0.05, 0.1], semi_axes: [0.5, 0.35], angle: 0.8 },
        ),
    });
    let mut trig = base_config(2, ball(0.5), ellipse);
    trig.psi = PsiConfig::NormalOnly {
        base: 1.0,
        terms: vec![TrigTerm { component: 0, amplitude: 0.2, frequency: 2.0, phase: 0.3 }],
    };
    out.push(Instance {
        name: "ellipse-target-trig-k2".into(),
        description: "ellipse target with a normal-dependent ψ",
        config: trig,
    });
    for k in [1, 2] {
        out.push(Instance {
            name: format!("superellipse-pair-k{k}"),
            description: "superellipse (m = 4) onto a rotated superellipse",
            config: base_config(
                k,
                BodySpec::Superellipse { center: [0.0, 0.0], semi_axes: [0.5, 0.5], exponent: 4.0, angle: 0.0 },
                BodySpec::Superellipse { center: [0.0, 0.0], semi_axes: [0.5, 0.4], exponent: 4.0, angle: 0.2 },
            ),
        });
    }
    out
}

pub fn instance(name: &str) -> Option<ProblemConfig> {
    registry().into_iter().find(|i| i.name == name).map(|i| i.config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub c_estimate: Option<f64>,
    pub residual_history: Vec<f64>,
    pub chi_min: Option<f64>,
    #[serde(rename = "M")]
    pub m: Option<f64>,
    #[serde(rename = "M_tilde")]
    pub m_tilde: Option<f64>,
    pub mean_u: Option<f64>,
    pub grid_dump_path: Option<String>,
    pub wall_time: f64,
    pub convergence_flag: bool,
}

impl SolveReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// A converged solve with everything derived from it.
#[derive(Debug, Clone)]
pub struct SolveArtifacts {
    pub problem: Problem,
    pub state: SolverState,
    pub diagnostics: Diagnostics,
    pub recovery: Result<PrimalRecovery>,
    pub wall_time: f64,
}

impl SolveArtifacts {
    /// Smallest interior `λ_min(D²u*)`.
    pub fn lambda_min(&self) -> f64 {
        let g = &self.state.grid;
        g.interior_nodes()
            .map(|i| {
                let h = g.derivatives(&self.state.u_star, i).1;
                let m = nalgebra::DMatrix::from_row_slice(2, 2, &[h[0][0], h[0][1], h[1][0], h[1][1]]);
                jacobi_eigen(&m).values[0]
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Continuation, diagnostics and primal recovery, without touching disk.
pub fn solve(config: &ProblemConfig) -> Result<SolveArtifacts> {
    if config.dimension != 2 {
        return Err(Error::Config(format!("dimension: solve needs 2, got {}", config.dimension)));
    }
    let start = Instant::now();
    let problem = config.problem()?;
    let grid = Arc::new(build_grid(&problem.omega_star, config.grid.n_r, config.grid.n_theta)?);
    let state = continuation_solve(&problem, grid, &config.continuation, &config.options())?;
    let diagnostics = diagnostics(&state, &problem)?;
    let recovery = recover_primal(&state, &problem);
    Ok(SolveArtifacts { problem, state, diagnostics, recovery, wall_time: start.elapsed().as_secs_f64() })
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Argument(_) | Error::StrictConvexity(_) | Error::Grid(_) | Error::Capability(_) => {
            EXIT_CONFIG
        }
        Error::NonConvergence { .. }
        | Error::Stall { .. }
        | Error::PartialContinuation { .. }
        | Error::SingularJacobian { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_INVARIANT,
    }
}

fn failure_history(err: &Error) -> Vec<f64> {
    match err {
        Error::NonConvergence { history, .. } | Error::Stall { history, .. } => history.clone(),
        Error::PartialContinuation { completed, source, .. } => {
            let mut h: Vec<f64> = completed.iter().map(|l| l.residual).collect();
            h.extend(failure_history(source));
            h
        }
        _ => Vec::new(),
    }
}

/// Outcome of [`run_solve`]: the report as written plus the process exit
/// code and a message for failures.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub report: SolveReport,
    pub exit_code: i32,
    pub message: Option<String>,
    pub report_path: PathBuf,
}

/// Solve, then write `report.json` and (on success) `grid.csv` into
/// `out_dir`. Solver failures still produce a report with the partial
/// residual history.
pub fn run_solve(config: &ProblemConfig, out_dir: &Path) -> Result<SolveOutcome> {
    fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let report_path = out_dir.join("report.json");
    let (report, exit_code, message) = match solve(config) {
        Ok(art) => {
            let csv_path = out_dir.join("grid.csv");
            write_grid_csv(&csv_path, &art.state)?;
            let converged = art.state.residual_norm <= config.tolerances.newton_tol;
            let mut problems = Vec::new();
            if !(art.diagnostics.chi_min > 0.0) {
                problems.push(format!("obliqueness lost: chi_min = {}", art.diagnostics.chi_min));
            }
            if art.lambda_min() < config.tolerances.spd_floor {
                problems.push(format!("SPD floor violated: {}", art.lambda_min()));
            }
            if let Err(e) = &art.recovery {
                problems.push(format!("primal recovery failed: {e}"));
            }
            let report = SolveReport {
                c_estimate: art.state.c_estimate,
                residual_history: art.state.newton_history.clone(),
                chi_min: Some(art.diagnostics.chi_min),
                m: Some(art.diagnostics.m),
                m_tilde: Some(art.diagnostics.m_tilde),
                mean_u: art.state.mean_u(),
                grid_dump_path: Some(csv_path.to_string_lossy().into_owned()),
                wall_time: start.elapsed().as_secs_f64(),
                convergence_flag: converged,
            };
            if problems.is_empty() {
                (report, EXIT_OK, None)
            } else {
                (report, EXIT_INVARIANT, Some(problems.join("; ")))
            }
        }
        Err(e) => {
            let report = SolveReport {
                c_estimate: None,
                residual_history: failure_history(&e),
                chi_min: None,
                m: None,
                m_tilde: None,
                mean_u: None,
                grid_dump_path: None,
                wall_time: start.elapsed().as_secs_f64(),
                convergence_flag: false,
            };
            (report, exit_code(&e), Some(e.to_string()))
        }
    };
    fs::write(&report_path, report.to_json())?;
    Ok(SolveOutcome { report, exit_code, message, report_path })
}

pub const CSV_HEADER: [&str; 7] = ["y1", "y2", "u_star", "du1", "du2", "lambda_min", "lambda_max"];

/// One row per node; 17 significant digits so that values read back
/// bit-for-bit.
pub fn write_grid_csv(path: &Path, state: &SolverState) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(CSV_HEADER).map_err(|e| Error::Io(e.to_string()))?;
    let grid = &state.grid;
    let values = state.values();
    for i in 0..grid.len() {
        let (g, h) = grid.derivatives(&state.u_star, i);
        let m = nalgebra::DMatrix::from_row_slice(2, 2, &[h[0][0], h[0][1], h[1][0], h[1][1]]);
        let ev = jacobi_eigen(&m).values;
        let p = grid.nodes[i];
        let row = [p[0], p[1], values[i], g[0], g[1], ev[0], ev[1]];
        w.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid_csv(path: &Path) -> Result<Vec<[f64; 7]>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let header = r.headers().map_err(|e| Error::Io(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Io(format!("unexpected grid header {header:?}")));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
            let mut row = [0.0; 7];
            for (slot, field) in row.iter_mut().zip(rec.iter()) {
                *slot = field.parse().map_err(|_| Error::Io(format!("bad number {field:?}")))?;
            }
            Ok(row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dimension": 2, "k": 1,
        "omega": {"kind": "ball", "center": [0, 0], "radius": 0.5},
        "omega_star": {"kind": "ball", "center": [0, 0], "radius": 0.5},
        "psi": {"kind": "constant", "value": 1}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.grid, GridConfig { n_r: 64, n_theta: 128 });
        assert_eq!(c.continuation, DEFAULT_SCHEDULE.to_vec());
        assert_eq!(c.tolerances, Tolerances { newton_tol: 1e-10, spd_floor: 1e-8 });
    }

    #[test]
    fn range_and_schema_errors() {
        let bad_k = MINIMAL.replace("\"k\": 1", "\"k\": 3");
        assert!(matches!(parse_config(&bad_k), Err(Error::Config(m)) if m.contains("k:")));
        let unknown = MINIMAL.replace("\"k\": 1", "\"k\": 1, \"colour\": 3");
        assert!(matches!(parse_config(&unknown), Err(Error::Config(m)) if m.contains("colour")));
        let nested = MINIMAL.replace("\"radius\": 0.5}", "\"radius\": 0.5, \"spin\": 1}");
        assert!(matches!(parse_config(&nested), Err(Error::Config(m)) if m.contains("spin")));
    }

    #[test]
    fn superellipse_below_two_is_rejected() {
        let text = MINIMAL.replace(
            r#"{"kind": "ball", "center": [0, 0], "radius": 0.5},
        "psi""#,
            r#"{"kind": "superellipse", "center": [0, 0], "semi_axes": [0.5, 0.5], "exponent": 1.5},
        "psi""#,
        );
        assert!(matches!(parse_config(&text), Err(Error::StrictConvexity(_))));
    }

    #[test]
    fn exponential_psi_defaults_to_its_own_eps() {
        let text = MINIMAL.replace(r#"{"kind": "constant", "value": 1}"#, r#"{"kind": "exponential", "eps": 0.2, "base": 1}"#);
        assert_eq!(parse_config(&text).unwrap().continuation, vec![0.2]);
    }

    #[test]
    fn registry_configs_validate() {
        let reg = registry();
        assert!(reg.len() >= 9);
        for inst in reg {
            let text = serde_json::to_string(&inst.config).unwrap();
            assert_eq!(parse_config(&text).unwrap(), inst.config, "{}", inst.name);
        }
        assert!(instance("cap-r0.5-k1").is_some());
    }

    #[test]
    fn report_round_trip_is_byte_identical() {
        let r = SolveReport {
            c_estimate: Some(1.788_854_381_999_831_7),
            residual_history: vec![0.1, 1e-3, 2.5e-11],
            chi_min: Some(0.999_999_999_9),
            m: Some(1.118_033_988_749_895),
            m_tilde: Some(1.25),
            mean_u: Some(-std::f64::consts::PI),
            grid_dump_path: Some("out/grid.csv".into()),
            wall_time: 1.0 / 3.0,
            convergence_flag: true,
        };
        let a = r.to_json();
        let b = SolveReport::from_json(&a).unwrap().to_json();
        assert_eq!(a, b);
        let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&a)
            .unwrap()
            .keys()
            .cloned()
            .collect();
        let mut expected = vec![
            "c_estimate", "residual_history", "chi_min", "M", "M_tilde", "mean_u", "grid_dump_path", "wall_time",
            "convergence_flag",
        ];
        expected.sort();
        let mut keys = keys;
        keys.sort();
        assert_eq!(keys, expected);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Stall { iteration: 1, residual: 1.0, history: vec![] }), EXIT_NONCONVERGENCE);
        assert_eq!(exit_code(&Error::ConeViolation { eigenvalues: vec![-1.0] }), EXIT_INVARIANT);
    }
}
