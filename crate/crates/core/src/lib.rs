//! Numerical kernels for the second boundary value problem of prescribed
//! k-Hessian curvature graphs.
//!
//! The crate is organised bottom-up:
//!
//! * [`symfun`] elementary symmetric functions, the operators
//!   `F = σ_k^{1/k}` and `F* = (σ_n/σ_{n-k})^{1/k}` and their derivatives.
//! * [`geometry`] pointwise graph tensors from a 2-jet, the primal residual
//!   and its linearization.
//! * [`duality`] hemisphere projection, support functions and the Legendre
//!   transform.
//! * [`rotations`] rotation groups of `R^{n+1}` acting on the projected chart
//!   and the quadratic vector fields they generate.
//! * [`solver`] a body-fitted polar discretization of the dual oblique
//!   problem with damped Newton and ε-continuation.
//! * [`harness`] configuration, instance registry, reports and the
//!   verification driver used by the CLI.

pub mod linsolve;
pub mod body;
pub mod duality;
pub mod eigen;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod interp;
pub mod psi;
pub mod rotations;
pub mod solver;
pub mod symfun;

pub use error::{Error, Result};
