//! Numerical laboratory for the boundary Kazdan–Warner problem with negative
//! scalar curvature: find a positive conformal factor `u` on a model domain such
//! that the metric `u^{4/(n-2)} g` has scalar curvature `K < 0` in the interior and
//! mean curvature `H` on the boundary.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: structured axisymmetric/radial meshes, quadrature and stencils.
//! * [`fields`]: curvature data and the scaling-invariant ratio `D_n`.
//! * [`profiles`]: closed-form solution families and test functions.
//! * [`energy`]: the discrete energy, its exact gradient and the trace-inequality gap.
//! * [`identities`]: domain-variation and Pohozaev identity checks.
//! * [`solvers`]: minimisation, Newton, mountain pass and continuation.
//! * [`diagnostics`]: blow-up instruments used on solution sequences.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod energy;
mod error;
pub mod fields;
pub mod geometry;
pub mod identities;
pub mod linalg;
pub mod profiles;
pub mod solvers;

pub use error::{Error, Result};

/// `C_n = 4(n-1)/(n-2)`, the coefficient of the conformal Laplacian.
pub fn conformal_constant(n: usize) -> f64 {
    4.0 * (n as f64 - 1.0) / (n as f64 - 2.0)
}

/// Critical interior exponent `(n+2)/(n-2)`.
pub fn critical_exponent(n: usize) -> f64 {
    (n as f64 + 2.0) / (n as f64 - 2.0)
}

/// Area of the unit sphere `S^{k}` in `R^{k+1}`.
pub fn sphere_area(k: usize) -> f64 {
    let m = (k + 1) as f64;
    2.0 * std::f64::consts::PI.powf(m / 2.0) / libm::tgamma(m / 2.0)
}
