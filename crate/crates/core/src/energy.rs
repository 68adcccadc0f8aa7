//! Discrete energy, its exact gradient and Hessian, and the trace-inequality gap.
//!
//! ```text
//! I(u) = c_D ∫|∇u|² + ½∫S u² + (n-1)∫_∂ h_g u²
//!        - 1/(p+1) ∫K|u|^{p+1} - κ 4(n-1)/(p+3) ∫_∂ H|u|^{(p+3)/2},     c_D = 2(n-1)/(n-2)
//! ```
//!
//! The Dirichlet integral is the edge sum `Σ w_e (|u_a| - |u_b|)²`, so every term sees
//! `|u|` and `I(u) = I(|u|)` holds exactly on the grid. The residual is the exact
//! derivative of the discrete energy away from zeros of `u`, so directional finite
//! differences of [`energy`] reproduce [`el_residual`] up to rounding.

use serde::Serialize;

use crate::critical_exponent;
use crate::error::{check_len, Error, Result};
use crate::fields::{dn_map, CurvatureData};
use crate::geometry::{pairwise_sum, surface_integral, volume_integral, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub dirichlet: f64,
    pub mass_s: f64,
    pub bulk_k: f64,
    pub boundary_h: f64,
    pub total: f64,
    /// Interior exponent.
    pub p: f64,
    /// Boundary power `(p+3)/2`.
    pub q_b: f64,
    pub kappa: f64,
}

/// `2(n-1)/(n-2)`, the Dirichlet coefficient of the energy.
pub fn dirichlet_coefficient(n: usize) -> f64 {
    let nf = n as f64;
    2.0 * (nf - 1.0) / (nf - 2.0)
}

pub fn check_exponent(n: usize, p: f64) -> Result<()> {
    let pc = critical_exponent(n);
    if !(p > 1.0 && p <= pc + 1e-12) {
        return Err(Error::Parameter(format!("exponent p = {p} outside (1, {pc}]")));
    }
    Ok(())
}

fn check_inputs(mesh: &Mesh, data: &CurvatureData, u: &[f64], p: f64) -> Result<()> {
    check_len(mesh.len(), u.len())?;
    check_len(mesh.len(), data.k.len())?;
    check_len(mesh.boundary().len(), data.h.len())?;
    check_exponent(data.n, p)
}

/// `∫|∇u|²` as the edge sum of the discrete Dirichlet form.
pub fn dirichlet_integral(mesh: &Mesh, u: &[f64]) -> Result<f64> {
    check_len(mesh.len(), u.len())?;
    let terms: Vec<f64> = mesh.edges().iter().map(|e| e.weight * (u[e.a] - u[e.b]).powi(2)).collect();
    Ok(pairwise_sum(&terms))
}

/// Graph Laplacian `(L v)_a = Σ_e w_e (v_a - v_b)`, half the gradient of the Dirichlet sum.
pub fn laplacian_apply(mesh: &Mesh, v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for e in mesh.edges() {
        let f = e.weight * (v[e.a] - v[e.b]);
        out[e.a] += f;
        out[e.b] -= f;
    }
}

/// Diagonal of the graph Laplacian.
pub fn laplacian_diagonal(mesh: &Mesh) -> Vec<f64> {
    let mut d = vec![0.0; mesh.len()];
    for e in mesh.edges() {
        d[e.a] += e.weight;
        d[e.b] += e.weight;
    }
    d
}

pub fn energy(mesh: &Mesh, data: &CurvatureData, u: &[f64], p: f64, kappa: f64) -> Result<EnergyBreakdown> {
    check_inputs(mesh, data, u, p)?;
    let n = data.n as f64;
    let b = mesh.boundary();
    let abs: Vec<f64> = u.iter().map(|v| v.abs()).collect();
    let dirichlet = dirichlet_coefficient(data.n) * dirichlet_integral(mesh, &abs)?;
    let su2: Vec<f64> = data.s.iter().zip(u).map(|(s, v)| s * v * v).collect();
    let hg2: Vec<f64> = b.nodes.iter().zip(&data.hg).map(|(&k, h)| h * u[k] * u[k]).collect();
    let mass_s = 0.5 * volume_integral(mesh, &su2)? + (n - 1.0) * surface_integral(mesh, &hg2)?;
    let ku: Vec<f64> = data.k.iter().zip(u).map(|(k, v)| k * v.abs().powf(p + 1.0)).collect();
    let bulk_k = -volume_integral(mesh, &ku)? / (p + 1.0);
    let q_b = (p + 3.0) / 2.0;
    let hu: Vec<f64> = b.nodes.iter().zip(&data.h).map(|(&k, h)| h * u[k].abs().powf(q_b)).collect();
    let boundary_h = -kappa * 4.0 * (n - 1.0) / (p + 3.0) * surface_integral(mesh, &hu)?;
    Ok(EnergyBreakdown { dirichlet, mass_s, bulk_k, boundary_h, total: dirichlet + mass_s + bulk_k + boundary_h, p, q_b, kappa })
}

/// Exact gradient of the discrete energy with respect to the nodal values.
pub fn energy_gradient(mesh: &Mesh, data: &CurvatureData, u: &[f64], p: f64, kappa: f64) -> Result<Vec<f64>> {
    check_inputs(mesh, data, u, p)?;
    let n = data.n as f64;
    let mut g = vec![0.0; mesh.len()];
    let abs: Vec<f64> = u.iter().map(|v| v.abs()).collect();
    laplacian_apply(mesh, &abs, &mut g);
    let c = 2.0 * dirichlet_coefficient(data.n);
    let vw = mesh.volume_weights();
    for k in 0..mesh.len() {
        let v = u[k];
        g[k] = c * v.signum() * g[k] + vw[k] * (data.s[k] * v - data.k[k] * v.abs().powf(p - 1.0) * v);
    }
    let b = mesh.boundary();
    let q = (p - 1.0) / 2.0;
    for (j, &k) in b.nodes.iter().enumerate() {
        let v = u[k];
        g[k] += 2.0 * (n - 1.0) * b.weights[j] * (data.hg[j] * v - kappa * data.h[j] * v.abs().powf(q) * v);
    }
    Ok(g)
}

/// Discrete gradient split into strong-form interior and boundary residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    /// Exact derivative of the discrete energy.
    pub gradient: Vec<f64>,
    /// `-C_n Δu + S u - K|u|^{p-1}u` per node.
    pub interior: Vec<f64>,
    /// `(2/(n-2)) ∂_η u + h_g u - κ H |u|^{(p-1)/2} u` per boundary node.
    pub boundary: Vec<f64>,
    pub interior_norm: f64,
    pub boundary_norm: f64,
}

impl Residual {
    /// Larger of the two norms; the quantity compared against solver tolerances.
    pub fn norm(&self) -> f64 {
        self.interior_norm.max(self.boundary_norm)
    }
}

/// Splits a discrete energy gradient into strong residuals and their weighted L² norms.
///
/// Interior residuals are `g_k / V_k`. A boundary node's control volume also carries
/// the boundary flux, so its interior residual is copied from the inward neighbour
/// and the remainder, divided by `2(n-1)` times the surface weight, is the boundary
/// residual. Truncation nodes are excluded from both norms.
pub fn split_residual(mesh: &Mesh, n: usize, gradient: Vec<f64>) -> Residual {
    let vw = mesh.volume_weights();
    let b = mesh.boundary();
    let mut interior: Vec<f64> = gradient.iter().zip(vw).map(|(g, v)| g / v).collect();
    for (j, &k) in b.nodes.iter().enumerate() {
        interior[k] = interior[b.inward[j]];
    }
    let scale = 2.0 * (n as f64 - 1.0);
    let boundary: Vec<f64> =
        b.nodes.iter().enumerate().map(|(j, &k)| (gradient[k] - vw[k] * interior[k]) / (scale * b.weights[j])).collect();
    let trunc = mesh.truncated();
    let isq: Vec<f64> = (0..mesh.len()).map(|k| if trunc[k] { 0.0 } else { vw[k] * interior[k] * interior[k] }).collect();
    let bsq: Vec<f64> =
        b.nodes.iter().enumerate().map(|(j, &k)| if trunc[k] { 0.0 } else { b.weights[j] * boundary[j] * boundary[j] }).collect();
    Residual { gradient, interior, boundary, interior_norm: pairwise_sum(&isq).sqrt(), boundary_norm: pairwise_sum(&bsq).sqrt() }
}

pub fn el_residual(mesh: &Mesh, data: &CurvatureData, u: &[f64], p: f64, kappa: f64) -> Result<Residual> {
    let g = energy_gradient(mesh, data, u, p, kappa)?;
    Ok(split_residual(mesh, data.n, g))
}

/// Second derivative of the discrete energy at a fixed state, as a matrix-free operator.
#[derive(Debug, Clone)]
pub struct Hessian<'a> {
    mesh: &'a Mesh,
    lap_coeff: f64,
    potential: Vec<f64>,
    /// Nodal signs of the state when it changes sign; the Laplacian part is then `S L S`.
    signs: Option<Vec<f64>>,
}

impl<'a> Hessian<'a> {
    pub fn new(mesh: &'a Mesh, data: &CurvatureData, u: &[f64], p: f64, kappa: f64) -> Result<Self> {
        check_inputs(mesh, data, u, p)?;
        let n = data.n as f64;
        let vw = mesh.volume_weights();
        let mut potential: Vec<f64> =
            (0..mesh.len()).map(|k| vw[k] * (data.s[k] - p * data.k[k] * u[k].abs().powf(p - 1.0))).collect();
        let b = mesh.boundary();
        let q = (p - 1.0) / 2.0;
        for (j, &k) in b.nodes.iter().enumerate() {
            potential[k] += (n - 1.0) * b.weights[j] * (2.0 * data.hg[j] - kappa * (p + 1.0) * data.h[j] * u[k].abs().powf(q));
        }
        let signs = u.iter().any(|v| v.is_sign_negative()).then(|| u.iter().map(|v| v.signum()).collect());
        Ok(Hessian { mesh, lap_coeff: 2.0 * dirichlet_coefficient(data.n), potential, signs })
    }

    /// Sobolev-type metric `C_n L + mass` used as a descent preconditioner.
    pub fn metric(mesh: &'a Mesh, n: usize, mass: f64) -> Self {
        Hessian {
            mesh,
            lap_coeff: 2.0 * dirichlet_coefficient(n),
            potential: mesh.volume_weights().iter().map(|v| mass * v).collect(),
            signs: None,
        }
    }

    /// Banded Cholesky factor of `C_n L + |potential|`, a positive definite
    /// preconditioner for this operator whether or not it is definite.
    pub fn absolute_factor(&self) -> Result<crate::linalg::BandedCholesky> {
        let floor = 1e-12 * self.mesh.volume_weights().iter().cloned().fold(0.0, f64::max);
        let diag: Vec<f64> = laplacian_diagonal(self.mesh)
            .iter()
            .zip(&self.potential)
            .map(|(d, q)| self.lap_coeff * d + q.abs().max(floor))
            .collect();
        let lower: Vec<(usize, usize, f64)> = self
            .mesh
            .edges()
            .iter()
            .map(|e| (e.a.max(e.b), e.a.min(e.b), -self.lap_coeff * e.weight * self.sign_product(e.a, e.b)))
            .collect();
        crate::linalg::BandedCholesky::factor(&diag, &lower)
    }

    fn sign_product(&self, a: usize, b: usize) -> f64 {
        self.signs.as_ref().map_or(1.0, |s| s[a] * s[b])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        laplacian_diagonal(self.mesh).iter().zip(&self.potential).map(|(d, q)| self.lap_coeff * d + q).collect()
    }
}

impl crate::linalg::LinearOperator for Hessian<'_> {
    fn len(&self) -> usize {
        self.mesh.len()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        match &self.signs {
            None => laplacian_apply(self.mesh, v, out),
            Some(s) => {
                let sv: Vec<f64> = v.iter().zip(s).map(|(a, b)| a * b).collect();
                laplacian_apply(self.mesh, &sv, out);
                out.iter_mut().zip(s).for_each(|(o, b)| *o *= b);
            }
        }
        for k in 0..out.len() {
            out[k] = self.lap_coeff * out[k] + self.potential[k] * v[k];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceGap {
    pub lhs: f64,
    pub rhs_without_c: f64,
    pub needed_c: f64,
}

/// Smallest `C` for which the trace inequality holds on `u` with the given `epsilon`.
pub fn trace_inequality_gap(mesh: &Mesh, data: &CurvatureData, u: &[f64], epsilon: f64) -> Result<TraceGap> {
    check_len(mesh.len(), u.len())?;
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let n = data.n as f64;
    let two_sharp = 2.0 * (n - 1.0) / (n - 2.0);
    let two_star = 2.0 * n / (n - 2.0);
    let dbar = dn_map(data, mesh)?.upper_bound();
    let b = mesh.boundary();
    let hu: Vec<f64> = b.nodes.iter().zip(&data.h).map(|(&k, h)| h * u[k].abs().powf(two_sharp)).collect();
    let lhs = surface_integral(mesh, &hu)?;
    let grad = dirichlet_integral(mesh, u)?;
    let ku: Vec<f64> = data.k.iter().zip(u).map(|(k, v)| k.abs() * v.abs().powf(two_star)).collect();
    let rhs_without_c = (dbar + epsilon) * (2.0 * (n - 1.0) / (n - 2.0).powi(2) * grad + volume_integral(mesh, &ku)? / (2.0 * n));
    let bulk: Vec<f64> = u.iter().map(|v| v.abs().powf(two_sharp)).collect();
    let denom = volume_integral(mesh, &bulk)?;
    let needed_c = if denom > 0.0 { ((lhs - rhs_without_c) / denom).max(0.0) } else { 0.0 };
    Ok(TraceGap { lhs, rhs_without_c, needed_c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, DomainKind, Resolution};
    use std::f64::consts::PI;

    fn ball(n: usize) -> Mesh {
        build_mesh(DomainKind::AxiBall3, Resolution::grid(n, n)).unwrap()
    }

    #[test]
    fn constant_field_energy() {
        let m = ball(16);
        let d = CurvatureData::constant(&m, -6.0, 0.0, 0.0, 0.0).unwrap();
        let e = energy(&m, &d, &vec![1.0; m.len()], 5.0, 1.0).unwrap();
        assert!((e.total - 4.0 * PI / 3.0).abs() < 1e-12);
        assert_eq!(e.total, e.dirichlet + e.mass_s + e.bulk_k + e.boundary_h);
        let z = energy(&m, &d, &vec![0.0; m.len()], 5.0, 1.0).unwrap();
        assert_eq!(z.total, 0.0);
    }

    #[test]
    fn small_constants_have_negative_energy_when_h_positive() {
        let m = ball(16);
        let d = CurvatureData::constant(&m, -6.0, 0.2, 0.0, 0.0).unwrap();
        for eps in [0.1, 0.3] {
            let e = energy(&m, &d, &vec![eps; m.len()], 5.0, 1.0).unwrap();
            assert!(e.total < 0.0);
            assert!((e.boundary_h + 4.0 * PI * 0.2 * eps.powi(4)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_field_residual() {
        let m = ball(32);
        let d = CurvatureData::constant(&m, -6.0, 0.0, 0.0, 0.0).unwrap();
        let r = el_residual(&m, &d, &vec![1.0; m.len()], 5.0, 1.0).unwrap();
        assert!(r.interior.iter().all(|v| (v - 6.0).abs() < 1e-9));
        assert!(r.boundary.iter().all(|v| v.abs() < 1e-9));
        assert!((r.interior_norm - 6.0 * (4.0 * PI / 3.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_exponent() {
        let m = ball(8);
        let d = CurvatureData::constant(&m, -6.0, 0.0, 0.0, 0.0).unwrap();
        let u = vec![1.0; m.len()];
        assert!(matches!(energy(&m, &d, &u, 5.5, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(energy(&m, &d, &u, 1.0, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(energy(&m, &d, &u[1..], 3.0, 1.0), Err(Error::Shape { .. })));
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        use crate::linalg::LinearOperator;
        let m = ball(10);
        let d = CurvatureData::constant(&m, -6.0, 0.7, -1.0, 0.5).unwrap();
        let u = m.sample(|p| 1.0 + 0.3 * p[1] + 0.2 * p[0] * p[0]);
        let v = m.sample(|p| (3.0 * p[0]).sin() + p[1]);
        let t = 1e-6;
        let up: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + t * b).collect();
        let um: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - t * b).collect();
        let gp = energy_gradient(&m, &d, &up, 4.0, 1.0).unwrap();
        let gm = energy_gradient(&m, &d, &um, 4.0, 1.0).unwrap();
        let h = Hessian::new(&m, &d, &u, 4.0, 1.0).unwrap();
        let mut hv = vec![0.0; m.len()];
        h.apply(&v, &mut hv);
        let scale = hv.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        for k in 0..m.len() {
            assert!(((gp[k] - gm[k]) / (2.0 * t) - hv[k]).abs() < 1e-6 * scale);
        }
    }

    #[test]
    fn sign_changing_states() {
        use crate::linalg::LinearOperator;
        let m = ball(12);
        let d = CurvatureData::constant(&m, -6.0, 0.7, -1.0, 0.5).unwrap();
        let u = m.sample(|p| p[1] + 0.31);
        let abs: Vec<f64> = u.iter().map(|v| v.abs()).collect();
        assert_eq!(energy(&m, &d, &u, 4.0, 1.0).unwrap().total, energy(&m, &d, &abs, 4.0, 1.0).unwrap().total);
        let v = m.sample(|p| (2.0 * p[0]).cos() - p[1]);
        let t = 1e-6;
        let shift = |s: f64| -> Vec<f64> { u.iter().zip(&v).map(|(a, b)| a + s * b).collect() };
        let gp = energy_gradient(&m, &d, &shift(t), 4.0, 1.0).unwrap();
        let gm = energy_gradient(&m, &d, &shift(-t), 4.0, 1.0).unwrap();
        let h = Hessian::new(&m, &d, &u, 4.0, 1.0).unwrap();
        let mut hv = vec![0.0; m.len()];
        h.apply(&v, &mut hv);
        let scale = hv.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        for k in 0..m.len() {
            assert!(((gp[k] - gm[k]) / (2.0 * t) - hv[k]).abs() < 1e-6 * scale);
        }
        let g = energy_gradient(&m, &d, &u, 4.0, 1.0).unwrap();
        let fd = (energy(&m, &d, &shift(t), 4.0, 1.0).unwrap().total - energy(&m, &d, &shift(-t), 4.0, 1.0).unwrap().total)
            / (2.0 * t);
        let slope: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((fd - slope).abs() < 1e-6 * slope.abs().max(1.0));
    }

    #[test]
    fn trace_gap_examples() {
        let m = ball(32);
        let one = vec![1.0; m.len()];
        let d = CurvatureData::constant(&m, -6.0, 0.0, 0.0, 0.0).unwrap();
        let g = trace_inequality_gap(&m, &d, &one, 0.1).unwrap();
        assert_eq!((g.lhs, g.needed_c), (0.0, 0.0));
        let d = CurvatureData::constant(&m, -6.0, 0.5, 0.0, 0.0).unwrap();
        let g = trace_inequality_gap(&m, &d, &one, 0.1).unwrap();
        assert!((g.lhs - 2.0 * PI).abs() < 1e-10);
        assert!((g.rhs_without_c - 0.8 * PI).abs() < 1e-10);
        assert!((g.needed_c - 0.9).abs() < 1e-10);
        let z = trace_inequality_gap(&m, &d, &vec![0.0; m.len()], 0.1).unwrap();
        assert_eq!(z.needed_c, 0.0);
    }
}
