//! Domain-variation and Pohozaev identities evaluated by quadrature.
//!
//! Vector fields are axisymmetric and stored by their meridional components
//! `(F_xi, F_zeta)`; on radial meshes the single component is radial. The
//! divergence adds the azimuthal part `(n-2) F_xi / xi` (axisymmetric meshes) or
//! `(n-1) F_r / r` (radial meshes).

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::fields::CurvatureData;
use crate::geometry::{gradient, outer_integral, surface_integral, volume_integral, BoundaryPart, DomainKind, Mesh};
use crate::{conformal_constant, sphere_area};

/// A vector field with its Jacobian `J[k][j] = ∂_j F^k` and divergence at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationField {
    pub values: Vec<[f64; 2]>,
    pub jacobian: Vec<[[f64; 2]; 2]>,
    pub divergence: Vec<f64>,
}

fn azimuthal_factor(mesh: &Mesh) -> f64 {
    match mesh.kind() {
        DomainKind::RadialBall { n } => n as f64 - 1.0,
        _ => mesh.dim() as f64 - 2.0,
    }
}

impl VariationField {
    fn assemble(mesh: &Mesh, values: Vec<[f64; 2]>, jacobian: Vec<[[f64; 2]; 2]>) -> Self {
        let c = azimuthal_factor(mesh);
        let radial = matches!(mesh.kind(), DomainKind::RadialBall { .. });
        let divergence = mesh
            .nodes()
            .iter()
            .zip(values.iter().zip(&jacobian))
            .map(|(p, (f, j))| {
                let trace = if radial { j[0][0] } else { j[0][0] + j[1][1] };
                trace + c * f[0] / p[0]
            })
            .collect();
        VariationField { values, jacobian, divergence }
    }

    pub fn zero(mesh: &Mesh) -> Self {
        VariationField {
            values: vec![[0.0; 2]; mesh.len()],
            jacobian: vec![[[0.0; 2]; 2]; mesh.len()],
            divergence: vec![0.0; mesh.len()],
        }
    }

    /// The position field `X`.
    pub fn position(mesh: &Mesh) -> Self {
        Self::closed_form(mesh, |p| (p, [[1.0, 0.0], [0.0, 1.0]]))
    }

    /// A field given with its Jacobian in closed form.
    pub fn closed_form<F: Fn([f64; 2]) -> ([f64; 2], [[f64; 2]; 2])>(mesh: &Mesh, f: F) -> Self {
        let (values, jacobian) = mesh.nodes().iter().map(|&p| f(p)).unzip();
        Self::assemble(mesh, values, jacobian)
    }

    /// `F = ∇u` with the Jacobian from a second application of the gradient stencils.
    pub fn from_gradient(mesh: &Mesh, u: &[f64]) -> Result<Self> {
        let values = gradient(mesh, u)?;
        let gx: Vec<f64> = values.iter().map(|g| g[0]).collect();
        let gz: Vec<f64> = values.iter().map(|g| g[1]).collect();
        let dx = gradient(mesh, &gx)?;
        let dz = gradient(mesh, &gz)?;
        let jacobian = dx.iter().zip(&dz).map(|(a, b)| [*a, *b]).collect();
        Ok(Self::assemble(mesh, values, jacobian))
    }
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// `B_p(u, F) = C_n |x - p| ((F·η)² - ½|F|²) + 2(n-1) u F·η` at the nodes of a boundary part.
///
/// `u` and `F` are sampled at the boundary nodes; the anchor defaults to the origin.
pub fn bp_form(mesh: &Mesh, part: &BoundaryPart, anchor: Option<[f64; 2]>, u: &[f64], f: &[[f64; 2]]) -> Result<Vec<f64>> {
    check_len(part.len(), u.len())?;
    check_len(part.len(), f.len())?;
    let n = mesh.dim() as f64;
    let cn = conformal_constant(mesh.dim());
    let p = anchor.unwrap_or([0.0, 0.0]);
    Ok(part
        .nodes
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let x = mesh.nodes()[k];
            let dist = (x[0] - p[0]).hypot(x[1] - p[1]);
            let fe = dot2(f[j], part.normals[j]);
            cn * dist * (fe * fe - 0.5 * dot2(f[j], f[j])) + 2.0 * (n - 1.0) * u[j] * fe
        })
        .collect())
}

/// Both sides of the domain-variation identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

impl IdentityReport {
    fn new(lhs: f64, rhs: f64) -> Self {
        IdentityReport { lhs, rhs, residual: (lhs - rhs).abs() }
    }
}

/// Domain-variation identity for a solution of `-C_n Δu + S u = K u^p`, with field `F`.
pub fn domain_variation_residual(
    mesh: &Mesh,
    data: &CurvatureData,
    u: &[f64],
    p: f64,
    f: &VariationField,
) -> Result<IdentityReport> {
    check_len(mesh.len(), u.len())?;
    check_len(mesh.len(), f.values.len())?;
    let cn = conformal_constant(data.n);
    let g = gradient(mesh, u)?;
    let mut a = Vec::with_capacity(mesh.len());
    for k in 0..mesh.len() {
        let j = f.jacobian[k];
        let gu = g[k];
        let df = gu[0] * (j[0][0] * gu[0] + j[0][1] * gu[1]) + gu[1] * (j[1][0] * gu[0] + j[1][1] * gu[1]);
        let g2 = dot2(gu, gu);
        let fg = dot2(f.values[k], gu);
        let up = u[k].abs().powf(p);
        a.push(cn * df - 0.5 * cn * g2 * f.divergence[k] - data.k[k] * up * fg + data.s[k] * u[k] * fg);
    }
    let lhs = volume_integral(mesh, &a)?;
    let b = mesh.boundary();
    let mut s = Vec::with_capacity(b.len());
    for (j, &k) in b.nodes.iter().enumerate() {
        let gu = g[k];
        let eta = b.normals[j];
        s.push(cn * dot2(gu, f.values[k]) * dot2(gu, eta) - 0.5 * cn * dot2(gu, gu) * dot2(f.values[k], eta));
    }
    let rhs = surface_integral(mesh, &s)?;
    Ok(IdentityReport::new(lhs, rhs))
}

fn half_ball_radius(mesh: &Mesh, r: f64) -> Result<f64> {
    match mesh.kind() {
        DomainKind::AxiHalfBall { radius } => {
            if r > radius * (1.0 + 1e-12) {
                Err(Error::Domain(format!("radius {r} exceeds the grid extent {radius}")))
            } else if (r - radius).abs() > 1e-12 * radius {
                Err(Error::Domain(format!("the half-ball grid has radius {radius}; build one with radius {r}")))
            } else {
                Ok(radius)
            }
        }
        other => Err(Error::Domain(format!("Pohozaev quantities need a half-ball mesh, got {other:?}"))),
    }
}

/// `P_Ω(u)` on `Ω = B(0, r)⁺` with `f = K`, `g = S`.
pub fn pohozaev_p(mesh: &Mesh, data: &CurvatureData, u: &[f64], p: f64, r: f64) -> Result<f64> {
    let r = half_ball_radius(mesh, r)?;
    check_len(mesh.len(), u.len())?;
    let n = data.n as f64;
    let nodes = mesh.nodes();
    let gk = gradient(mesh, &data.k)?;
    let gs = gradient(mesh, &data.s)?;
    let c_bulk = n / (p + 1.0) - (n - 2.0) / 2.0;
    let bulk: Vec<f64> = (0..mesh.len())
        .map(|k| {
            let up1 = u[k].abs().powf(p + 1.0);
            let u2 = u[k] * u[k];
            up1 * dot2(nodes[k], gk[k]) / (p + 1.0) + c_bulk * data.k[k] * up1 - 0.5 * u2 * dot2(nodes[k], gs[k]) - data.s[k] * u2
        })
        .collect();
    let outer = mesh.outer().expect("half-ball meshes have an outer part");
    let hemi: Vec<f64> = outer
        .nodes
        .iter()
        .map(|&k| 0.5 * r * data.s[k] * u[k] * u[k] - r / (p + 1.0) * data.k[k] * u[k].abs().powf(p + 1.0))
        .collect();
    Ok(volume_integral(mesh, &bulk)? + outer_integral(mesh, &hemi)?)
}

/// Right-hand side of the Pohozaev identity on `B(0, r)⁺` with boundary data `h = H`.
pub fn pohozaev_rhs(mesh: &Mesh, data: &CurvatureData, u: &[f64], q: f64, r: f64) -> Result<f64> {
    let r = half_ball_radius(mesh, r)?;
    check_len(mesh.len(), u.len())?;
    let n = data.n as f64;
    let g = gradient(mesh, u)?;
    let outer = mesh.outer().expect("half-ball meshes have an outer part");
    let uo: Vec<f64> = outer.nodes.iter().map(|&k| u[k]).collect();
    let fo: Vec<[f64; 2]> = outer.nodes.iter().map(|&k| g[k]).collect();
    let b = bp_form(mesh, outer, None, &uo, &fo)?;
    let hemi = outer_integral(mesh, &b)?;

    let flat = mesh.boundary();
    let ub: Vec<f64> = flat.nodes.iter().map(|&k| u[k].abs().powf(q + 1.0)).collect();
    let hu: Vec<f64> = ub.iter().zip(&data.h).map(|(a, h)| a * h).collect();
    let dh = mesh.tangential_derivative(&data.h)?;
    let rho = mesh.boundary_parameter();
    let xdh: Vec<f64> = (0..flat.len()).map(|j| ub[j] * rho[j] * dh[j]).collect();
    let c = 2.0 * (n - 1.0) / (q + 1.0);
    // The rim circle is the last flat-face node, where the hemisphere meets z = 0.
    let last = flat.len() - 1;
    let rim = sphere_area(data.n - 2) * r.powf(n - 2.0) * data.h[last] * ub[last] * r;
    Ok(hemi + 2.0 * (n - 1.0) * ((n - 2.0) / 2.0 - (n - 1.0) / (q + 1.0)) * surface_integral(mesh, &hu)? + c * rim
        - c * surface_integral(mesh, &xdh)?)
}

/// `|P_Ω(u) - RHS|` for a solution of both the interior and the boundary equation.
pub fn pohozaev_identity_residual(
    mesh: &Mesh,
    data: &CurvatureData,
    u: &[f64],
    p: f64,
    q: f64,
    r: f64,
) -> Result<IdentityReport> {
    Ok(IdentityReport::new(pohozaev_p(mesh, data, u, p, r)?, pohozaev_rhs(mesh, data, u, q, r)?))
}

/// Hemisphere integrals of `B(h, ∇h)`, `h = a|x|^{2-n} + b`, and their `r -> 0` extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularLimit {
    pub radii: Vec<f64>,
    pub integrals: Vec<f64>,
    /// Richardson extrapolation with a model linear in `r` on the two smallest radii.
    pub limit: f64,
    /// `-(n-1)(n-2) ω_{n-1} a b(0)` with `ω_{n-1}` the full sphere area.
    pub predicted: f64,
}

/// Singular-limit check on a half-ball mesh carrying the smooth part `b` as a nodal field.
pub fn singular_limit_check(mesh: &Mesh, a: f64, b: &[f64], radii: &[f64]) -> Result<SingularLimit> {
    let big_r = match mesh.kind() {
        DomainKind::AxiHalfBall { radius } => radius,
        other => return Err(Error::Domain(format!("singular limit needs a half-ball mesh, got {other:?}"))),
    };
    check_len(mesh.len(), b.len())?;
    if !(a > 0.0) {
        return Err(Error::Parameter(format!("a must be positive, got {a}")));
    }
    if radii.len() < 2 {
        return Err(Error::Parameter("need at least two radii".into()));
    }
    let h = mesh.axis1()[1] - mesh.axis1()[0];
    let n = mesh.dim();
    let nf = n as f64;
    let cn = conformal_constant(n);
    let gb = gradient(mesh, b)?;
    let gbx: Vec<f64> = gb.iter().map(|g| g[0]).collect();
    let gbz: Vec<f64> = gb.iter().map(|g| g[1]).collect();
    let mut integrals = Vec::with_capacity(radii.len());
    for &r in radii {
        if r < 4.0 * h {
            return Err(Error::Resolution(format!("radius {r} is below 4 grid cells ({})", 4.0 * h)));
        }
        if r > big_r {
            return Err(Error::Domain(format!("radius {r} exceeds the grid extent {big_r}")));
        }
        let m = 512;
        let dt = PI / 2.0 / m as f64;
        let mut acc = 0.0;
        for i in 0..m {
            let t = (i as f64 + 0.5) * dt;
            let eta = [t.sin(), t.cos()];
            let x = [r * eta[0], r * eta[1]];
            let bv = mesh.interpolate(b, x).ok_or_else(|| Error::Domain("sample outside mesh".into()))?;
            let fb = [mesh.interpolate(&gbx, x).unwrap_or(0.0), mesh.interpolate(&gbz, x).unwrap_or(0.0)];
            let gmag = a * r.powf(2.0 - nf);
            let gg = -(nf - 2.0) * gmag / r;
            let f = [gg * eta[0] + fb[0], gg * eta[1] + fb[1]];
            let fe = dot2(f, eta);
            let bform = cn * r * (fe * fe - 0.5 * dot2(f, f)) + 2.0 * (nf - 1.0) * (gmag + bv) * fe;
            // Azimuthal measure of the (n-1)-sphere slice at polar angle t.
            let w = sphere_area(n - 2) * (r * t.sin()).powf(nf - 2.0) * r * dt;
            acc += bform * w;
        }
        integrals.push(acc);
    }
    let mut order: Vec<usize> = (0..radii.len()).collect();
    order.sort_by(|&i, &j| radii[i].total_cmp(&radii[j]));
    let (i1, i2) = (order[0], order[1]);
    let (r1, r2) = (radii[i1], radii[i2]);
    let limit = (r2 * integrals[i1] - r1 * integrals[i2]) / (r2 - r1);
    // b(0) from hemispherical means on the two innermost rings, extrapolated linearly in r.
    let ring_mean = |i: usize| {
        let (mut acc, mut wsum) = (0.0, 0.0);
        for j in 0..mesh.axis2().len() {
            let (lo, hi) = mesh.axis2_cell(j);
            let w = lo.cos() - hi.cos();
            acc += w * b[mesh.index(i, j)];
            wsum += w;
        }
        acc / wsum
    };
    let b0 = 1.5 * ring_mean(0) - 0.5 * ring_mean(1);
    let predicted = -(nf - 1.0) * (nf - 2.0) * sphere_area(n - 1) * a * b0;
    Ok(SingularLimit { radii: radii.to_vec(), integrals, limit, predicted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Resolution};

    fn half_ball(r: f64, n: usize) -> Mesh {
        build_mesh(DomainKind::AxiHalfBall { radius: r }, Resolution::grid(n, n)).unwrap()
    }

    #[test]
    fn position_field_invariants() {
        for m in [
            build_mesh(DomainKind::AxiBall3, Resolution::grid(12, 12)).unwrap(),
            build_mesh(DomainKind::RadialBall { n: 5 }, Resolution::radial(12)).unwrap(),
            half_ball(1.0, 10),
        ] {
            let x = VariationField::position(&m);
            for (d, j) in x.divergence.iter().zip(&x.jacobian) {
                assert!((d - m.dim() as f64).abs() < 1e-10);
                assert_eq!(*j, [[1.0, 0.0], [0.0, 1.0]]);
            }
            let g = VariationField::from_gradient(&m, &m.sample(|p| 0.5 * (p[0] * p[0] + p[1] * p[1]))).unwrap();
            let interior = (0..m.len()).filter(|&k| {
                let n2 = m.axis2().len();
                let (i, j) = (k / n2, k % n2);
                i > 1 && i + 2 < m.axis1().len() && (n2 == 1 || (j > 1 && j + 2 < n2))
            });
            for k in interior {
                assert!((g.divergence[k] - m.dim() as f64).abs() < 1e-8, "{k} {}", g.divergence[k]);
            }
        }
    }

    #[test]
    fn zero_field_gives_zero() {
        let m = build_mesh(DomainKind::AxiBall3, Resolution::grid(12, 12)).unwrap();
        let d = CurvatureData::constant(&m, -6.0, 1.0, 0.0, 1.0).unwrap();
        let u = m.sample(|p| 1.0 + p[1]);
        let r = domain_variation_residual(&m, &d, &u, 5.0, &VariationField::zero(&m)).unwrap();
        assert_eq!(r.residual, 0.0);
        let b = m.boundary();
        let zero = bp_form(&m, b, None, &m.trace(&u), &vec![[0.0; 2]; b.len()]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fundamental_solution_form_vanishes() {
        let m = half_ball(1.0, 16);
        let outer = m.outer().unwrap();
        for a in [0.5, 1.0, 3.0] {
            let g: Vec<f64> = outer.nodes.iter().map(|&k| a * m.nodes()[k][0].hypot(m.nodes()[k][1]).recip()).collect();
            let f: Vec<[f64; 2]> = outer
                .nodes
                .iter()
                .map(|&k| {
                    let x = m.nodes()[k];
                    let r = x[0].hypot(x[1]);
                    [-a * x[0] / r.powi(3), -a * x[1] / r.powi(3)]
                })
                .collect();
            let b = bp_form(&m, outer, None, &g, &f).unwrap();
            assert!(b.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn pohozaev_trivial_cases() {
        let m = half_ball(1.0, 12);
        let d = CurvatureData::constant(&m, -8.0, 1.0, 0.0, 0.0).unwrap();
        let z = vec![0.0; m.len()];
        assert_eq!(pohozaev_p(&m, &d, &z, 5.0, 1.0).unwrap(), 0.0);
        assert!(matches!(pohozaev_p(&m, &d, &z, 5.0, 2.0), Err(Error::Domain(_))));
        // Critical exponent: the bulk K coefficient n/(p+1) - (n-2)/2 vanishes.
        let one = vec![1.0; m.len()];
        let full = pohozaev_p(&m, &d, &one, 5.0, 1.0).unwrap();
        let hemi = -1.0 / 6.0 * -8.0 * 2.0 * PI;
        assert!((full - hemi).abs() < 1e-10);
    }

    #[test]
    fn singular_limit_constant_b() {
        let m = half_ball(1.0, 64);
        let b = vec![2.0; m.len()];
        let s = singular_limit_check(&m, 1.0, &b, &[0.4, 0.2, 0.1]).unwrap();
        assert!((s.predicted + 16.0 * PI).abs() < 1e-9);
        assert!((s.limit / s.predicted - 1.0).abs() < 0.02);
        assert!(matches!(singular_limit_check(&m, 1.0, &b, &[0.01, 0.02]), Err(Error::Resolution(_))));
        let zero = singular_limit_check(&m, 1.0, &vec![0.0; m.len()], &[0.4, 0.2]).unwrap();
        assert!(zero.integrals.iter().all(|v| v.abs() < 1e-10));
    }
}
