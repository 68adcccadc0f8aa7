//! Blow-up instruments for solution sequences: singular-set estimates, rescaled
//! profiles and fits, radial averages, Harnack ratios, measure ratios, capacity
//! integrals and the tangential-gradient score.
//!
//! Centres are meridional points on the primary boundary. Rescaled samples live in a
//! local frame `(y_t, y_n)`: tangential along the meridian and depth along the inward
//! normal.

use serde::{Deserialize, Serialize};

use crate::critical_exponent;
use crate::energy::dirichlet_integral;
use crate::error::{check_len, Error, Result};
use crate::fields::{dn_map, CurvatureData, DnMap};
use crate::geometry::{gradient, pairwise_sum, surface_integral, volume_integral, DomainKind, Mesh};
use crate::profiles::{lift, Bubble, Horo};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularEstimate {
    pub threshold: f64,
    /// Indices into the boundary node list.
    pub nodes: Vec<usize>,
    pub dn_values: Vec<f64>,
    /// Fraction of the nodes with `D_n >= 1 - band`; 1 for an empty set.
    pub containment: f64,
}

pub fn singular_set_estimate(u: &[f64], mesh: &Mesh, dn: &DnMap, threshold: f64, band: f64) -> Result<SingularEstimate> {
    check_len(mesh.len(), u.len())?;
    if !(threshold > 0.0) {
        return Err(Error::Parameter(format!("threshold must be positive (got {threshold})")));
    }
    let b = mesh.boundary();
    let nodes: Vec<usize> = (0..b.len()).filter(|&j| u[b.nodes[j]] >= threshold).collect();
    let dn_values: Vec<f64> = nodes.iter().map(|&j| dn.values[j]).collect();
    let inside = dn_values.iter().filter(|&&d| d >= 1.0 - band).count();
    let containment = if nodes.is_empty() { 1.0 } else { inside as f64 / nodes.len() as f64 };
    Ok(SingularEstimate { threshold, nodes, dn_values, containment })
}

/// Point, inward normal and meridional tangent at a boundary centre, in `R^3`.
fn frame(mesh: &Mesh, center: [f64; 2]) -> Result<([f64; 3], [f64; 3], [f64; 3])> {
    let c = [center[0], 0.0, center[1]];
    match mesh.kind() {
        DomainKind::AxiHalfBox { .. } | DomainKind::AxiHalfBall { .. } => {
            if center[1].abs() > 1e-9 {
                return Err(Error::Domain(format!("centre {center:?} is not on the flat boundary")));
            }
            Ok((c, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]))
        }
        DomainKind::AxiBall3 | DomainKind::RadialBall { .. } => {
            let r = center[0].hypot(center[1]);
            if (r - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("centre {center:?} is not on the unit sphere")));
            }
            Ok((c, [-c[0], 0.0, -c[2]], [c[2], 0.0, -c[0]]))
        }
    }
}

fn at(c: [f64; 3], a: f64, e1: [f64; 3], b: f64, e2: [f64; 3]) -> [f64; 3] {
    [c[0] + a * e1[0] + b * e2[0], c[1] + a * e1[1] + b * e2[1], c[2] + a * e1[2] + b * e2[2]]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RescaledPatch {
    pub delta: f64,
    /// Patch radius in rescaled units.
    pub radius: f64,
    /// `(y_t, y_n)` sample positions.
    pub points: Vec<[f64; 2]>,
    pub values: Vec<f64>,
    /// Some samples fell outside the domain and were dropped.
    pub clipped: bool,
}

/// Samples `v(y) = delta^{2/(p-1)} u(center + delta y)` with `delta = u(center)^{-(p-1)/2}`
/// on a `(2k-1) x k` grid over `[-R, R] x [0, R]`.
pub fn rescale_profile(u: &[f64], mesh: &Mesh, center: [f64; 2], p: f64, radius: f64, k: usize) -> Result<RescaledPatch> {
    check_len(mesh.len(), u.len())?;
    let (c, nu, t) = frame(mesh, center)?;
    let uc = mesh.interpolate_3d(u, c).ok_or_else(|| Error::Domain("centre outside the mesh".into()))?;
    if !(uc > 1.0) {
        return Err(Error::Parameter(format!("rescaling needs u(center) > 1 (got {uc})")));
    }
    if k < 2 || !(radius > 0.0) {
        return Err(Error::Parameter("patch needs k >= 2 and a positive radius".into()));
    }
    let delta = uc.powf(-(p - 1.0) / 2.0);
    let scale = delta.powf(2.0 / (p - 1.0));
    let mut points = Vec::new();
    let mut values = Vec::new();
    let mut clipped = false;
    let step = radius / (k - 1) as f64;
    for a in 0..(2 * k - 1) {
        let yt = -radius + a as f64 * step;
        for b in 0..k {
            let yn = b as f64 * step;
            match mesh.interpolate_3d(u, at(c, delta * yt, t, delta * yn, nu)) {
                Some(v) => {
                    points.push([yt, yn]);
                    values.push(scale * v);
                }
                None => clipped = true,
            }
        }
    }
    Ok(RescaledPatch { delta, radius, points, values, clipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    Bubble,
    Horo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileFit {
    pub kind: FitKind,
    /// Best parameter in rescaled units.
    pub parameter: f64,
    /// Parameter in original units, `parameter * delta`.
    pub physical: f64,
    pub error: f64,
    /// Patch smaller than 20 rescaled units: a small error proves little.
    pub inconclusive: bool,
}

fn shape(kind: FitKind, param: f64, dn: f64, y: [f64; 2]) -> Result<f64> {
    let x = lift([y[0].abs(), y[1]], 3);
    match kind {
        FitKind::Bubble => {
            let b = Bubble::new(3, param, dn)?;
            Ok(b.value(&x)? / b.value(&[0.0; 3])?)
        }
        FitKind::Horo => {
            let h = Horo::new(3, param)?;
            Ok(h.value(&x)? / h.value(&[0.0; 3])?)
        }
    }
}

fn fit_error(patch: &RescaledPatch, kind: FitKind, param: f64, dn: f64) -> f64 {
    let mut num = Vec::with_capacity(patch.values.len());
    let mut den = Vec::with_capacity(patch.values.len());
    for (y, v) in patch.points.iter().zip(&patch.values) {
        let f = match shape(kind, param, dn, *y) {
            Ok(f) => f,
            Err(_) => return f64::INFINITY,
        };
        num.push((v - f) * (v - f));
        den.push(v * v);
    }
    (pairwise_sum(&num) / pairwise_sum(&den).max(1e-300)).sqrt()
}

/// Golden-section fit of the unit-normalized closed-form shape over `log(parameter)`.
///
/// `dn` fixes the bubble family (it must exceed 1); it is ignored for the horosphere.
pub fn profile_fit(patch: &RescaledPatch, kind: FitKind, dn: f64) -> Result<ProfileFit> {
    if patch.values.is_empty() {
        return Err(Error::Parameter("empty patch".into()));
    }
    if kind == FitKind::Bubble && !(dn > 1.0) {
        return Err(Error::Parameter(format!("bubble fit needs D_n > 1 (got {dn})")));
    }
    let err = |t: f64| fit_error(patch, kind, t.exp(), dn);
    let (lo, hi) = (1e-3f64.ln(), 1e4f64.ln());
    let m = 80;
    let grid: Vec<f64> = (0..=m).map(|i| lo + (hi - lo) * i as f64 / m as f64).collect();
    let errs: Vec<f64> = grid.iter().map(|&t| err(t)).collect();
    let best = (0..=m).min_by(|&a, &b| errs[a].total_cmp(&errs[b])).unwrap_or(0);
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(m)];
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (err(x1), err(x2));
    for _ in 0..80 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = err(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = err(x2);
        }
    }
    let (t, e) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    let (t, e) = if errs[best] < e { (grid[best], errs[best]) } else { (t, e) };
    Ok(ProfileFit { kind, parameter: t.exp(), physical: t.exp() * patch.delta, error: e, inconclusive: patch.radius < 20.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HatCurve {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// Interior local extrema of the sampled curve.
    pub critical_points: usize,
}

/// Mean of `u` over the part of the sphere of radius `r` about the centre inside the domain.
fn hemisphere_mean(u: &[f64], mesh: &Mesh, c: [f64; 3], nu: [f64; 3], t: [f64; 3], r: f64) -> Option<f64> {
    let t2 = [nu[1] * t[2] - nu[2] * t[1], nu[2] * t[0] - nu[0] * t[2], nu[0] * t[1] - nu[1] * t[0]];
    let (nphi, npsi) = (64, 32);
    let mut num = 0.0;
    let mut den = 0.0;
    for a in 0..nphi {
        let phi = (a as f64 + 0.5) * std::f64::consts::PI / nphi as f64;
        let w = phi.sin();
        for b in 0..npsi {
            let psi = (b as f64 + 0.5) * 2.0 * std::f64::consts::PI / npsi as f64;
            let (s, cz) = (r * phi.sin(), r * phi.cos());
            let x = [
                c[0] + s * (psi.cos() * t[0] + psi.sin() * t2[0]) + cz * nu[0],
                c[1] + s * (psi.cos() * t[1] + psi.sin() * t2[1]) + cz * nu[1],
                c[2] + s * (psi.cos() * t[2] + psi.sin() * t2[2]) + cz * nu[2],
            ];
            if let Some(v) = mesh.interpolate_3d(u, x) {
                num += w * v;
                den += w;
            } else if phi < std::f64::consts::FRAC_PI_4 {
                return None;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

fn count_extrema(values: &[f64]) -> usize {
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let slopes: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).filter(|d| d.abs() > 1e-12 * scale).collect();
    slopes.windows(2).filter(|w| w[0].signum() != w[1].signum()).count()
}

/// `u_hat(r) = r^{2/(p-1)} * mean of u over the sphere of radius r inside the domain`, with the
/// number of interior extrema.
pub fn radial_average_hat(u: &[f64], mesh: &Mesh, center: [f64; 2], p: f64, radii: &[f64]) -> Result<HatCurve> {
    check_len(mesh.len(), u.len())?;
    if radii.len() < 5 {
        return Err(Error::Resolution(format!("need at least 5 radii (got {})", radii.len())));
    }
    if radii.windows(2).any(|w| !(w[1] > w[0])) || !(radii[0] > 0.0) {
        return Err(Error::Parameter("radii must be positive and increasing".into()));
    }
    let (c, nu, t) = frame(mesh, center)?;
    let values = radii
        .iter()
        .map(|&r| {
            hemisphere_mean(u, mesh, c, nu, t, r)
                .map(|m| r.powf(2.0 / (p - 1.0)) * m)
                .ok_or_else(|| Error::Domain(format!("half-sphere of radius {r} leaves the domain")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let critical_points = count_extrema(&values);
    Ok(HatCurve { radii: radii.to_vec(), values, critical_points })
}

/// `max/min` of `u` over nodes whose rotation orbit meets the half-annulus
/// `r/2 <= |x - center| <= 2r`.
pub fn harnack_ratio(u: &[f64], mesh: &Mesh, center: [f64; 2], r: f64) -> Result<f64> {
    check_len(mesh.len(), u.len())?;
    let (c, _, _) = frame(mesh, center)?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, x) in mesh.nodes().iter().enumerate() {
        let dz = x[1] - c[2];
        let near = (x[0] - c[0]).hypot(dz);
        let far = (x[0] + c[0]).hypot(dz);
        if near <= 2.0 * r && far >= 0.5 * r {
            lo = lo.min(u[k]);
            hi = hi.max(u[k]);
        }
    }
    if !lo.is_finite() {
        return Err(Error::Domain(format!("no nodes in the annulus of radius {r}")));
    }
    if !(lo > 0.0) {
        return Err(Error::Domain("u must be positive on the annulus".into()));
    }
    Ok(hi / lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureRatios {
    /// `∫_∂ H u^{(p+3)/2}`.
    pub rho_hat: f64,
    /// `8 ∫|∇u|² / rho_hat`.
    pub ratio_grad: f64,
    /// `∫|K| u^{p+1} / rho_hat`.
    pub ratio_bulk: f64,
    /// False when `rho_hat <= 0`; the ratios are then NaN.
    pub defined: bool,
}

/// Energy-density ratios with the three-dimensional constants.
pub fn measure_ratios(u: &[f64], mesh: &Mesh, data: &CurvatureData, p: f64) -> Result<MeasureRatios> {
    if data.n != 3 {
        return Err(Error::Parameter(format!("measure ratios use n = 3 constants (got n = {})", data.n)));
    }
    check_len(mesh.len(), u.len())?;
    let tr = mesh.trace(u);
    let q = (p + 3.0) / 2.0;
    let hb: Vec<f64> = tr.iter().zip(&data.h).map(|(v, h)| h * v.abs().powf(q)).collect();
    let rho_hat = surface_integral(mesh, &hb)?;
    let bulk: Vec<f64> = u.iter().zip(&data.k).map(|(v, k)| k.abs() * v.abs().powf(p + 1.0)).collect();
    let bulk = volume_integral(mesh, &bulk)?;
    let grad = dirichlet_integral(mesh, u)?;
    if rho_hat > 0.0 {
        Ok(MeasureRatios { rho_hat, ratio_grad: 8.0 * grad / rho_hat, ratio_bulk: bulk / rho_hat, defined: true })
    } else {
        Ok(MeasureRatios { rho_hat, ratio_grad: f64::NAN, ratio_bulk: f64::NAN, defined: false })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityIntegrals {
    /// `∫_{u<=1} |∇u|² / u^{(p+3)/2}`.
    pub lower: f64,
    /// `∫_{u>1} |∇u|² / u^{p+1+delta}`.
    pub upper: f64,
}

pub fn capacity_integrals(u: &[f64], mesh: &Mesh, p: f64, delta: f64) -> Result<CapacityIntegrals> {
    check_len(mesh.len(), u.len())?;
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!("delta must be positive (got {delta})")));
    }
    if let Some(k) = u.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("u must be positive (node {k} has {})", u[k])));
    }
    let g = gradient(mesh, u)?;
    let mut lower = vec![0.0; u.len()];
    let mut upper = vec![0.0; u.len()];
    for (k, &v) in u.iter().enumerate() {
        let g2 = g[k][0] * g[k][0] + g[k][1] * g[k][1];
        if v <= 1.0 {
            lower[k] = g2 / v.powf((p + 3.0) / 2.0);
        } else {
            upper[k] = g2 / v.powf(p + 1.0 + delta);
        }
    }
    Ok(CapacityIntegrals { lower: volume_integral(mesh, &lower)?, upper: volume_integral(mesh, &upper)? })
}

/// `∫_∂ |∇^T D_n| H u^{(p+3)/2} / rho_hat`.
pub fn tangential_gradient_score(u: &[f64], mesh: &Mesh, dn: &DnMap, data: &CurvatureData, p: f64) -> Result<f64> {
    check_len(mesh.len(), u.len())?;
    let tr = mesh.trace(u);
    let q = (p + 3.0) / 2.0;
    let w: Vec<f64> = tr.iter().zip(&data.h).map(|(v, h)| h * v.abs().powf(q)).collect();
    let rho_hat = surface_integral(mesh, &w)?;
    if !(rho_hat > 0.0) {
        return Err(Error::Invariant(format!("rho_hat = {rho_hat} <= 0: score undefined")));
    }
    let num: Vec<f64> = w.iter().zip(&dn.tangential_gradient_norm).map(|(w, g)| w * g).collect();
    Ok(surface_integral(mesh, &num)? / rho_hat)
}

/// Least-squares slope of `log y` against `log x`.
pub fn observed_exponent(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Blow-up is flagged when `max u >= detect_factor * median u`.
    pub detect_factor: f64,
    pub band: f64,
    pub patch_radius: f64,
    pub patch_samples: usize,
    pub harnack_radius: f64,
    pub capacity_delta: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            detect_factor: 100.0,
            band: 0.05,
            patch_radius: 20.0,
            patch_samples: 21,
            harnack_radius: 0.2,
            capacity_delta: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupReport {
    pub p: f64,
    /// `(n+2)/(n-2) - p`.
    pub tau: f64,
    pub max_u: f64,
    pub argmax: [f64; 2],
    pub median_u: f64,
    pub detected: bool,
    pub singular: SingularEstimate,
    pub ratios: MeasureRatios,
    pub profile_fit: Option<ProfileFit>,
    pub hat_curve: Option<HatCurve>,
    pub harnack_ratio: Option<f64>,
    pub capacity: Option<CapacityIntegrals>,
    pub tangential_gradient_score: Option<f64>,
}

/// All instruments at the boundary maximum of `u`.
pub fn blowup_report(mesh: &Mesh, data: &CurvatureData, u: &[f64], p: f64, config: &DiagnosticsConfig) -> Result<BlowupReport> {
    check_len(mesh.len(), u.len())?;
    let dn = dn_map(data, mesh)?;
    let (kmax, max_u) = u.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    let mut sorted = u.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median_u = sorted[sorted.len() / 2];
    let detected = max_u >= config.detect_factor * median_u;
    let threshold = if detected { 0.5 * max_u } else { config.detect_factor * median_u.max(1e-300) };
    let singular = singular_set_estimate(u, mesh, &dn, threshold, config.band)?;
    let ratios = measure_ratios(u, mesh, data, p)?;
    let b = mesh.boundary();
    let jb = (0..b.len()).max_by(|&a, &c| u[b.nodes[a]].total_cmp(&u[b.nodes[c]])).unwrap_or(0);
    let center = mesh.nodes()[b.nodes[jb]];
    let center = match mesh.kind() {
        DomainKind::AxiBall3 | DomainKind::RadialBall { .. } => {
            let r = center[0].hypot(center[1]);
            [center[0] / r, center[1] / r]
        }
        _ => [center[0], 0.0],
    };
    let profile_fit = if detected {
        rescale_profile(u, mesh, center, p, config.patch_radius, config.patch_samples).ok().and_then(|patch| {
            let bubble = profile_fit(&patch, FitKind::Bubble, dn.values[jb].max(1.0 + 1e-9)).ok();
            let horo = profile_fit(&patch, FitKind::Horo, 1.0).ok();
            match (bubble, horo) {
                (Some(a), Some(h)) => Some(if a.error <= h.error { a } else { h }),
                (a, h) => a.or(h),
            }
        })
    } else {
        None
    };
    let radii: Vec<f64> = (1..=10).map(|i| 0.05 * i as f64).collect();
    let hat_curve = radial_average_hat(u, mesh, center, p, &radii).ok();
    let harnack_ratio = harnack_ratio(u, mesh, center, config.harnack_radius).ok();
    let capacity = capacity_integrals(u, mesh, p, config.capacity_delta).ok();
    let tangential_gradient_score = tangential_gradient_score(u, mesh, &dn, data, p).ok();
    Ok(BlowupReport {
        p,
        tau: critical_exponent(data.n) - p,
        max_u,
        argmax: mesh.nodes()[kmax],
        median_u,
        detected,
        singular,
        ratios,
        profile_fit,
        hat_curve,
        harnack_ratio,
        capacity,
        tangential_gradient_score,
    })
}
