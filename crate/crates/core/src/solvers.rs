//! Existence mechanisms as algorithms: energy minimisation at the critical exponent,
//! damped Newton for fixed `(p, kappa)`, a string-method mountain pass and
//! subcritical continuation.
//!
//! Every iterate is projected to `|u|`; the energy only depends on `|u|`, so the
//! projection never increases it.

use serde::{Deserialize, Serialize};

use crate::critical_exponent;
use crate::energy::{el_residual, energy, EnergyBreakdown, Hessian};
use crate::error::{check_len, Error, Result};
use crate::fields::{dn_map, random_smooth_field, CurvatureData};
use crate::geometry::{DomainKind, Mesh};
use crate::linalg::{dot, minres_with, pcg_with, BandedCholesky, LinearOperator};
use crate::profiles::{lift, mu_opt, TestFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Threshold on the larger of the interior and boundary residual norms.
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub shrink: f64,
    pub path_nodes: usize,
    pub schedule: Vec<f64>,
    /// Explicit kappa values; empty means `{1, 1 + 1/(i+2), 1 - 1/(i+2)}` at step `i`.
    pub kappa_scan: Vec<f64>,
    pub positivity: bool,
    pub blowup_ceiling: f64,
    pub linear_rtol: f64,
    pub linear_max_iter: usize,
    /// A converged state with `max u` below this fraction of the initial maximum is degenerate.
    pub trivial_ratio: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 500,
            grad_tol: 1e-7,
            armijo_c1: 1e-4,
            shrink: 0.5,
            path_nodes: 17,
            schedule: vec![3.0, 3.5, 4.0, 4.5, 4.8, 4.9, 4.95],
            kappa_scan: Vec::new(),
            positivity: true,
            blowup_ceiling: 1e6,
            linear_rtol: 1e-10,
            linear_max_iter: 4000,
            trivial_ratio: 1e-2,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.grad_tol > 0.0) {
            return bad(format!("grad_tol must be positive (got {})", self.grad_tol));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("backtracking parameters must lie in (0, 1)".into());
        }
        if self.path_nodes < 3 {
            return bad("path_nodes must be at least 3".into());
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        let pc = critical_exponent(n);
        if self.schedule.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("schedule must be strictly increasing".into());
        }
        if let Some(&last) = self.schedule.last() {
            if !(last < pc) || !(self.schedule[0] > 1.0) {
                return bad(format!("schedule must lie in (1, {pc})"));
            }
        }
        if self.kappa_scan.iter().any(|k| !(*k > 0.0)) {
            return bad("kappa values must be positive".into());
        }
        Ok(())
    }

    pub fn kappa_candidates(&self, step: usize) -> Vec<f64> {
        if !self.kappa_scan.is_empty() {
            return self.kappa_scan.clone();
        }
        let d = 1.0 / (step as f64 + 2.0);
        vec![1.0, 1.0 + d, 1.0 - d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    NotConverged,
    NonCoercive,
    Degenerate,
    BlowUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub energy: f64,
    pub residual: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    #[serde(skip)]
    pub u: Vec<f64>,
    pub energy: EnergyBreakdown,
    pub interior_residual: f64,
    pub boundary_residual: f64,
    pub iterations: usize,
    pub positive: bool,
    pub min_u: f64,
    pub max_u: f64,
    pub converged: bool,
    pub status: SolveStatus,
    pub trace: Vec<TraceRow>,
    pub notes: Vec<String>,
}

impl SolveResult {
    pub fn residual(&self) -> f64 {
        self.interior_residual.max(self.boundary_residual)
    }
}

fn min_max(u: &[f64]) -> (f64, f64) {
    u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

fn project(u: &mut [f64], config: &SolverConfig) {
    if config.positivity {
        for v in u.iter_mut() {
            *v = v.abs();
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    mesh: &Mesh,
    data: &CurvatureData,
    u: Vec<f64>,
    p: f64,
    kappa: f64,
    iterations: usize,
    trace: Vec<TraceRow>,
    status: SolveStatus,
    notes: Vec<String>,
    config: &SolverConfig,
) -> Result<SolveResult> {
    let e = energy(mesh, data, &u, p, kappa)?;
    let r = el_residual(mesh, data, &u, p, kappa)?;
    let (min_u, max_u) = min_max(&u);
    let converged = r.norm() <= config.grad_tol && max_u.is_finite();
    let status = match status {
        SolveStatus::Converged if !converged => SolveStatus::NotConverged,
        s => s,
    };
    Ok(SolveResult {
        u,
        energy: e,
        interior_residual: r.interior_norm,
        boundary_residual: r.boundary_norm,
        iterations,
        positive: min_u > 0.0 && status != SolveStatus::Degenerate,
        min_u,
        max_u,
        converged,
        status,
        trace,
        notes,
    })
}

/// `-M^{-1} g` for the Sobolev metric `M = C_n L + V`.
fn sobolev_direction(metric: &BandedCholesky, g: &[f64]) -> Vec<f64> {
    let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut d = vec![0.0; g.len()];
    metric.solve(&rhs, &mut d);
    d
}

fn metric_factor(mesh: &Mesh, n: usize) -> Result<BandedCholesky> {
    Hessian::metric(mesh, n, 1.0).absolute_factor()
}

fn newton_direction(h: &Hessian, g: &[f64], config: &SolverConfig, allow_indefinite: bool) -> Result<Option<Vec<f64>>> {
    let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
    let pre = h.absolute_factor()?;
    let mut d = vec![0.0; g.len()];
    let st = pcg_with(h, &pre, &rhs, &mut d, config.linear_rtol, config.linear_max_iter);
    if st.converged && !st.negative_curvature {
        return Ok(Some(d));
    }
    if !allow_indefinite {
        return Ok(None);
    }
    let mut d = vec![0.0; g.len()];
    let st = minres_with(h, &pre, &rhs, &mut d, config.linear_rtol, config.linear_max_iter);
    Ok((st.converged || st.relative_residual < 1e-3).then_some(d))
}

fn axpy_projected(u: &[f64], alpha: f64, d: &[f64], config: &SolverConfig) -> Vec<f64> {
    let mut t: Vec<f64> = u.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
    project(&mut t, config);
    t
}

/// Largest relative drop from the maximum node to a neighbour and the ratio of the
/// maximum to the boundary mean.
fn concentration(mesh: &Mesh, u: &[f64]) -> (f64, f64) {
    let (k, umax) = u.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    let mut drop: f64 = 0.0;
    for e in mesh.edges() {
        let other = if e.a == k {
            e.b
        } else if e.b == k {
            e.a
        } else {
            continue;
        };
        drop = drop.max((umax - u[other]) / umax.abs().max(1e-300));
    }
    let b = mesh.boundary();
    let area: f64 = b.weights.iter().sum();
    let mean: f64 = b.nodes.iter().zip(&b.weights).map(|(&k, w)| u[k].abs() * w).sum::<f64>() / area;
    (drop, umax / mean.max(1e-300))
}

fn is_concentrated(mesh: &Mesh, u: &[f64]) -> bool {
    let (drop, ratio) = concentration(mesh, u);
    drop >= 0.5 || ratio >= 10.0
}

/// Constant `eps = 2^-k` with the lowest negative energy at the critical exponent.
pub fn default_initial(mesh: &Mesh, data: &CurvatureData) -> Result<Vec<f64>> {
    let p = critical_exponent(data.n);
    let mut best: Option<(f64, f64)> = None;
    for k in 0..40 {
        let eps = 0.5f64.powi(k);
        let e = energy(mesh, data, &vec![eps; mesh.len()], p, 1.0)?.total;
        if e < 0.0 && best.is_none_or(|(_, b)| e < b) {
            best = Some((eps, e));
        }
    }
    best.map(|(eps, _)| vec![eps; mesh.len()])
        .ok_or_else(|| Error::Config("no constant initial state with negative energy".into()))
}

/// Descent on the discrete energy at the critical exponent with `kappa = 1`.
///
/// Directions are Newton steps while the Hessian is positive definite and Sobolev
/// gradients otherwise, both with Armijo backtracking. Runaway growth or a converged
/// grid-scale spike with negative energy is reported as [`SolveStatus::NonCoercive`].
pub fn minimize_energy(mesh: &Mesh, data: &CurvatureData, config: &SolverConfig, u0: Option<&[f64]>) -> Result<SolveResult> {
    config.validate(data.n)?;
    let p = critical_exponent(data.n);
    let kappa = 1.0;
    let mut u = match u0 {
        Some(v) => {
            check_len(mesh.len(), v.len())?;
            v.to_vec()
        }
        None => default_initial(mesh, data)?,
    };
    project(&mut u, config);
    let mut notes = Vec::new();
    let dbar = dn_map(data, mesh)?.upper_bound();
    if dbar >= 1.0 {
        notes.push(format!("max D_n = {dbar:.4} >= 1: energy may be unbounded below"));
    }
    let metric = metric_factor(mesh, data.n)?;
    let mut e = energy(mesh, data, &u, p, kappa)?.total;
    let mut trace = Vec::new();
    let mut status = SolveStatus::NotConverged;
    let mut step = 0.0;
    let mut it = 0;
    while it < config.max_iters {
        let res = el_residual(mesh, data, &u, p, kappa)?;
        trace.push(TraceRow { iteration: it, energy: e, residual: res.norm(), step });
        if res.norm() <= config.grad_tol {
            status = SolveStatus::Converged;
            break;
        }
        let (_, umax) = min_max(&u);
        if !(umax <= config.blowup_ceiling) {
            status = SolveStatus::NonCoercive;
            break;
        }
        it += 1;
        let g = &res.gradient;
        let h = Hessian::new(mesh, data, &u, p, kappa)?;
        let newton = newton_direction(&h, g, config, false)?.filter(|d| dot(g, d) < 0.0);
        let mut accepted = None;
        let mut candidates = Vec::new();
        if let Some(d) = newton {
            candidates.push(d);
        }
        candidates.push(sobolev_direction(&metric, g));
        for (ci, d) in candidates.iter().enumerate() {
            let slope = dot(g, d);
            if !(slope < 0.0) {
                continue;
            }
            let mut alpha = 1.0;
            while alpha > 1e-14 {
                let trial = axpy_projected(&u, alpha, d, config);
                let et = energy(mesh, data, &trial, p, kappa)?.total;
                if et <= e + config.armijo_c1 * alpha * slope {
                    accepted = Some((trial, et, alpha));
                    break;
                }
                alpha *= config.shrink;
            }
            if accepted.is_none() && ci == 0 && candidates.len() == 2 {
                // rounding floor of the energy near convergence: accept a full Newton step
                // that reduces the residual
                let trial = axpy_projected(&u, 1.0, d, config);
                if el_residual(mesh, data, &trial, p, kappa)?.norm() < res.norm() {
                    let et = energy(mesh, data, &trial, p, kappa)?.total;
                    if et <= e + 1e-12 * e.abs().max(1.0) {
                        accepted = Some((trial, et, 1.0));
                    }
                }
            }
            if accepted.is_some() {
                break;
            }
        }
        match accepted {
            Some((trial, et, alpha)) => {
                u = trial;
                e = et;
                step = alpha;
            }
            None => {
                notes.push(format!("line search stalled at iteration {it}"));
                break;
            }
        }
    }
    if matches!(status, SolveStatus::Converged | SolveStatus::NotConverged) && e < 0.0 && is_concentrated(mesh, &u) {
        status = SolveStatus::NonCoercive;
        notes.push("negative energy concentrated at grid scale".into());
    }
    if status == SolveStatus::NotConverged && e < 0.0 && trace.len() >= 8 {
        let first = trace[0];
        let late = trace[3 * trace.len() / 4];
        if trace.last().is_some_and(|t| t.residual > first.residual) && late.energy - e >= 0.05 * late.energy.abs() {
            status = SolveStatus::NonCoercive;
            notes.push(format!(
                "energy still falling ({:.4e} -> {e:.4e}) while the residual grew ({:.3e} -> {:.3e})",
                late.energy,
                first.residual,
                trace.last().map_or(0.0, |t| t.residual)
            ));
        }
    }
    if status == SolveStatus::NonCoercive {
        notes.push("non-coercive regime: witness iterate stored in u".into());
    }
    finish(mesh, data, u, p, kappa, it, trace, status, notes, config)
}

/// Damped Newton on the Euler-Lagrange residual at a subcritical exponent.
pub fn solve_subcritical(
    mesh: &Mesh,
    data: &CurvatureData,
    p: f64,
    kappa: f64,
    u0: &[f64],
    config: &SolverConfig,
) -> Result<SolveResult> {
    let pc = critical_exponent(data.n);
    if !(p > 1.0 && p < pc) {
        return Err(Error::Parameter(format!("p = {p} must lie in (1, {pc})")));
    }
    config.validate(data.n)?;
    newton_solve(mesh, data, p, kappa, u0, config, config.max_iters)
}

/// Newton with PCG, MINRES on indefinite systems and Sobolev gradient steps on the
/// merit `½ Σ g_k² / V_k` as the last resort.
fn newton_solve(
    mesh: &Mesh,
    data: &CurvatureData,
    p: f64,
    kappa: f64,
    u0: &[f64],
    config: &SolverConfig,
    max_iters: usize,
) -> Result<SolveResult> {
    check_len(mesh.len(), u0.len())?;
    let mut u = u0.to_vec();
    project(&mut u, config);
    let scale0 = min_max(&u).1.abs();
    let vw = mesh.volume_weights();
    let merit = |g: &[f64]| 0.5 * g.iter().zip(vw).map(|(g, v)| g * g / v).sum::<f64>();
    let metric = metric_factor(mesh, data.n)?;
    let mut trace = Vec::new();
    let mut notes = Vec::new();
    let mut status = SolveStatus::NotConverged;
    let mut step = 0.0;
    let mut res = el_residual(mesh, data, &u, p, kappa)?;
    let mut it = 0;
    loop {
        let e = energy(mesh, data, &u, p, kappa)?.total;
        trace.push(TraceRow { iteration: it, energy: e, residual: res.norm(), step });
        if res.norm() <= config.grad_tol {
            status = SolveStatus::Converged;
            break;
        }
        if !(min_max(&u).1 <= config.blowup_ceiling) {
            status = SolveStatus::BlowUp;
            break;
        }
        if it >= max_iters {
            break;
        }
        it += 1;
        let g = &res.gradient;
        let phi = merit(g);
        let h = Hessian::new(mesh, data, &u, p, kappa)?;
        let w: Vec<f64> = g.iter().zip(vw).map(|(g, v)| g / v).collect();
        let mut grad_phi = vec![0.0; w.len()];
        h.apply(&w, &mut grad_phi);
        let mut directions = Vec::new();
        if let Some(d) = newton_direction(&h, g, config, true)? {
            directions.push(d);
        }
        directions.push(sobolev_direction(&metric, &grad_phi));
        let mut accepted = None;
        for d in &directions {
            let slope = dot(&grad_phi, d);
            if !(slope < 0.0) {
                continue;
            }
            let mut alpha = 1.0;
            while alpha > 1e-12 {
                let trial = axpy_projected(&u, alpha, d, config);
                let rt = el_residual(mesh, data, &trial, p, kappa)?;
                if merit(&rt.gradient) <= phi + config.armijo_c1 * alpha * slope {
                    accepted = Some((trial, rt, alpha));
                    break;
                }
                alpha *= config.shrink;
            }
            if accepted.is_some() {
                break;
            }
        }
        match accepted {
            Some((trial, rt, alpha)) => {
                u = trial;
                res = rt;
                step = alpha;
            }
            None => {
                notes.push(format!("line search stalled at iteration {it}"));
                break;
            }
        }
    }
    if status == SolveStatus::Converged && min_max(&u).1 <= config.trivial_ratio * scale0 {
        status = SolveStatus::Degenerate;
        notes.push("iterates decayed to the trivial solution".into());
    }
    finish(mesh, data, u, p, kappa, it, trace, status, notes, config)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierReport {
    /// H¹ radius of the sampled sphere.
    pub radius: f64,
    pub inf_energy: f64,
    pub samples: usize,
    pub detected: bool,
}

fn metric_norm(metric: &Hessian, u: &[f64]) -> f64 {
    let mut mu = vec![0.0; u.len()];
    metric.apply(u, &mut mu);
    dot(u, &mu).max(0.0).sqrt()
}

/// Samples random smooth fields rescaled to H¹ norm `radius` and records the lowest energy.
pub fn barrier_check(
    mesh: &Mesh,
    data: &CurvatureData,
    p: f64,
    kappa: f64,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<BarrierReport> {
    let metric = Hessian::metric(mesh, data.n, 1.0);
    let mut inf = f64::INFINITY;
    for i in 0..samples {
        let mut f = if i == 0 { vec![1.0; mesh.len()] } else { random_smooth_field(mesh, seed.wrapping_add(i as u64), 4) };
        let nrm = metric_norm(&metric, &f);
        if nrm == 0.0 {
            continue;
        }
        for v in f.iter_mut() {
            *v *= radius / nrm;
        }
        inf = inf.min(energy(mesh, data, &f, p, kappa)?.total);
    }
    Ok(BarrierReport { radius, inf_energy: inf, samples, detected: inf > 0.0 })
}

/// Negative-energy endpoint built from scaled test functions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Endpoint {
    #[serde(skip)]
    pub u: Vec<f64>,
    pub beta: f64,
    pub d: f64,
    pub mu: f64,
    pub scale: f64,
    /// Anchor polar angle: 0 or pi.
    pub anchor_theta: f64,
    pub energy: f64,
}

/// Searches a `(beta, D, scale)` ladder of test functions anchored at the axis pole with
/// the larger `D_n` and `mu = mu_opt`, returning the lowest-energy member with `I < 0`.
pub fn testfn_endpoint(mesh: &Mesh, data: &CurvatureData, p: f64, kappa: f64) -> Result<Endpoint> {
    if mesh.kind() != DomainKind::AxiBall3 {
        return Err(Error::Domain("test-function endpoints need the axisymmetric unit ball".into()));
    }
    let n = data.n;
    let dn = dn_map(data, mesh)?;
    let b = mesh.boundary();
    let theta = mesh.boundary_parameter();
    let (first, last) = (0, b.len() - 1);
    let (j, anchor_theta) = if dn.values[first] >= dn.values[last] {
        (if theta[first] < theta[last] { first } else { last }, 0.0)
    } else {
        (if theta[first] < theta[last] { last } else { first }, std::f64::consts::PI)
    };
    let k_p = data.k[b.nodes[j]];
    let h_p = data.h[j];
    let d_p = dn.values[j];
    let none = || Error::Solver("no negative-energy endpoint found".into());
    if !(h_p > 0.0) {
        return Err(none());
    }
    let mu = mu_opt(n, k_p, h_p);
    let anchor = lift([0.0, anchor_theta.cos()], n);
    let dmin = 1.0 / ((n * (n - 1)) as f64).sqrt();
    let h_min = mesh.min_spacing();
    let betas = [0.4, 0.3, 0.2, 0.15, 0.1, 0.07, 0.05, 0.035, 0.025];
    let d_fracs = [0.005, 0.01, 0.02, 0.035, 0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0];
    let scales: Vec<f64> = (0..=30).map(|k| 0.5 + 0.05 * k as f64).collect();
    let mut best: Option<Endpoint> = None;
    for &beta in betas.iter().filter(|&&b| b >= 1.5 * h_min) {
        for &f in &d_fracs {
            let d = dmin + f * (d_p.max(dmin * 1.05) - dmin);
            let Ok(tf) = TestFunction::new(n, beta, d, mu, anchor.clone()) else { continue };
            let base: Vec<f64> = mesh.nodes().iter().map(|&x| tf.value(&lift(x, n)).unwrap_or(0.0)).collect();
            for &s in &scales {
                let u: Vec<f64> = base.iter().map(|v| s * v).collect();
                let e = energy(mesh, data, &u, p, kappa)?.total;
                if e < 0.0 && best.as_ref().is_none_or(|b| e < b.energy) {
                    best = Some(Endpoint { u, beta, d, mu, scale: s, anchor_theta, energy: e });
                }
            }
        }
    }
    best.ok_or_else(none)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRow {
    pub d: f64,
    pub eps_d: f64,
    pub energy: f64,
    /// Leading-order prediction `gamma_n mu^{n-2} |S^{n-2}| (n-2) P(mu) eps_D^{-(n-1)}`.
    pub leading: f64,
    pub ratio: f64,
    /// Concentration scale `beta eps_D` below two grid spacings.
    pub under_resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFnScan {
    pub beta: f64,
    pub mu: f64,
    pub k_p: f64,
    pub h_p: f64,
    pub dn_p: f64,
    pub p_of_mu: f64,
    pub rows: Vec<ScanRow>,
    pub decreasing: bool,
    pub negative_at_end: bool,
    pub any_negative: bool,
    pub warnings: Vec<String>,
}

/// Critical-exponent energy of `mu^{(n-2)/2} phi_{beta,D}` anchored at the north pole,
/// along a decreasing `D` ladder. `mu` defaults to `mu_opt` at the anchor.
pub fn testfn_energy_scan(mesh: &Mesh, data: &CurvatureData, beta: f64, mu: Option<f64>, ladder: &[f64]) -> Result<TestFnScan> {
    if mesh.kind() != DomainKind::AxiBall3 {
        return Err(Error::Domain("the test-function scan runs on the axisymmetric unit ball".into()));
    }
    if ladder.is_empty() || ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Parameter("D ladder must be non-empty and strictly decreasing".into()));
    }
    let n = data.n;
    let theta = mesh.boundary_parameter();
    let j = (0..theta.len()).min_by(|&a, &b| theta[a].total_cmp(&theta[b])).unwrap_or(0);
    let k_p = data.k[mesh.boundary().nodes[j]];
    let h_p = data.h[j];
    let dn_p = dn_map(data, mesh)?.values[j];
    let mu = match mu {
        Some(m) => m,
        None => mu_opt(n, k_p, h_p),
    };
    let mut warnings = Vec::new();
    if !(dn_p > 1.0) {
        warnings.push(format!("D_n at the anchor is {dn_p:.4} <= 1: no negative leading term"));
    }
    let h = mesh.max_spacing();
    if beta < 10.0 * h {
        warnings.push(format!("beta = {beta} is below 10 grid spacings ({:.4})", 10.0 * h));
    }
    let anchor = lift([0.0, 1.0], n);
    let p = critical_exponent(n);
    let mut rows = Vec::new();
    for &d in ladder {
        let tf = TestFunction::new(n, beta, d, mu, anchor.clone())?;
        let u = mesh.nodes().iter().map(|&x| tf.value(&lift(x, n))).collect::<Result<Vec<f64>>>()?;
        let e = energy(mesh, data, &u, p, 1.0)?.total;
        let leading = crate::profiles::leading_energy(n, k_p, h_p, mu, d);
        rows.push(ScanRow {
            d,
            eps_d: tf.eps_d(),
            energy: e,
            leading,
            ratio: e / leading,
            under_resolved: beta * tf.eps_d() < 2.0 * h,
        });
    }
    let decreasing = rows.windows(2).all(|w| w[1].energy < w[0].energy);
    let negative_at_end = rows.last().is_some_and(|r| r.energy < 0.0);
    let any_negative = rows.iter().any(|r| r.energy < 0.0);
    Ok(TestFnScan {
        beta,
        mu,
        k_p,
        h_p,
        dn_p,
        p_of_mu: crate::profiles::p_poly(n, k_p, h_p, mu),
        rows,
        decreasing,
        negative_at_end,
        any_negative,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MountainPass {
    pub result: SolveResult,
    pub barrier: BarrierReport,
    pub initial_path: Vec<f64>,
    pub final_path: Vec<f64>,
    pub initial_max: f64,
    pub string_iterations: usize,
    pub polish_attempts: usize,
}

fn equidistribute(path: &mut [Vec<f64>], metric: &Hessian) {
    let m = path.len();
    let mut s = vec![0.0; m];
    for i in 1..m {
        let d: Vec<f64> = path[i].iter().zip(&path[i - 1]).map(|(a, b)| a - b).collect();
        s[i] = s[i - 1] + metric_norm(metric, &d);
    }
    let total = s[m - 1];
    if !(total > 0.0) {
        return;
    }
    let old: Vec<Vec<f64>> = path.to_vec();
    let mut seg = 0;
    for (k, node) in path.iter_mut().enumerate().take(m - 1).skip(1) {
        let t = total * k as f64 / (m - 1) as f64;
        while seg + 2 < m && s[seg + 1] < t {
            seg += 1;
        }
        let len = s[seg + 1] - s[seg];
        let f = if len > 0.0 { ((t - s[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        for (x, (a, b)) in node.iter_mut().zip(old[seg].iter().zip(&old[seg + 1])) {
            *x = (1.0 - f) * a + f * b;
        }
    }
}

/// String-method mountain pass between `0` and a negative-energy endpoint.
///
/// Interior path nodes take backtracked Sobolev gradient steps with H¹
/// re-equidistribution; the highest node, refined along its adjacent segments, seeds a
/// Newton polish that must reach `grad_tol` with a positive, positive-energy state.
pub fn mountain_pass(
    mesh: &Mesh,
    data: &CurvatureData,
    p: f64,
    kappa: f64,
    endpoint: &[f64],
    config: &SolverConfig,
) -> Result<MountainPass> {
    config.validate(data.n)?;
    check_len(mesh.len(), endpoint.len())?;
    let e_end = energy(mesh, data, endpoint, p, kappa)?.total;
    if !(e_end < 0.0) {
        return Err(Error::Solver("no negative-energy endpoint found".into()));
    }
    let metric = Hessian::metric(mesh, data.n, 1.0);
    let factor = metric.absolute_factor()?;
    let end_norm = metric_norm(&metric, endpoint);
    let mut barrier = None;
    for k in 2..12 {
        let rep = barrier_check(mesh, data, p, kappa, end_norm * 0.5f64.powi(k), 32, 0x5eed)?;
        let found = rep.detected;
        barrier = Some(rep);
        if found {
            break;
        }
    }
    let barrier = barrier.expect("barrier ladder is non-empty");
    let m = config.path_nodes;
    let mut path: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let t = i as f64 / (m - 1) as f64;
            endpoint.iter().map(|v| t * v).collect()
        })
        .collect();
    let eval = |u: &[f64]| energy(mesh, data, u, p, kappa).map(|e| e.total);
    let mut energies: Vec<f64> = path.iter().map(|u| eval(u)).collect::<Result<_>>()?;
    let initial_path = energies.clone();
    let initial_max = initial_path.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut tau = vec![1.0; m];
    let mut polish_attempts = 0;
    let mut last_failure = String::from("string iteration budget exhausted");
    let polish_every = 25;
    for iter in 1..=config.max_iters {
        for i in 1..m - 1 {
            let g = crate::energy::energy_gradient(mesh, data, &path[i], p, kappa)?;
            let d = sobolev_direction(&factor, &g);
            let slope = dot(&g, &d);
            if !(slope < 0.0) {
                continue;
            }
            let mut t = tau[i];
            for _ in 0..30 {
                let trial = axpy_projected(&path[i], t, &d, config);
                let et = eval(&trial)?;
                if et <= energies[i] + config.armijo_c1 * t * slope {
                    path[i] = trial;
                    energies[i] = et;
                    tau[i] = (t * 1.5).min(1e3);
                    break;
                }
                t *= config.shrink;
                tau[i] = t;
            }
        }
        equidistribute(&mut path, &metric);
        for i in 1..m - 1 {
            energies[i] = eval(&path[i])?;
        }
        let (c, emax) = energies.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, &e)| if e > a.1 { (i, e) } else { a });
        if c == 0 || c == m - 1 {
            return Err(Error::Solver(format!("mountain-pass path collapsed (max at node {c}, energy {emax})")));
        }
        if iter % polish_every != 0 {
            continue;
        }
        polish_attempts += 1;
        let mut seed = path[c].clone();
        let mut seed_e = emax;
        for (a, b) in [(c - 1, c), (c, c + 1)] {
            for s in 1..8 {
                let f = s as f64 / 8.0;
                let cand: Vec<f64> = path[a].iter().zip(&path[b]).map(|(x, y)| (1.0 - f) * x + f * y).collect();
                let ec = eval(&cand)?;
                if ec > seed_e {
                    seed = cand;
                    seed_e = ec;
                }
            }
        }
        let mut polish = newton_solve(mesh, data, p, kappa, &seed, config, 60)?;
        if polish.converged && polish.positive && polish.energy.total > 0.0 {
            polish.iterations += iter;
            polish.notes.push(format!("string iterations {iter}, polish attempts {polish_attempts}"));
            return Ok(MountainPass {
                result: polish,
                barrier,
                initial_path,
                final_path: energies,
                initial_max,
                string_iterations: iter,
                polish_attempts,
            });
        }
        last_failure = format!(
            "polish from node {c} ended with residual {:.3e}, energy {:.4}, min u {:.3e}",
            polish.residual(),
            polish.energy.total,
            polish.min_u
        );
    }
    Err(Error::Solver(format!("mountain pass did not converge: {last_failure}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepMethod {
    WarmStart,
    MountainPass,
    Forced,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuationStep {
    pub index: usize,
    pub p: f64,
    pub kappa: f64,
    pub method: StepMethod,
    pub result: Option<SolveResult>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Continuation {
    pub steps: Vec<ContinuationStep>,
    /// Schedule index at which `max u` passed the blow-up ceiling.
    pub blowup_at: Option<usize>,
}

fn acceptable(r: &SolveResult) -> bool {
    r.converged && r.positive && r.energy.total > 0.0
}

/// Subcritical continuation along `config.schedule`.
///
/// Each step is warm-started by Newton from the previous solution; when that fails
/// the mountain pass runs from a fresh test-function endpoint for each `kappa` of the
/// scan and the first acceptable run is kept.
pub fn continuation(mesh: &Mesh, data: &CurvatureData, config: &SolverConfig) -> Result<Continuation> {
    config.validate(data.n)?;
    let mut steps = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    let mut blowup_at = None;
    for (i, &p) in config.schedule.iter().enumerate() {
        let mut step = None;
        let mut failures = Vec::new();
        if let Some(u0) = &prev {
            let r = newton_solve(mesh, data, p, 1.0, u0, config, 60)?;
            if acceptable(&r) || r.status == SolveStatus::BlowUp {
                step = Some(ContinuationStep {
                    index: i,
                    p,
                    kappa: 1.0,
                    method: StepMethod::WarmStart,
                    result: Some(r),
                    failure: None,
                });
            } else {
                failures.push(format!("warm start: residual {:.3e}, status {:?}", r.residual(), r.status));
            }
        }
        if step.is_none() {
            for kappa in config.kappa_candidates(i) {
                let run = testfn_endpoint(mesh, data, p, kappa).and_then(|e| mountain_pass(mesh, data, p, kappa, &e.u, config));
                match run {
                    Ok(mp) => {
                        step = Some(ContinuationStep {
                            index: i,
                            p,
                            kappa,
                            method: StepMethod::MountainPass,
                            result: Some(mp.result),
                            failure: None,
                        });
                        break;
                    }
                    Err(e) => failures.push(format!("kappa {kappa}: {e}")),
                }
            }
        }
        let step = step.unwrap_or(ContinuationStep {
            index: i,
            p,
            kappa: 1.0,
            method: StepMethod::MountainPass,
            result: None,
            failure: Some(failures.join("; ")),
        });
        let blown = step.result.as_ref().is_some_and(|r| !(r.max_u <= config.blowup_ceiling));
        if let Some(r) = &step.result {
            prev = Some(r.u.clone());
        }
        steps.push(step);
        if blown {
            blowup_at = Some(i);
            break;
        }
    }
    Ok(Continuation { steps, blowup_at })
}

/// Continuation along prescribed data with explicit warm starts at a fixed exponent,
/// e.g. the hyperbolic-ball family with `rho` decreasing to 1.
pub fn forced_ladder(mesh: &Mesh, ladder: &[(CurvatureData, Vec<f64>)], p: f64, config: &SolverConfig) -> Result<Continuation> {
    let mut steps = Vec::new();
    let mut blowup_at = None;
    for (i, (data, u0)) in ladder.iter().enumerate() {
        let r = solve_subcritical(mesh, data, p, 1.0, u0, config)?;
        let blown = !(r.max_u <= config.blowup_ceiling);
        steps.push(ContinuationStep { index: i, p, kappa: 1.0, method: StepMethod::Forced, result: Some(r), failure: None });
        if blown {
            blowup_at = Some(i);
            break;
        }
    }
    Ok(Continuation { steps, blowup_at })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Resolution};
    use crate::linalg::norm;
    use crate::profiles::Hyperball;

    fn ball(n: usize) -> Mesh {
        build_mesh(DomainKind::AxiBall3, Resolution::grid(n, n)).unwrap()
    }

    #[test]
    fn constant_root_with_negative_background() {
        let m = ball(16);
        let data = CurvatureData::constant(&m, -6.0, 0.0, -1.0, 0.0).unwrap();
        let r = solve_subcritical(&m, &data, 3.0, 1.0, &vec![1.0; m.len()], &SolverConfig::default()).unwrap();
        assert!(r.converged && r.positive, "{:?}", r.status);
        let root = (1.0f64 / 6.0).sqrt();
        assert!((r.min_u - root).abs() < 1e-8 && (r.max_u - root).abs() < 1e-8);
    }

    #[test]
    fn zero_data_decays_to_trivial() {
        let m = ball(12);
        let data = CurvatureData::constant(&m, -6.0, 0.0, 0.0, 0.0).unwrap();
        let r = solve_subcritical(&m, &data, 3.0, 1.0, &vec![1.0; m.len()], &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Degenerate);
        assert!(!r.positive);
        assert!(r.max_u < 1e-2);
    }

    #[test]
    fn hyperball_warm_start_is_fast_and_stable() {
        let m = ball(32);
        let hb = Hyperball::new(3, 2.0).unwrap();
        let data = CurvatureData::constant(&m, -6.0, hb.h_rho(), 0.0, 1.0).unwrap();
        let u0 = Profile::Hyperball(hb).sample(&m).unwrap();
        let cfg = SolverConfig::default();
        let p = 5.0 - 1e-6;
        let r = solve_subcritical(&m, &data, p, 1.0, &u0, &cfg).unwrap();
        assert!(r.converged && r.positive);
        assert!(r.iterations <= 3, "{} iterations", r.iterations);
        let again = solve_subcritical(&m, &data, p, 1.0, &r.u, &cfg).unwrap();
        let diff: Vec<f64> = again.u.iter().zip(&r.u).zip(m.volume_weights()).map(|((a, b), v)| (a - b) * v.sqrt()).collect();
        assert!(norm(&diff) <= 10.0 * cfg.grad_tol);
    }

    use crate::profiles::Profile;

    #[test]
    fn minimizer_with_negative_background_is_constant() {
        let m = ball(16);
        let data = CurvatureData::constant(&m, -6.0, 0.0, -1.0, 0.0).unwrap();
        let r = minimize_energy(&m, &data, &SolverConfig::default(), None).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert!(r.positive && r.energy.total < 0.0);
        let root = 6f64.powf(-0.25);
        assert!((r.max_u - root).abs() < 1e-7 && (r.min_u - root).abs() < 1e-7);
        for w in r.trace.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-12);
        }
    }

    #[test]
    fn no_endpoint_without_positive_mean_curvature() {
        let m = ball(16);
        let data = CurvatureData::constant(&m, -6.0, 0.0, 0.0, 1.0).unwrap();
        let err = testfn_endpoint(&m, &data, 4.5, 1.0).unwrap_err();
        assert!(err.to_string().contains("no negative-energy endpoint"));
        let err = mountain_pass(&m, &data, 4.5, 1.0, &vec![0.1; m.len()], &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Solver(_)));
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::default();
        assert!(c.validate(3).is_ok());
        c.schedule = vec![3.0, 2.0];
        assert!(c.validate(3).is_err());
        c.schedule = vec![3.0, 5.0];
        assert!(c.validate(3).is_err());
        c = SolverConfig { grad_tol: 0.0, ..SolverConfig::default() };
        assert!(c.validate(3).is_err());
        assert_eq!(SolverConfig::default().kappa_candidates(0), vec![1.0, 1.5, 0.5]);
    }
}
