//! One function per experiment kind.

use confcurv::diagnostics::{blowup_report, observed_exponent, BlowupReport};
use confcurv::energy::trace_inequality_gap;
use confcurv::fields::{random_smooth_field, CurvatureData};
use confcurv::geometry::{DomainKind, Mesh};
use confcurv::identities::{domain_variation_residual, pohozaev_identity_residual, VariationField};
use confcurv::profiles::{lift, mu_opt, profile_residual, Bubble, Horo, Hyperball, Profile, TestFunction};
use confcurv::solvers::{
    continuation, forced_ladder, minimize_energy, mountain_pass, testfn_endpoint, testfn_energy_scan, Continuation, SolveResult,
    SolveStatus,
};
use confcurv::{critical_exponent, Error};
use serde_json::{json, Value};

use crate::config::{Experiment, Family, InitialSpec, ProfileName, ProfileSpec, RunConfig};
use crate::output::{Artifacts, Cell, Plot, Series, Table};
use crate::CliError;

pub fn run(cfg: &RunConfig, refine: u32) -> Result<Artifacts, CliError> {
    match cfg.experiment {
        Experiment::VerifyProfiles => verify_profiles(cfg, refine),
        Experiment::CheckIdentities => check_identities(cfg, refine),
        Experiment::TraceIneq => trace_ineq(cfg, refine),
        Experiment::Minimize => minimize(cfg, refine),
        Experiment::MountainPass => mountain_pass_run(cfg, refine),
        Experiment::Continuation => continuation_run(cfg, refine),
        Experiment::TestfnEnergy => testfn_energy(cfg, refine),
        Experiment::BlowupScan => blowup_scan(cfg, refine),
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable result")
}

fn orders(errs: &[f64]) -> Vec<f64> {
    errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn profile(spec: &ProfileSpec, n: usize) -> Result<Profile, CliError> {
    Ok(match spec.name {
        ProfileName::Hyperball => Profile::Hyperball(Hyperball::new(n, spec.rho)?),
        ProfileName::Bubble => Profile::Bubble(Bubble::new(n, spec.beta, spec.dn)?),
        ProfileName::Horo => Profile::Horo(Horo::new(n, spec.alpha)?),
    })
}

fn levels(cfg: &RunConfig, refine: u32) -> Result<Vec<Mesh>, CliError> {
    let count = cfg.refinement.as_ref().map_or(3, |r| r.levels);
    if count < 2 {
        return Err(CliError::Validation("refinement.levels must be at least 2".into()));
    }
    let mut meshes = vec![cfg.domain.mesh(refine)?];
    for _ in 1..count {
        let next = meshes[meshes.len() - 1].refine();
        meshes.push(next);
    }
    Ok(meshes)
}

fn study_plot(name: &str, title: &str, series: Vec<Series>) -> Plot {
    Plot {
        name: name.into(),
        title: title.into(),
        x_label: "mesh spacing".into(),
        y_label: "residual".into(),
        log_x: true,
        log_y: true,
        series,
    }
}

fn verify_profiles(cfg: &RunConfig, refine: u32) -> Result<Artifacts, CliError> {
    let meshes = levels(cfg, refine)?;
    let pr = profile(cfg.profile.as_ref().unwrap(), meshes[0].dim())?;
    let mut t = Table::new("residuals", &["level", "nodes", "spacing", "interior", "boundary", "norm", "order"]);
    let (mut hs, mut norms, mut int, mut bdy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for m in &meshes {
        let d = pr.matched_data(m)?;
        let r = profile_residual(&pr, m, &d)?;
        hs.push(m.max_spacing());
        norms.push(r.norm());
        int.push(r.interior_norm);
        bdy.push(r.boundary_norm);
    }
    let o = orders(&norms);
    for (i, m) in meshes.iter().enumerate() {
        let order = if i == 0 { f64::NAN } else { o[i - 1] };
        t.push(vec![i.into(), m.len().into(), hs[i].into(), int[i].into(), bdy[i].into(), norms[i].into(), order.into()]);
    }
    let plot = study_plot(
        "residuals",
        &format!("{} residual under refinement", pr.name()),
        vec![Series::new("interior", &hs, &int), Series::new("boundary", &hs, &bdy), Series::new("total", &hs, &norms)],
    );
    let summary = json!({
        "profile": pr.name(),
        "meshes": meshes.iter().map(|m| to_value(&m.summary())).collect::<Vec<_>>(),
        "residuals": norms,
        "orders": o,
    });
    Ok(Artifacts { summary, tables: vec![t], plots: vec![plot], failure: None })
}

fn check_identities(cfg: &RunConfig, refine: u32) -> Result<Artifacts, CliError> {
    let meshes = levels(cfg, refine)?;
    let n = meshes[0].dim();
    let pr = profile(cfg.profile.as_ref().unwrap(), n)?;
    let p = critical_exponent(n);
    let identity = match (pr, meshes[0].kind()) {
        (Profile::Hyperball(_), DomainKind::RadialBall { .. } | DomainKind::AxiBall3) => "domain-variation",
        (Profile::Bubble(_) | Profile::Horo(_), DomainKind::AxiHalfBall { .. }) => "pohozaev",
        (_, kind) => {
            return Err(CliError::Validation(format!("no identity check for a {} profile on {kind:?}", pr.name())));
        }
    };
    let mut t =
        Table::new("identity", &["identity", "profile", "resolution", "nodes", "spacing", "lhs", "rhs", "residual", "order"]);
    let (mut hs, mut res, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for m in &meshes {
        let d = pr.matched_data(m)?;
        let u = pr.sample(m)?;
        let rep = match m.kind() {
            DomainKind::AxiHalfBall { radius } => pohozaev_identity_residual(m, &d, &u, p, (p + 1.0) / 2.0, radius)?,
            _ => domain_variation_residual(m, &d, &u, p, &VariationField::position(m))?,
        };
        hs.push(m.max_spacing());
        res.push(rep.residual);
        rows.push(rep);
    }
    let o = orders(&res);
    for (i, (m, rep)) in meshes.iter().zip(&rows).enumerate() {
        let order = if i == 0 { f64::NAN } else { o[i - 1] };
        let res = m.resolution();
        t.push(vec![
            identity.into(),
            pr.name().into(),
            format!("{}x{}", res.n1, res.n2).into(),
            m.len().into(),
            hs[i].into(),
            rep.lhs.into(),
            rep.rhs.into(),
            rep.residual.into(),
            order.into(),
        ]);
    }
    let plot =
        study_plot("identity", &format!("{identity} residual, {} profile", pr.name()), vec![Series::new(identity, &hs, &res)]);
    let summary = json!({ "identity": identity, "profile": pr.name(), "reports": to_value(&rows), "orders": o });
    Ok(Artifacts { summary, tables: vec![t], plots: vec![plot], failure: None })
}

fn trace_ineq(cfg: &RunConfig, refine: u32) -> Result<Artifacts, CliError> {
    let m = cfg.domain.mesh(refine)?;
    let d = cfg.curvature.as_ref().unwrap().data(&m)?;
    let spec = cfg.trace.clone().unwrap_or_default();
    let mut t = Table::new("trace", &["sample", "seed", "degree", "lhs", "rhs_without_c", "needed_c"]);
    let mut needed = Vec::with_capacity(spec.samples);
    for s in 0..spec.samples {
        let seed = cfg.seed.wrapping_add(s as u64);
        let degree = 1 + s % spec.max_degree;
        let f = random_smooth_field(&m, seed, degree);
        let g = trace_inequality_gap(&m, &d, &f, spec.epsilon)?;
        needed.push(g.needed_c);
        t.push(vec![
            s.into(),
            Cell::Text(seed.to_string()),
            degree.into(),
            g.lhs.into(),
            g.rhs_without_c.into(),
            g.needed_c.into(),
        ]);
    }
    let running: Vec<f64> = needed
        .iter()
        .scan(f64::NEG_INFINITY, |acc, &v| {
            *acc = acc.max(v);
            Some(*acc)
        })
        .collect();
    let idx: Vec<f64> = (1..=needed.len()).map(|i| i as f64).collect();
    let plot = Plot {
        name: "needed_c".into(),
        title: format!("trace inequality, epsilon = {}", spec.epsilon),
        x_label: "samples".into(),
        y_label: "needed C".into(),
        log_x: false,
        log_y: false,
        series: vec![Series::new("running max", &idx, &running)],
    };
    let half = needed.len() / 2;
    let summary = json!({
        "mesh": to_value(&m.summary()),
        "epsilon": spec.epsilon,
        "samples": spec.samples,
        "max_needed_c": running.last().copied().unwrap_or(f64::NAN),
        "max_needed_c_first_half": running.get(half.saturating_sub(1)).copied().unwrap_or(f64::NAN),
    });
    Ok(Artifacts { summary, tables: vec![t], plots: vec![plot], failure: None })
}

fn history(name: &str, r: &SolveResult) -> (Table, Vec<Plot>) {
    let mut t = Table::new(name, &["iteration", "energy", "residual", "step"]);
    for row in &r.trace {
        t.push(vec![row.iteration.into(), row.energy.into(), row.residual.into(), row.step.into()]);
    }
    let it: Vec<f64> = r.trace.iter().map(|x| x.iteration as f64).collect();
    let res: Vec<f64> = r.trace.iter().map(|x| x.residual).collect();
    let en: Vec<f64> = r.trace.iter().map(|x| x.energy).collect();
    let residual = Plot {
        name: format!("{name}_residual"),
        title: "residual history".into(),
        x_label: "iteration".into(),
        y_label: "residual".into(),
        log_x: false,
        log_y: true,
        series: vec![Series::new("residual", &it, &res)],
    };
    let energy = Plot {
        name: format!("{name}_energy"),
        title: "energy history".into(),
        x_label: "iteration".into(),
        y_label: "energy".into(),
        log_x: false,
        log_y: false,
        series: vec![Series::new("energy", &it, &en)],
    };
    (t, vec![energy, residual])
}

/// Aggregate table and plots over blow-up reports indexed by `x`.
fn report_artifacts(label: &str, x: &[f64], reports: &[BlowupReport], log_x: bool) -> (Table, Vec<Plot>) {
    let with_p = label != "p";
    let mut header = vec![label];
    if with_p {
        header.push("p");
    }
    header.extend([
        "tau",
        "max_u",
        "median_u",
        "detected",
        "containment",
        "ratio_grad",
        "ratio_bulk",
        "tangential",
        "harnack",
        "capacity_lower",
        "capacity_upper",
        "hat_extrema",
    ]);
    let mut t = Table::new("reports", &header);
    let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
    for (a, r) in x.iter().zip(reports) {
        let mut row: Vec<Cell> = vec![(*a).into()];
        if with_p {
            row.push(r.p.into());
        }
        row.extend([
            r.tau.into(),
            r.max_u.into(),
            r.median_u.into(),
            r.detected.into(),
            r.singular.containment.into(),
            r.ratios.ratio_grad.into(),
            r.ratios.ratio_bulk.into(),
            opt(r.tangential_gradient_score).into(),
            opt(r.harnack_ratio).into(),
            opt(r.capacity.map(|c| c.lower)).into(),
            opt(r.capacity.map(|c| c.upper)).into(),
            r.hat_curve.as_ref().map_or(Cell::Text(String::new()), |h| h.critical_points.into()),
        ]);
        t.push(row);
    }
    let col = |f: &dyn Fn(&BlowupReport) -> f64| reports.iter().map(f).collect::<Vec<f64>>();
    let ratios = Plot {
        name: "ratios".into(),
        title: "energy-density ratios".into(),
        x_label: label.into(),
        y_label: "ratio".into(),
        log_x,
        log_y: false,
        series: vec![
            Series::new("gradient", x, &col(&|r| r.ratios.ratio_grad)),
            Series::new("bulk", x, &col(&|r| r.ratios.ratio_bulk)),
        ],
    };
    let capacity = Plot {
        name: "capacity".into(),
        title: "capacity integral below level one".into(),
        x_label: label.into(),
        y_label: "capacity".into(),
        log_x,
        log_y: true,
        series: vec![Series::new("lower", x, &col(&|r| opt(r.capacity.map(|c| c.lower))))],
    };
    let hats = Plot {
        name: "hat_curves".into(),
        title: "rescaled spherical averages".into(),
        x_label: "r".into(),
        y_label: "u_hat".into(),
        log_x: true,
        log_y: false,
        series: x
            .iter()
            .zip(reports)
            .filter_map(|(a, r)| r.hat_curve.as_ref().map(|h| Series::new(&format!("{label} = {a}"), &h.radii, &h.values)))
            .collect(),
    };
    (t, vec![ratios, capacity, hats])
}

fn status_failure(r: &SolveResult) -> Option<String> {
    match r.status {
        SolveStatus::NotConverged | SolveStatus::BlowUp => {
            Some(format!("solver stopped after {} iterations with status {:?}", r.iterations, r.status))
        }
        _ => None,
    }
}

fn minimize(cfg: &RunConfig, refine: u32) -> Result<Artifacts, CliError> {
    let m = cfg.domain.mesh(refine)?;
    let d = cfg.curvature.as_ref().unwrap().data(&m)?;
    let u0 = match &cfg.initial {
        Some(spec) => Some(initial_state(&m, &d, spec)?),
        None => None,
    };
    let r = minimize_energy(&m, &d, &cfg.solver, u0.as_deref())?;
    let (t, plots) = history("history", &r);
    let failure = status_failure(&r);
    let summary = json!({ "mesh": to_value(&m.summary()), "solve": to_value(&r) });
    Ok(Artifacts { summary, tables: vec![t], plots, failure })
}

fn initial_state(m: &Mesh, d: &CurvatureData, spec: &InitialSpec) -> Result<Vec<f64>, CliError> {
    if m.kind() != DomainKind::AxiBall3 {
        return Err(CliError::Validation("a test-function start needs the axisymmetric unit ball".into()));
    }
    let nodes = &m.boundary().nodes;
    let pole = (0..nodes.len()).max_by(|&a, &b| m.nodes()[nodes[a]][1].total_cmp(&m.nodes()[nodes[b]][1])).unwrap();
    let mu = spec.mu.unwrap_or_else(|| mu_opt(3, d.k[nodes[pole]], d.h[pole]));
    let tf = TestFunction::new(3, spec.beta, spec.d, mu, vec![0.0, 0.0, 1.0])?;
    Ok(m.nodes().iter().map(|&x| tf.value(&lift(x, 3))).collect::<Result<_, _>>()?)
}

fn solver_failure(summary: Value, e: Error) -> Result<Artifacts, CliError> {
    match e {
        Error::Solver(msg) => Ok(Artifacts { summary, tables: Vec::new(), plots: Vec::new(), failure: Some(msg) }),
        other => Err(other.into()),
    }
}

fn mountain_pass_run(cfg: &RunConfig, refine: u32) -> Result<Artifacts, CliError> {
    let m = cfg.domain.mesh(refine)?;
    let d = cfg.curvature.as_ref().unwrap().data(&m)?;
    let spec = cfg.mountain_pass.as_ref().unwrap();
    let base = json!({ "mesh": to_value(&m.summary()), "p": spec.p, "kappa": spec.kappa });
    let end = match testfn_endpoint(&m, &d, spec.p, spec.kappa) {
        Ok(e) => e,
        Err(e) => return solver_failure(base, e),
    };
    let mp = match mountain_pass(&m, &d, spec.p, spec.kappa, &end.u, &cfg.solver) {
        Ok(mp) => mp,
        Err(e) => return solver_failure(json!({ "mesh": base["mesh"], "endpoint": to_value(&end) }), e),
    };
    let mut path = Table::new("path", &["node", "initial_energy", "final_energy"]);
    for (i, (a, b)) in mp.initial_path.iter().zip(&mp.final_path).enumerate() {
        path.push(vec![i.into(), (*a).into(), (*b).into()]);
    }
    let s: Vec<f64> = (0..mp.final_path.len()).map(|i| i as f64 / (mp.final_path.len() - 1).max(1) as f64).collect();
    let path_plot = Plot {
        name: "path".into(),
        title: "energy along the path".into(),
        x_label: "path parameter".into(),
        y_label: "energy".into(),
        log_x: false,
        log_y: false,
        series: vec![Series::new("initial", &s, &mp.initial_path), Series::new("final", &s, &mp.final_path)],
    };
    let (t, mut plots) = history("polish", &mp.result);
    let failure = status_failure(&mp.result);
    let summary = json!({
        "mesh": base["mesh"],
        "endpoint": to_value(&end),
        "barrier": to_value(&mp.barrier),
        "initial_path": mp.initial_path,
        "final_path": mp.final_path,
        "initial_max": mp.initial_max,
        "string_iterations": mp.string_iterations,
        "polish_attempts": mp.polish_attempts,
        "solve": to_value(&mp.result),
    });
    plots.insert(0, path_plot);
    Ok(Artifacts { summary, tables: vec![path, t], plots, failure })
}

fn steps_table(c: &Continuation) -> (Table, Plot) {
    let mut t = Table::new("steps", &["index", "p", "kappa", "method", "status", "energy", "max_u", "residual", "failure"]);
    let (mut ps, mut es) = (Vec::new(), Vec::new());
    for s in &c.steps {
        let method = to_value(&s.method).as_str().unwrap_or("").to_string();
        match &s.result {
            Some(r) => {
                ps.push(s.p);
                es.push(r.energy.total);
                let res = r.interior_residual.max(r.boundary_residual);
                t.push(vec![
                    s.index.into(),
                    s.p.into(),
                    s.kappa.into(),
                    method.into(),
                    to_value(&r.status).as_str().unwrap_or("").into(),
                    r.energy.total.into(),
                    r.max_u.into(),
                    res.into(),
                    "".into(),
                ]);
            }
            None => t.push(vec![
                s.index.into(),
                s.p.into(),
                s.kappa.into(),
                method.into(),
                "failed".into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                s.failure.clone().unwrap_or_default().into(),
            ]),
        }
    }
    let plot = Plot {
        name: "energies".into(),
        title: "critical energy along the schedule".into(),
        x_label: "p".into(),
        y_label: "energy".into(),
        log_x: false,
        log_y: false,
        series: vec![Series::new("energy", &ps, &es)],
    };
    (t, plot)
}

fn all_failed(c: &Continuation) -> Option<String> {
    let ok = c.steps.iter().any(|s| s.result.as_ref().is_some_and(|r| r.converged));
    (!ok).then(|| format!("none of the {} steps converged", c.steps.len()))
}

fn continuation_run(cfg: &RunConfig, refine: u32) -> Result<Artifacts, CliError> {
    let m = cfg.domain.mesh(refine)?;
    let d = cfg.curvature.as_ref().unwrap().data(&m)?;
    let c = continuation(&m, &d, &cfg.solver)?;
    let (t, plot) = steps_table(&c);
    let failure = all_failed(&c);
    let (mut ps, mut reports) = (Vec::new(), Vec::new());
    for s in &c.steps {
        if let Some(r) = s.result.as_ref().filter(|r| r.converged) {
            ps.push(s.p);
            reports.push(blowup_report(&m, &d, &r.u, s.p, &cfg.diagnostics)?);
        }
    }
    let (rt, mut plots) = report_artifacts("p", &ps, &reports, false);
    plots.insert(0, plot);
    let summary = json!({ "mesh": to_value(&m.summary()), "continuation": to_value(&c), "reports": to_value(&reports) });
    Ok(Artifacts { summary, tables: vec![t, rt], plots, failure })
}

fn testfn_energy(cfg: &RunConfig, refine: u32) -> Result<Artifacts, CliError> {
    let m = cfg.domain.mesh(refine)?;
    let d = cfg.curvature.as_ref().unwrap().data(&m)?;
    let spec = cfg.testfn.as_ref().unwrap();
    let scan = testfn_energy_scan(&m, &d, spec.beta, spec.mu, &spec.ladder)?;
    let mut t = Table::new("scan", &["d", "eps_d", "energy", "leading", "ratio", "under_resolved"]);
    for r in &scan.rows {
        t.push(vec![r.d.into(), r.eps_d.into(), r.energy.into(), r.leading.into(), r.ratio.into(), r.under_resolved.into()]);
    }
    let ds: Vec<f64> = scan.rows.iter().map(|r| r.d).collect();
    let plot = Plot {
        name: "scan".into(),
        title: format!("test-function energy, beta = {}", spec.beta),
        x_label: "D".into(),
        y_label: "energy".into(),
        log_x: false,
        log_y: false,
        series: vec![
            Series::new("discrete", &ds, &scan.rows.iter().map(|r| r.energy).collect::<Vec<_>>()),
            Series::new("leading order", &ds, &scan.rows.iter().map(|r| r.leading).collect::<Vec<_>>()),
        ],
    };
    let summary = json!({ "mesh": to_value(&m.summary()), "scan": to_value(&scan) });
    Ok(Artifacts { summary, tables: vec![t], plots: vec![plot], failure: None })
}

fn blowup_scan(cfg: &RunConfig, refine: u32) -> Result<Artifacts, CliError> {
    let m = cfg.domain.mesh(refine)?;
    let spec = cfg.blowup.as_ref().unwrap();
    let n = m.dim();
    let p = critical_exponent(n);
    let (mut reports, mut ladder, mut maxima) = (Vec::new(), Vec::new(), Vec::new());
    for &a in &spec.parameters {
        let pr = match spec.family {
            Family::Hyperball => Profile::Hyperball(Hyperball::new(n, a)?),
            Family::Bubble => Profile::Bubble(Bubble::new(n, a, spec.dn)?),
        };
        let d = pr.matched_data(&m)?;
        let u = pr.sample(&m)?;
        let r = blowup_report(&m, &d, &u, p, &cfg.diagnostics)?;
        maxima.push(r.max_u);
        reports.push(r);
        ladder.push((d, u));
    }
    let label = match spec.family {
        Family::Hyperball => "rho",
        Family::Bubble => "beta",
    };
    let (t, mut plots) = report_artifacts(label, &spec.parameters, &reports, spec.family == Family::Bubble);
    let xs: Vec<f64> = match spec.family {
        Family::Hyperball => spec.parameters.iter().map(|r| r - 1.0).collect(),
        Family::Bubble => spec.parameters.clone(),
    };
    plots.insert(
        0,
        Plot {
            name: "maxima".into(),
            title: "concentration of the family".into(),
            x_label: if spec.family == Family::Hyperball { "rho - 1".into() } else { "beta".into() },
            y_label: "max u".into(),
            log_x: true,
            log_y: true,
            series: vec![Series::new("max u", &xs, &maxima)],
        },
    );
    let mut tables = vec![t];
    let mut failure = None;
    let mut summary = json!({
        "mesh": to_value(&m.summary()),
        "family": spec.family,
        "parameters": spec.parameters,
        "max_u_exponent": observed_exponent(&xs, &maxima),
        "reports": to_value(&reports),
    });
    if let Some(ps) = spec.solve_at {
        let c = forced_ladder(&m, &ladder, ps, &cfg.solver)?;
        let (st, sp) = steps_table(&c);
        tables.push(st);
        plots.push(sp);
        failure = all_failed(&c);
        summary["solves"] = to_value(&c);
    }
    Ok(Artifacts { summary, tables, plots, failure })
}
