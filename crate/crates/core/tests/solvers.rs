use confcurv::energy::energy;
use confcurv::fields::CurvatureData;
use confcurv::geometry::{build_mesh, DomainKind, Mesh, Resolution};
use confcurv::profiles::{lift, mu_opt, Hyperball, Profile, TestFunction};
use confcurv::solvers::*;
use confcurv::Error;

fn ball(n: usize) -> Mesh {
    build_mesh(DomainKind::AxiBall3, Resolution::grid(n, n)).unwrap()
}

fn minmax_data(m: &Mesh) -> CurvatureData {
    let h = m.sample_boundary(|p| -0.3 + 1.6 * p[1] / p[0].hypot(p[1]));
    CurvatureData::new(m, vec![-6.0; m.len()], h, vec![0.0; m.len()], vec![1.0; m.boundary().len()]).unwrap()
}

#[test]
fn minimiser_with_positive_mean_curvature() {
    let m = ball(32);
    let d = CurvatureData::constant(&m, -6.0, 0.2, 0.0, 0.0).unwrap();
    let r = minimize_energy(&m, &d, &SolverConfig::default(), None).unwrap();
    assert_eq!(r.status, SolveStatus::Converged);
    assert!(r.positive && r.min_u > 0.0 && r.energy.total < 0.0);
    assert!(r.residual() <= 1e-7);
    assert!(r.trace.windows(2).all(|w| w[1].energy <= w[0].energy));
    let again = minimize_energy(&m, &d, &SolverConfig::default(), None).unwrap();
    assert_eq!(again.u, r.u);
}

#[test]
fn scaled_test_function_exposes_non_coercivity() {
    let m = ball(64);
    let d = CurvatureData::constant(&m, -6.0, 1.3, 0.0, 1.0).unwrap();
    let tf = TestFunction::new(3, 0.1, 0.5, mu_opt(3, -6.0, 1.3), vec![0.0, 0.0, 1.0]).unwrap();
    let u0: Vec<f64> = m.nodes().iter().map(|&x| tf.value(&lift(x, 3)).unwrap()).collect();
    let r = minimize_energy(&m, &d, &SolverConfig::default(), Some(&u0)).unwrap();
    assert_eq!(r.status, SolveStatus::NonCoercive);
    assert!(!r.converged);
    assert!(r.energy.total < energy(&m, &d, &u0, 5.0, 1.0).unwrap().total);
    assert_eq!(r.u.len(), m.len());
}

#[test]
fn warm_start_from_the_hyperball() {
    let m = ball(48);
    let hb = Profile::Hyperball(Hyperball::new(3, 2.0).unwrap());
    let d = hb.matched_data(&m).unwrap();
    let u0 = hb.sample(&m).unwrap();
    let r = solve_subcritical(&m, &d, 5.0 - 1e-6, 1.0, &u0, &SolverConfig::default()).unwrap();
    assert!(r.converged && r.iterations <= 3);
    let dev = r.u.iter().zip(&u0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dev < 0.05);
}

#[test]
fn subcritical_rejects_the_critical_exponent() {
    let m = ball(8);
    let d = CurvatureData::constant(&m, -6.0, 0.0, -1.0, 0.0).unwrap();
    let u0 = vec![1.0; m.len()];
    assert!(matches!(solve_subcritical(&m, &d, 5.0, 1.0, &u0, &SolverConfig::default()), Err(Error::Parameter(_))));
}

#[test]
fn barrier_is_positive_on_small_spheres() {
    let m = ball(32);
    let d = minmax_data(&m);
    let b = barrier_check(&m, &d, 4.5, 1.0, 0.5, 16, 0x5eed).unwrap();
    assert!(b.detected && b.inf_energy > 0.0);
    let again = barrier_check(&m, &d, 4.5, 1.0, 0.5, 16, 0x5eed).unwrap();
    assert_eq!(b, again);
}

#[test]
fn mountain_pass_refuses_without_an_endpoint() {
    let m = ball(32);
    let d = CurvatureData::constant(&m, -6.0, 0.0, 0.0, 1.0).unwrap();
    match testfn_endpoint(&m, &d, 4.5, 1.0) {
        Err(Error::Solver(msg)) => assert!(msg.contains("no negative-energy endpoint")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn mountain_pass_rejects_positive_endpoints() {
    let m = ball(24);
    let d = minmax_data(&m);
    let e = vec![0.1; m.len()];
    assert!(mountain_pass(&m, &d, 4.5, 1.0, &e, &SolverConfig::default()).is_err());
}

#[test]
fn mountain_pass_finds_a_positive_critical_point() {
    let m = ball(96);
    let d = minmax_data(&m);
    let end = testfn_endpoint(&m, &d, 4.5, 1.0).unwrap();
    assert!(end.energy < 0.0 && end.anchor_theta == 0.0);
    let mp = mountain_pass(&m, &d, 4.5, 1.0, &end.u, &SolverConfig::default()).unwrap();
    let r = &mp.result;
    assert!(r.converged && r.positive && r.residual() <= 1e-6);
    assert!(r.energy.total >= mp.barrier.inf_energy && r.energy.total <= mp.initial_max);
    assert_eq!(mp.final_path.len(), SolverConfig::default().path_nodes);
}

#[test]
fn config_validation_and_kappa_ladder() {
    let c = SolverConfig { schedule: vec![3.0, 4.0], ..SolverConfig::default() };
    assert!(c.validate(3).is_ok());
    let bad = SolverConfig { schedule: vec![4.0, 3.0], ..SolverConfig::default() };
    assert!(matches!(bad.validate(3), Err(Error::Config(_))));
    let past = SolverConfig { schedule: vec![3.0, 5.0], ..SolverConfig::default() };
    assert!(past.validate(3).is_err());
    assert_eq!(c.kappa_candidates(0)[0], 1.0);
}
