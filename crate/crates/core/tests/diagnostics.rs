use confcurv::diagnostics::*;
use confcurv::fields::{dn_map, CurvatureData};
use confcurv::geometry::{build_mesh, DomainKind, Mesh, Resolution};
use confcurv::profiles::{Bubble, Hyperball, Profile};

fn ball(n: usize) -> Mesh {
    build_mesh(DomainKind::AxiBall3, Resolution::grid(n, n)).unwrap()
}

fn half_box(n: usize) -> Mesh {
    build_mesh(DomainKind::AxiHalfBox { half_width: 6.0, height: 6.0 }, Resolution::grid(n, n)).unwrap()
}

#[test]
fn rescaled_hyperball_near_one_is_a_horosphere() {
    let m = build_mesh(DomainKind::RadialBall { n: 3 }, Resolution::radial(4096)).unwrap();
    let u = Profile::Hyperball(Hyperball::new(3, 1.01).unwrap()).sample(&m).unwrap();
    let patch = rescale_profile(&u, &m, [0.0, 1.0], 5.0, 4.0, 21).unwrap();
    assert!(patch.values.len() > 21 * 30);
    let horo = profile_fit(&patch, FitKind::Horo, 1.0).unwrap();
    assert!(horo.error < 0.02, "horo fit error {}", horo.error);
    let bubble = profile_fit(&patch, FitKind::Bubble, 1.5).unwrap();
    assert!(bubble.error > horo.error);
}

#[test]
fn measure_ratios_approach_the_limits() {
    let m = build_mesh(DomainKind::RadialBall { n: 3 }, Resolution::radial(2048)).unwrap();
    let mut last = f64::INFINITY;
    for rho in [1.2, 1.1, 1.05, 1.02] {
        let hb = Hyperball::new(3, rho).unwrap();
        let d = CurvatureData::constant(&m, -6.0, hb.h_rho(), 0.0, 1.0).unwrap();
        let u = Profile::Hyperball(hb).sample(&m).unwrap();
        let r = measure_ratios(&u, &m, &d, 5.0).unwrap();
        assert!(r.defined && r.rho_hat > 0.0);
        let dist = (r.ratio_grad - 1.0).abs() + (r.ratio_bulk - 3.0).abs();
        assert!(dist < last);
        last = dist;
    }
}

#[test]
fn measure_ratios_undefined_without_boundary_mass() {
    let m = ball(16);
    let d = CurvatureData::constant(&m, -6.0, -0.5, 0.0, 0.0).unwrap();
    let r = measure_ratios(&vec![1.0; m.len()], &m, &d, 5.0).unwrap();
    assert!(!r.defined && r.ratio_grad.is_nan());
}

#[test]
fn tangential_score_of_a_concentrated_field() {
    let m = ball(192);
    let h = m.sample_boundary(|p| -0.3 + 1.6 * p[1] / p[0].hypot(p[1]));
    let d = CurvatureData::new(&m, vec![-6.0; m.len()], h, vec![0.0; m.len()], vec![0.0; m.boundary().len()]).unwrap();
    let dn = dn_map(&d, &m).unwrap();
    for theta0 in [0.4f64, 0.7] {
        let c = [theta0.sin(), theta0.cos()];
        let u = m.sample(|p| 1e-3 + (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / 0.004).exp());
        let s = tangential_gradient_score(&u, &m, &dn, &d, 5.0).unwrap();
        let expect = 1.6 * theta0.sin();
        assert!((s - expect).abs() < 0.05 * expect, "theta0 {theta0}: {s} vs {expect}");
    }
}

#[test]
fn capacity_lower_integral_grows_as_bubbles_shrink() {
    let m = half_box(192);
    let mut prev = 0.0;
    for beta in [0.4, 0.2, 0.1, 0.05] {
        let u = Profile::Bubble(Bubble::new(3, beta, 1.5).unwrap()).sample(&m).unwrap();
        let c = capacity_integrals(&u, &m, 5.0, 0.1).unwrap();
        assert!(c.lower > prev);
        prev = c.lower;
    }
    let one = vec![1.0; m.len()];
    let flat = capacity_integrals(&one, &m, 5.0, 0.1).unwrap();
    assert!(flat.lower.abs() < 1e-20 && flat.upper == 0.0);
    let mut bad = one.clone();
    bad[3] = 0.0;
    assert!(capacity_integrals(&bad, &m, 5.0, 0.1).is_err());
}

#[test]
fn hat_curve_counts() {
    let m = half_box(256);
    let radii: Vec<f64> = (0..24).map(|i| 0.02 * 40f64.powf(i as f64 / 23.0)).collect();
    let u = Profile::Bubble(Bubble::new(3, 0.1, 1.5).unwrap()).sample(&m).unwrap();
    let h = radial_average_hat(&u, &m, [0.0, 0.0], 5.0, &radii[..20]).unwrap();
    assert_eq!(h.critical_points, 1);
    let c = radial_average_hat(&vec![2.0; m.len()], &m, [0.0, 0.0], 5.0, &radii).unwrap();
    assert_eq!(c.critical_points, 0);
    assert!(c.values.windows(2).all(|w| w[1] > w[0]));
    assert!(radial_average_hat(&u, &m, [0.0, 0.0], 5.0, &radii[..4]).is_err());
}

#[test]
fn harnack_ratio_flags_spikes() {
    let m = ball(64);
    let flat = harnack_ratio(&vec![3.0; m.len()], &m, [0.0, 1.0], 0.2).unwrap();
    assert!((flat - 1.0).abs() < 1e-12);
    let spike = m.sample(|p| 1.0 + 50.0 * (-((p[0] - 0.3).powi(2) + (p[1] - 0.75).powi(2)) / 0.002).exp());
    assert!(harnack_ratio(&spike, &m, [0.0, 1.0], 0.2).unwrap() > 10.0);
}

#[test]
fn blowup_report_on_the_hyperball_family() {
    let m = ball(96);
    let hb = Hyperball::new(3, 1.05).unwrap();
    let d = CurvatureData::constant(&m, -6.0, hb.h_rho(), 0.0, 1.0).unwrap();
    let u = Profile::Hyperball(hb).sample(&m).unwrap();
    let dn = dn_map(&d, &m).unwrap();
    let umax = u.iter().cloned().fold(0.0, f64::max);
    let s = singular_set_estimate(&u, &m, &dn, 0.5 * umax, 0.05).unwrap();
    assert_eq!(s.containment, 1.0);
    assert_eq!(s.nodes.len(), m.boundary().len());
    let r = blowup_report(&m, &d, &u, 5.0, &DiagnosticsConfig::default()).unwrap();
    assert!(!r.detected);
    assert_eq!(r.singular.containment, 1.0);
    assert_eq!(r.tangential_gradient_score, Some(0.0));
    assert_eq!(r.tau, 0.0);
    assert!(r.ratios.defined);
}
