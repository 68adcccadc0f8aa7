//! Closed-form solution families and the concentrating test functions.
//!
//! Points are slices of length `n`; the last component is the normal coordinate
//! `x_n`. On meridional meshes use [`lift`] to embed `(xi, zeta)` into `R^n`.
//!
//! Normalizations: the bubble `b_beta` and the horosphere profile `v_alpha` solve
//! the half-space problem with `K = -C_n` and `H = 2 D_n / sqrt(n(n-2))`. The
//! hyperbolic-ball family `u_rho` solves the problem on the unit ball with
//! `K = -n(n-1)`, `S = 0`, `h_g = 1` and `H = (rho^2 + 1) / (2 rho)`.

use std::f64::consts::PI;

use crate::energy::{el_residual, Residual};
use crate::error::{Error, Result};
use crate::fields::CurvatureData;
use crate::geometry::{DomainKind, Mesh};
use crate::{conformal_constant, critical_exponent, sphere_area};

/// Embeds a meridional point `(xi, zeta)` as `(xi, 0, ..., 0, zeta)` in `R^n`.
pub fn lift(p: [f64; 2], n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    x[0] = p[0];
    x[n - 1] = p[1];
    x
}

/// Meridional components `(d/dxi, d/dzeta)` of a gradient at a lifted point.
pub fn project(g: &[f64]) -> [f64; 2] {
    [g[0], g[g.len() - 1]]
}

fn check_point(x: &[f64], n: usize) -> Result<()> {
    crate::error::check_len(n, x.len())
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Half-space bubble centred below the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bubble {
    pub n: usize,
    pub beta: f64,
    /// Value of `D_n` at the blow-up point; must exceed 1.
    pub dn: f64,
}

impl Bubble {
    pub fn new(n: usize, beta: f64, dn: f64) -> Result<Self> {
        if n < 3 || !(beta > 0.0) || !(dn > 1.0) {
            return Err(Error::Parameter(format!("bubble needs n >= 3, beta > 0, D_n > 1 (got {n}, {beta}, {dn})")));
        }
        Ok(Bubble { n, beta, dn })
    }

    /// Distance of the centre `x_0 = -D_n beta e_n` below the boundary.
    pub fn center_depth(&self) -> f64 {
        self.dn * self.beta
    }

    fn amplitude(&self) -> f64 {
        let nf = self.n as f64;
        (nf * (nf - 2.0)).powf((nf - 2.0) / 4.0) * self.beta.powf((nf - 2.0) / 2.0)
    }

    fn denominator(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_point(x, self.n)?;
        let mut d = x.to_vec();
        d[self.n - 1] += self.center_depth();
        let den = norm2(&d) - self.beta * self.beta;
        if !(den > 0.0) {
            return Err(Error::Domain(format!("bubble evaluated inside its singular ball at {x:?}")));
        }
        Ok((den, d))
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let (den, _) = self.denominator(x)?;
        Ok(self.amplitude() * den.powf(-(self.n as f64 - 2.0) / 2.0))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (den, d) = self.denominator(x)?;
        let b = self.amplitude() * den.powf(-(self.n as f64 - 2.0) / 2.0);
        let c = -(self.n as f64 - 2.0) * b / den;
        Ok(d.iter().map(|v| c * v).collect())
    }

    /// Scalar curvature under which the bubble is a solution.
    pub fn k_normalization(&self) -> f64 {
        -conformal_constant(self.n)
    }

    /// Boundary mean curvature under which the bubble is a solution.
    pub fn h_normalization(&self) -> f64 {
        let nf = self.n as f64;
        2.0 * self.dn / (nf * (nf - 2.0)).sqrt()
    }

    /// Limit of `|x|^{n-2} b(x)` as `|x| -> infinity`.
    pub fn decay_constant(&self) -> f64 {
        self.amplitude()
    }
}

/// One-dimensional horosphere profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horo {
    pub n: usize,
    pub alpha: f64,
}

impl Horo {
    pub fn new(n: usize, alpha: f64) -> Result<Self> {
        if n < 3 || !(alpha > 0.0) {
            return Err(Error::Parameter(format!("horosphere profile needs n >= 3, alpha > 0 (got {n}, {alpha})")));
        }
        Ok(Horo { n, alpha })
    }

    fn slope(&self) -> f64 {
        let nf = self.n as f64;
        2.0 / (nf * (nf - 2.0)).sqrt()
    }

    fn argument(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.n)?;
        let t = self.slope() * x[self.n - 1] + self.alpha;
        if !(t > 0.0) {
            return Err(Error::Domain(format!("horosphere profile undefined at x_n = {}", x[self.n - 1])));
        }
        Ok(t)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.argument(x)?.powf(-(self.n as f64 - 2.0) / 2.0))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let t = self.argument(x)?;
        let nf = self.n as f64;
        let mut g = vec![0.0; self.n];
        g[self.n - 1] = -(nf - 2.0) / 2.0 * self.slope() * t.powf(-nf / 2.0);
        Ok(g)
    }

    pub fn k_normalization(&self) -> f64 {
        -conformal_constant(self.n)
    }

    pub fn h_normalization(&self) -> f64 {
        self.slope()
    }
}

/// Explicit family on the unit ball blowing up on the whole sphere as `rho -> 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperball {
    pub n: usize,
    pub rho: f64,
}

impl Hyperball {
    pub fn new(n: usize, rho: f64) -> Result<Self> {
        if n < 3 || !(rho > 1.0) {
            return Err(Error::Parameter(format!("hyperbolic ball needs n >= 3, rho > 1 (got {n}, {rho})")));
        }
        Ok(Hyperball { n, rho })
    }

    fn gap(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.n)?;
        let r2 = norm2(x);
        if r2 > 1.0 + 1e-12 {
            return Err(Error::Domain(format!("point outside the unit ball: |x|^2 = {r2}")));
        }
        Ok(self.rho * self.rho - r2)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let g = self.gap(x)?;
        Ok((2.0 * self.rho / g).powf((self.n as f64 - 2.0) / 2.0))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.gap(x)?;
        let u = (2.0 * self.rho / g).powf((self.n as f64 - 2.0) / 2.0);
        let c = (self.n as f64 - 2.0) * u / g;
        Ok(x.iter().map(|v| c * v).collect())
    }

    /// Boundary mean curvature `(rho^2 + 1) / (2 rho)`.
    pub fn h_rho(&self) -> f64 {
        (self.rho * self.rho + 1.0) / (2.0 * self.rho)
    }

    pub fn k_normalization(&self) -> f64 {
        let nf = self.n as f64;
        -nf * (nf - 1.0)
    }
}

/// Concentrating test function on the flat unit ball, anchored at a boundary point.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub n: usize,
    pub beta: f64,
    pub d: f64,
    pub mu: f64,
    /// Unit boundary point `p`.
    pub anchor: Vec<f64>,
}

impl TestFunction {
    pub fn new(n: usize, beta: f64, d: f64, mu: f64, anchor: Vec<f64>) -> Result<Self> {
        let nf = n as f64;
        if n < 3 || anchor.len() != n {
            return Err(Error::Parameter(format!("test function needs n >= 3 and an anchor in R^{n}")));
        }
        if !(d > 1.0 / (nf * (nf - 1.0)).sqrt()) {
            return Err(Error::Parameter(format!("D = {d} must exceed 1/sqrt(n(n-1))")));
        }
        if !(beta > 0.0 && mu > 0.0) {
            return Err(Error::Parameter(format!("beta and mu must be positive (got {beta}, {mu})")));
        }
        if (norm2(&anchor) - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter("anchor must lie on the unit sphere".into()));
        }
        Ok(TestFunction { n, beta, d, mu, anchor })
    }

    /// `eps_D = sqrt(n(n-1) D^2 - 1)`.
    pub fn eps_d(&self) -> f64 {
        eps_d(self.n, self.d)
    }

    /// Exterior point `P = (1 + sqrt(n(n-1)) D beta) p`.
    pub fn pole(&self) -> Vec<f64> {
        let nf = self.n as f64;
        let s = 1.0 + (nf * (nf - 1.0)).sqrt() * self.d * self.beta;
        self.anchor.iter().map(|a| s * a).collect()
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.n)?;
        let pole = self.pole();
        let d2: f64 = x.iter().zip(&pole).map(|(a, b)| (a - b) * (a - b)).sum();
        let den = d2 - self.beta * self.beta;
        if !(den > 0.0) {
            return Err(Error::Parameter(format!("test function denominator {den} <= 0 at {x:?}")));
        }
        let e = (self.n as f64 - 2.0) / 2.0;
        Ok((self.mu * self.beta).powf(e) / den.powf(e))
    }
}

pub fn eps_d(n: usize, d: f64) -> f64 {
    let nf = n as f64;
    (nf * (nf - 1.0) * d * d - 1.0).sqrt()
}

/// Closed form `sqrt(pi) Gamma((n-1)/2) / (2^{n-1} Gamma(n/2))`.
pub fn gamma_n(n: usize) -> f64 {
    let nf = n as f64;
    PI.sqrt() * libm::tgamma((nf - 1.0) / 2.0) / (2f64.powf(nf - 1.0) * libm::tgamma(nf / 2.0))
}

/// `int_0^inf t^{n-2} / (1 + t^2)^{n-1} dt` by composite Simpson after `t = tan s`.
pub fn gamma_n_quadrature(n: usize, intervals: usize) -> f64 {
    let m = intervals + intervals % 2;
    let h = PI / 2.0 / m as f64;
    let f = |s: f64| (s.sin() * s.cos()).powi(n as i32 - 2);
    let mut acc = f(0.0) + f(PI / 2.0);
    for k in 1..m {
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
    }
    acc * h / 3.0
}

/// `P(mu) = |K| mu^2 / (4 n (n-1)) - H mu + 1`.
pub fn p_poly(n: usize, k_p: f64, h_p: f64, mu: f64) -> f64 {
    let nf = n as f64;
    k_p.abs() * mu * mu / (4.0 * nf * (nf - 1.0)) - h_p * mu + 1.0
}

/// Minimizer `2 n (n-1) H / |K|` of [`p_poly`].
pub fn mu_opt(n: usize, k_p: f64, h_p: f64) -> f64 {
    let nf = n as f64;
    2.0 * nf * (nf - 1.0) * h_p / k_p.abs()
}

/// Leading-order energy `gamma_n mu^{n-2} |S^{n-2}| (n-2) P(mu) eps_D^{-(n-1)}`.
pub fn leading_energy(n: usize, k_p: f64, h_p: f64, mu: f64, d: f64) -> f64 {
    let nf = n as f64;
    gamma_n(n) * mu.powf(nf - 2.0) * sphere_area(n - 2) * (nf - 2.0) * p_poly(n, k_p, h_p, mu) * eps_d(n, d).powf(-(nf - 1.0))
}

/// A closed-form profile that can be checked against the equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    Bubble(Bubble),
    Horo(Horo),
    Hyperball(Hyperball),
}

impl Profile {
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        match self {
            Profile::Bubble(b) => b.value(x),
            Profile::Horo(h) => h.value(x),
            Profile::Hyperball(h) => h.value(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Profile::Bubble(b) => b.gradient(x),
            Profile::Horo(h) => h.gradient(x),
            Profile::Hyperball(h) => h.gradient(x),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Profile::Bubble(_) => "bubble",
            Profile::Horo(_) => "horo",
            Profile::Hyperball(_) => "hyperball",
        }
    }

    fn dim(&self) -> usize {
        match self {
            Profile::Bubble(b) => b.n,
            Profile::Horo(h) => h.n,
            Profile::Hyperball(h) => h.n,
        }
    }

    /// Nodal values on a mesh.
    pub fn sample(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        let n = mesh.dim();
        mesh.nodes().iter().map(|&p| self.value(&lift(p, n))).collect()
    }

    /// Curvature data the profile solves exactly (`S = 0`; `h_g = 1` on the ball).
    pub fn matched_data(&self, mesh: &Mesh) -> Result<CurvatureData> {
        let (k, h, hg) = match self {
            Profile::Bubble(b) => (b.k_normalization(), b.h_normalization(), 0.0),
            Profile::Horo(v) => (v.k_normalization(), v.h_normalization(), 0.0),
            Profile::Hyperball(u) => (u.k_normalization(), u.h_rho(), 1.0),
        };
        CurvatureData::constant(mesh, k, h, 0.0, hg)
    }
}

/// Euler-Lagrange residual of a closed-form profile at the critical exponent.
pub fn profile_residual(profile: &Profile, mesh: &Mesh, data: &CurvatureData) -> Result<Residual> {
    let ok = match (profile, mesh.kind()) {
        (Profile::Bubble(_) | Profile::Horo(_), DomainKind::AxiHalfBox { .. }) => true,
        (Profile::Hyperball(_), DomainKind::RadialBall { .. } | DomainKind::AxiBall3) => true,
        _ => false,
    };
    if !ok || profile.dim() != mesh.dim() {
        return Err(Error::Config(format!("profile {} does not live on {:?}", profile.name(), mesh.kind())));
    }
    let u = profile.sample(mesh)?;
    el_residual(mesh, data, &u, critical_exponent(mesh.dim()), 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Resolution};
    use proptest::prelude::*;

    #[test]
    fn bubble_examples() {
        let b = Bubble::new(3, 1.0, 1.25).unwrap();
        let v = b.value(&[0.0, 0.0, 0.0]).unwrap();
        assert!((v - 3f64.powf(0.25) / 0.75).abs() < 1e-12);
        assert!((v - 1.754765).abs() < 1e-6);
        let far = b.value(&[1e4, 0.0, 0.0]).unwrap() * 1e4;
        // The amplitude carries (n(n-2))^{(n-2)/4}, so the far-field constant is 3^{1/4} at n = 3.
        assert!((far - 3f64.powf(0.25)).abs() < 1e-3);
        assert!((b.decay_constant() - 3f64.powf(0.25)).abs() < 1e-12);
        let small = Bubble::new(3, 1e-8, 1.25).unwrap();
        assert!(small.value(&[0.5, 0.0, 0.0]).unwrap() < 1e-3);
        assert!(Bubble::new(3, 1.0, 0.9).is_err());
    }

    #[test]
    fn bubble_decay_within_one_percent() {
        for n in [3usize, 4, 5] {
            let b = Bubble::new(n, 0.3, 1.4).unwrap();
            let rel = |dir: [f64; 2], r: f64| {
                let x = lift([r * dir[0], r * dir[1]], n);
                b.value(&x).unwrap() * r.powi(n as i32 - 2) / b.decay_constant() - 1.0
            };
            // Tangentially the deviation is O((beta/|x|)^2).
            assert!(rel([1.0, 0.0], 50.0 * b.beta).abs() < 0.01);
            // Off the boundary the centre offset D_n beta gives a first-order deviation.
            for dir in [[0.6, 0.8], [0.0, 1.0]] {
                let r = 100.0 * b.dn * (n as f64 - 2.0) * b.beta;
                assert!(rel(dir, r).abs() < 0.01, "n={n} {dir:?}");
                let r50 = 50.0 * b.beta;
                let first_order = (n as f64 - 2.0) * b.dn * b.beta * dir[1] / r50;
                assert!((rel(dir, r50) + first_order).abs() < 0.2 * first_order);
            }
        }
    }

    #[test]
    fn horo_examples() {
        let h = Horo::new(3, 1.0).unwrap();
        assert_eq!(h.value(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!((h.value(&[0.0, 0.0, 3f64.sqrt()]).unwrap() - 3f64.powf(-0.5)).abs() < 1e-14);
        assert!(h.value(&[0.0, 0.0, 1e12]).unwrap() < 1e-5);
    }

    #[test]
    fn hyperball_examples() {
        let u = Hyperball::new(3, 2.0).unwrap();
        assert_eq!(u.h_rho(), 1.25);
        assert!((u.value(&[0.0; 3]).unwrap() - 1.0).abs() < 1e-15);
        let near = Hyperball::new(3, 1.0 + 1e-8).unwrap();
        assert!(near.value(&[1.0, 0.0, 0.0]).unwrap() > 1e3);
        assert!(matches!(Hyperball::new(3, 1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn testfn_examples() {
        let d = 1.1 / 6f64.sqrt();
        assert!((eps_d(3, d) - 0.21f64.sqrt()).abs() < 1e-12);
        let (beta, mu) = (0.05, 2.25);
        let t = TestFunction::new(3, beta, d, mu, vec![0.0, 0.0, 1.0]).unwrap();
        let v = t.value(&[0.0, 0.0, 1.0]).unwrap();
        let expect = mu.sqrt() / (beta.sqrt() * eps_d(3, d));
        assert!((v - expect).abs() < 1e-10 * expect);
        let plain = TestFunction::new(3, beta, d, 1.0, vec![0.0, 0.0, 1.0]).unwrap();
        assert!((plain.value(&[0.3, 0.0, 0.1]).unwrap() * mu.sqrt() - t.value(&[0.3, 0.0, 0.1]).unwrap()).abs() < 1e-12);
        assert!(TestFunction::new(3, beta, 0.4, mu, vec![0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn testfn_concentrates_like_eps_power() {
        let beta = 0.01;
        let peak = |e: f64| {
            let d = (1.0 + e * e).sqrt() / 6f64.sqrt();
            TestFunction::new(3, beta, d, 1.0, vec![0.0, 0.0, 1.0]).unwrap().value(&[0.0, 0.0, 1.0]).unwrap()
        };
        let ratio = peak(0.1) / peak(0.2);
        assert!((ratio - 2.0).abs() < 1e-9);
    }

    #[test]
    fn closed_form_constants() {
        assert!((gamma_n(3) - 0.5).abs() < 1e-15);
        assert!((gamma_n_quadrature(3, 2000) - 0.5).abs() < 1e-8);
        for n in 4..8 {
            assert!((gamma_n_quadrature(n, 4000) - gamma_n(n)).abs() < 1e-9, "n={n}");
        }
        assert_eq!(mu_opt(3, -8.0, 1.5), 2.25);
        assert_eq!(p_poly(3, -8.0, 1.5, 2.25), -0.6875);
    }

    #[test]
    fn p_poly_negative_iff_dn_above_one() {
        for &(k, h) in &[(-8.0, 1.5), (-6.0, 0.5), (-6.0, 1.01), (-6.0, 0.99), (-8.0, 1.0)] {
            let neg = p_poly(3, k, h, mu_opt(3, k, h)) < 0.0;
            assert_eq!(neg, crate::fields::dn_value(3, k, h) > 1.0, "K={k} H={h}");
        }
    }

    fn fd_check(f: &dyn Fn(&[f64]) -> f64, g: &[f64], x: &[f64]) -> f64 {
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / (1.0 + g[i].abs()));
        }
        worst
    }

    proptest! {
        #[test]
        fn gradients_match_finite_differences(
            x0 in -2.0f64..2.0, x1 in -2.0f64..2.0, x2 in 0.0f64..2.0,
            beta in 0.2f64..1.5, dn in 1.05f64..2.0, alpha in 0.3f64..2.0,
        ) {
            let x = [x0, x1, x2];
            let b = Bubble::new(3, beta, dn).unwrap();
            prop_assert!(fd_check(&|y| b.value(y).unwrap(), &b.gradient(&x).unwrap(), &x) < 1e-6);
            let h = Horo::new(3, alpha).unwrap();
            prop_assert!(fd_check(&|y| h.value(y).unwrap(), &h.gradient(&x).unwrap(), &x) < 1e-6);
            let s = 0.5 / (x0 * x0 + x1 * x1 + x2 * x2).sqrt().max(0.5);
            let y = [x0 * s, x1 * s, x2 * s];
            let u = Hyperball::new(3, 1.0 + beta).unwrap();
            prop_assert!(fd_check(&|z| u.value(z).unwrap(), &u.gradient(&y).unwrap(), &y) < 1e-6);
        }
    }

    #[test]
    fn residual_rejects_wrong_domain() {
        let m = build_mesh(DomainKind::AxiBall3, Resolution::grid(8, 8)).unwrap();
        let p = Profile::Horo(Horo::new(3, 1.0).unwrap());
        let d = CurvatureData::constant(&m, -8.0, 1.0, 0.0, 0.0).unwrap();
        assert!(matches!(profile_residual(&p, &m, &d), Err(Error::Config(_))));
    }
}
