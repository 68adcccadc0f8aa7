//! Prescribed and background curvature data and the scaling-invariant map `D_n`.
//!
//! Fields are given either as small closed-form expressions or as raw nodal arrays.
//! The expression grammar is a sum of monomials in `cos`, `sin` (of the polar angle
//! measured from the symmetry axis) and `r` (distance to the origin):
//!
//! ```text
//! const:-6
//! polar:-0.3+1.6*cos
//! radial:1-0.5*r^2
//! ```

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::geometry::Mesh;

/// `coef * cos^cos * sin^sin * r^r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    pub cos: i32,
    pub sin: i32,
    pub r: i32,
}

/// A scalar field on the meridional half-plane.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldExpr {
    Const(f64),
    Poly(Vec<Monomial>),
    /// Raw nodal values, matched by length against the sampling target.
    Values(Vec<f64>),
}

impl FieldExpr {
    /// Value at a meridional point `(xi, zeta)`.
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        match self {
            FieldExpr::Const(c) => *c,
            FieldExpr::Poly(terms) => {
                let r = p[0].hypot(p[1]);
                let (c, s) = if r > 0.0 { (p[1] / r, p[0].abs() / r) } else { (1.0, 0.0) };
                terms.iter().map(|m| m.coef * c.powi(m.cos) * s.powi(m.sin) * r.powi(m.r)).sum()
            }
            FieldExpr::Values(_) => f64::NAN,
        }
    }

    fn realize(&self, points: impl ExactSizeIterator<Item = [f64; 2]>) -> Result<Vec<f64>> {
        match self {
            FieldExpr::Values(v) => {
                check_len(points.len(), v.len())?;
                Ok(v.clone())
            }
            _ => Ok(points.map(|p| self.eval(p)).collect()),
        }
    }

    /// Nodal values on every mesh node.
    pub fn sample(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        self.realize(mesh.nodes().iter().copied())
    }

    /// Nodal values on the primary boundary.
    pub fn sample_boundary(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        let nodes = mesh.nodes();
        self.realize(mesh.boundary().nodes.iter().map(|&k| nodes[k]))
    }
}

impl fmt::Display for FieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldExpr::Const(c) => write!(f, "const:{c}"),
            FieldExpr::Values(v) => write!(f, "values[{}]", v.len()),
            FieldExpr::Poly(terms) => {
                let prefix = if terms.iter().any(|m| m.r != 0) { "radial" } else { "polar" };
                write!(f, "{prefix}:")?;
                for (i, m) in terms.iter().enumerate() {
                    if i > 0 && m.coef >= 0.0 {
                        write!(f, "+")?;
                    }
                    write!(f, "{}", m.coef)?;
                    for (name, e) in [("cos", m.cos), ("sin", m.sin), ("r", m.r)] {
                        match e {
                            0 => {}
                            1 => write!(f, "*{name}")?,
                            _ => write!(f, "*{name}^{e}")?,
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

impl FromStr for FieldExpr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, body) = s.split_once(':').ok_or_else(|| Error::Config(format!("field `{s}` needs a `kind:` prefix")))?;
        let allowed: &[&str] = match kind.trim() {
            "const" => {
                let c = body.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad constant `{body}`")))?;
                return Ok(FieldExpr::Const(c));
            }
            "polar" => &["cos", "sin"],
            "radial" => &["r"],
            other => return Err(Error::Config(format!("unknown field kind `{other}`"))),
        };
        parse_poly(body, allowed).map(FieldExpr::Poly)
    }
}

fn parse_poly(body: &str, allowed: &[&str]) -> Result<Vec<Monomial>> {
    let compact: String = body.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.is_empty() {
        return Err(Error::Config("empty field expression".into()));
    }
    // Split on +/- that are not part of an exponent like 1e-3.
    let mut terms = Vec::new();
    let mut start = 0;
    let bytes = compact.as_bytes();
    for i in 1..bytes.len() {
        let c = bytes[i];
        if (c == b'+' || c == b'-') && !matches!(bytes[i - 1], b'e' | b'E' | b'*' | b'^') {
            terms.push(&compact[start..i]);
            start = i;
        }
    }
    terms.push(&compact[start..]);
    terms.into_iter().map(|t| parse_term(t, allowed)).collect()
}

fn parse_term(term: &str, allowed: &[&str]) -> Result<Monomial> {
    let bad = || Error::Config(format!("cannot parse term `{term}`"));
    let (sign, rest) = match term.as_bytes().first() {
        Some(b'-') => (-1.0, &term[1..]),
        Some(b'+') => (1.0, &term[1..]),
        _ => (1.0, term),
    };
    let mut m = Monomial { coef: sign, cos: 0, sin: 0, r: 0 };
    for factor in rest.split('*') {
        if factor.is_empty() {
            return Err(bad());
        }
        if let Ok(c) = factor.parse::<f64>() {
            m.coef *= c;
            continue;
        }
        let (name, exp) = match factor.split_once('^') {
            Some((n, e)) => (n, e.parse::<i32>().map_err(|_| bad())?),
            None => (factor, 1),
        };
        if !allowed.contains(&name) {
            return Err(Error::Config(format!("variable `{name}` not allowed in `{term}`")));
        }
        match name {
            "cos" => m.cos += exp,
            "sin" => m.sin += exp,
            "r" => m.r += exp,
            _ => return Err(bad()),
        }
    }
    Ok(m)
}

/// Curvature data realized on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureData {
    pub n: usize,
    /// Target scalar curvature at every node.
    pub k: Vec<f64>,
    /// Target boundary mean curvature at every primary-boundary node.
    pub h: Vec<f64>,
    /// Background scalar curvature at every node.
    pub s: Vec<f64>,
    /// Background boundary mean curvature at every primary-boundary node.
    pub hg: Vec<f64>,
}

impl CurvatureData {
    pub fn new(mesh: &Mesh, k: Vec<f64>, h: Vec<f64>, s: Vec<f64>, hg: Vec<f64>) -> Result<Self> {
        check_len(mesh.len(), k.len())?;
        check_len(mesh.len(), s.len())?;
        check_len(mesh.boundary().len(), h.len())?;
        check_len(mesh.boundary().len(), hg.len())?;
        let data = CurvatureData { n: mesh.dim(), k, h, s, hg };
        data.validate()?;
        Ok(data)
    }

    pub fn from_exprs(mesh: &Mesh, k: &FieldExpr, h: &FieldExpr, s: &FieldExpr, hg: &FieldExpr) -> Result<Self> {
        Self::new(mesh, k.sample(mesh)?, h.sample_boundary(mesh)?, s.sample(mesh)?, hg.sample_boundary(mesh)?)
    }

    pub fn constant(mesh: &Mesh, k: f64, h: f64, s: f64, hg: f64) -> Result<Self> {
        Self::new(mesh, vec![k; mesh.len()], vec![h; mesh.boundary().len()], vec![s; mesh.len()], vec![hg; mesh.boundary().len()])
    }

    /// Copy with a different boundary mean curvature.
    pub fn with_h(&self, h: Vec<f64>) -> Result<Self> {
        check_len(self.h.len(), h.len())?;
        Ok(CurvatureData { h, ..self.clone() })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.k.iter().find(|&&k| !(k < 0.0)) {
            return Err(Error::Invariant(format!("K must be negative everywhere, found {k}")));
        }
        let (lo, hi) = self.s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if lo * hi < 0.0 {
            return Err(Error::Invariant(format!("S changes sign: range [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Target scalar curvature at the primary-boundary nodes.
    pub fn k_on_boundary(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.trace(&self.k)
    }
}

/// `D_n = sqrt(n(n-1)) H / sqrt|K|` on the boundary.
pub fn dn_value(n: usize, k: f64, h: f64) -> f64 {
    let nf = n as f64;
    (nf * (nf - 1.0)).sqrt() * h / k.abs().sqrt()
}

/// `D_n` along the primary boundary with the norm of its tangential gradient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DnMap {
    pub values: Vec<f64>,
    pub tangential_gradient_norm: Vec<f64>,
}

impl DnMap {
    /// `max(0, max D_n)`.
    pub fn upper_bound(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, &v| a.max(v))
    }
}

pub fn dn_map(data: &CurvatureData, mesh: &Mesh) -> Result<DnMap> {
    data.validate()?;
    let kb = data.k_on_boundary(mesh);
    let values: Vec<f64> = kb.iter().zip(&data.h).map(|(&k, &h)| dn_value(data.n, k, h)).collect();
    let tangential_gradient_norm = mesh.tangential_derivative(&values)?.into_iter().map(f64::abs).collect();
    Ok(DnMap { values, tangential_gradient_norm })
}

/// Boundary nodes (as positions in the boundary list) split by `D_n` relative to 1.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct BoundaryClasses {
    pub below: Vec<usize>,
    pub band: Vec<usize>,
    pub above: Vec<usize>,
}

pub fn classify_boundary(dn: &DnMap, band: f64) -> BoundaryClasses {
    let mut out = BoundaryClasses::default();
    for (k, &v) in dn.values.iter().enumerate() {
        if v < 1.0 - band {
            out.below.push(k);
        } else if v > 1.0 + band {
            out.above.push(k);
        } else {
            out.band.push(k);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularValueReport {
    pub regular: bool,
    /// Band nodes whose tangential gradient is below the threshold.
    pub violations: Vec<usize>,
    pub band_nodes: usize,
}

/// Whether 1 is a regular value of `D_n` at the resolution of the band.
pub fn regular_value_check(dn: &DnMap, band: f64, delta: f64) -> RegularValueReport {
    let classes = classify_boundary(dn, band);
    let violations: Vec<usize> = classes.band.iter().copied().filter(|&k| dn.tangential_gradient_norm[k] < delta).collect();
    RegularValueReport { regular: violations.is_empty(), violations, band_nodes: classes.band.len() }
}

/// Random smooth field: a truncated polynomial with coefficients uniform in `[-1, 1]`
/// damped by total degree, in `(r, cos)` on balls and `(s/L, z/Hgt)` on the half-box.
pub fn random_smooth_field(mesh: &Mesh, seed: u64, degree: usize) -> Vec<f64> {
    use crate::geometry::DomainKind;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut coef = vec![vec![0.0; degree + 1]; degree + 1];
    for (a, row) in coef.iter_mut().enumerate() {
        for (b, c) in row.iter_mut().enumerate() {
            if a + b <= degree {
                *c = rng.gen_range(-1.0..1.0) / (1.0 + (a + b) as f64);
            }
        }
    }
    let kind = mesh.kind();
    mesh.sample(|p| {
        let (x, y) = match kind {
            DomainKind::AxiHalfBox { half_width, height } => (p[0] / half_width, p[1] / height),
            DomainKind::RadialBall { .. } => (p[0], 0.0),
            DomainKind::AxiBall3 | DomainKind::AxiHalfBall { .. } => {
                let r = p[0].hypot(p[1]);
                (r, if r > 0.0 { p[1] / r } else { 1.0 })
            }
        };
        let mut v = 0.0;
        for (a, row) in coef.iter().enumerate() {
            for (b, c) in row.iter().enumerate() {
                if *c != 0.0 {
                    v += c * x.powi(a as i32) * y.powi(b as i32);
                }
            }
        }
        v
    })
}
