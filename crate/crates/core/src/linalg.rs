//! Matrix-free Krylov solvers, diagonal and banded-Cholesky preconditioners.

use crate::error::{Error, Result};
use crate::geometry::pairwise_sum;

/// A symmetric linear operator acting on nodal vectors.
pub trait LinearOperator {
    fn len(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovStats {
    pub iterations: usize,
    /// Final residual relative to the right-hand side.
    pub relative_residual: f64,
    pub converged: bool,
    /// CG met a direction with `p^T A p <= 0`.
    pub negative_curvature: bool,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    pairwise_sum(&prod)
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Symmetric positive definite approximation of `A^{-1}`.
pub trait Preconditioner {
    fn precondition(&self, r: &[f64], z: &mut [f64]);
}

/// Inverse of `|diag|`.
#[derive(Debug, Clone)]
pub struct Jacobi(Vec<f64>);

impl Jacobi {
    pub fn new(diag: &[f64]) -> Self {
        Jacobi(diag.iter().map(|&d| if d.abs() > 1e-300 { 1.0 / d.abs() } else { 1.0 }).collect())
    }
}

impl Preconditioner for Jacobi {
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        for ((z, r), m) in z.iter_mut().zip(r).zip(&self.0) {
            *z = r * m;
        }
    }
}

/// Cholesky factor `L L^T` of a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    /// Row `i` holds columns `i - bw ..= i`.
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Factors the matrix with the given diagonal and strictly lower entries `(i, j, a_ij)`, `i > j`.
    pub fn factor(diag: &[f64], lower: &[(usize, usize, f64)]) -> Result<Self> {
        let n = diag.len();
        let bw = lower.iter().map(|&(i, j, _)| i - j).max().unwrap_or(0);
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for (i, d) in diag.iter().enumerate() {
            l[i * w + bw] = *d;
        }
        for &(i, j, a) in lower {
            l[i * w + j + bw - i] += a;
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let jlo = j.saturating_sub(bw).max(lo);
                let mut s = l[i * w + j + bw - i];
                for k in jlo..j {
                    s -= l[i * w + k + bw - i] * l[j * w + k + bw - j];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Invariant(format!("band matrix not positive definite at row {i}")));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + j + bw - i] = s / l[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + k + bw - i] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.l[k * w + i + bw - k] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
    }
}

impl Preconditioner for BandedCholesky {
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        self.solve(r, z);
    }
}

/// Jacobi-preconditioned conjugate gradients for `A x = b`, starting from `x`.
///
/// Stops at `|r| <= rtol |b|`. On negative curvature the iterate reached so far is
/// kept and the flag is set.
pub fn pcg<A: LinearOperator>(a: &A, diag: &[f64], b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> KrylovStats {
    pcg_with(a, &Jacobi::new(diag), b, x, rtol, max_iter)
}

pub fn pcg_with<A: LinearOperator, M: Preconditioner>(
    a: &A,
    m: &M,
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    max_iter: usize,
) -> KrylovStats {
    let n = b.len();
    let bnorm = norm(b).max(1e-300);
    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = vec![0.0; n];
    m.precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut stats =
        KrylovStats { iterations: 0, relative_residual: norm(&r) / bnorm, converged: false, negative_curvature: false };
    if stats.relative_residual <= rtol {
        stats.converged = true;
        return stats;
    }
    for it in 1..=max_iter {
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            stats.negative_curvature = true;
            return stats;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        stats.iterations = it;
        stats.relative_residual = norm(&r) / bnorm;
        if stats.relative_residual <= rtol {
            stats.converged = true;
            return stats;
        }
        m.precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    stats
}

/// Preconditioned MINRES for symmetric, possibly indefinite `A`; uses `|diag|`.
pub fn minres<A: LinearOperator>(a: &A, diag: &[f64], b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> KrylovStats {
    minres_with(a, &Jacobi::new(diag), b, x, rtol, max_iter)
}

/// Preconditioned MINRES; the preconditioner must be symmetric positive definite.
pub fn minres_with<A: LinearOperator, M: Preconditioner>(
    a: &A,
    m: &M,
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    max_iter: usize,
) -> KrylovStats {
    let n = b.len();
    let mut r1 = vec![0.0; n];
    a.apply(x, &mut r1);
    for i in 0..n {
        r1[i] = b[i] - r1[i];
    }
    let mut y = vec![0.0; n];
    m.precondition(&r1, &mut y);
    let beta1 = dot(&r1, &y).max(0.0).sqrt();
    let mut stats = KrylovStats { iterations: 0, relative_residual: 0.0, converged: true, negative_curvature: false };
    if beta1 == 0.0 {
        return stats;
    }
    let bnorm = {
        let mut bz = vec![0.0; n];
        m.precondition(b, &mut bz);
        dot(b, &bz).sqrt().max(1e-300)
    };
    let mut r2 = r1.clone();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0, 0.0);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    stats.converged = false;
    for it in 1..=max_iter {
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        a.apply(&v, &mut y);
        if it >= 2 {
            for i in 0..n {
                y[i] -= (beta / oldb) * r1[i];
            }
        }
        let alfa = dot(&v, &y);
        for i in 0..n {
            y[i] -= (alfa / beta) * r2[i];
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        m.precondition(&r2, &mut y);
        oldb = beta;
        beta = dot(&r2, &y).max(0.0).sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        for i in 0..n {
            let w1 = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - oldeps * w1 - delta * w2[i]) / gamma;
            x[i] += phi * w[i];
        }
        stats.iterations = it;
        stats.relative_residual = phibar / bnorm;
        if stats.relative_residual <= rtol || beta == 0.0 {
            stats.converged = true;
            break;
        }
    }
    stats
}
