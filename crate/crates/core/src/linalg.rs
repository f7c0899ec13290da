//! Conjugate gradients for Hermitian positive (semi-)definite operators and
//! regularized dense least squares.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::{norm_sqr, rdot, C64};

/// Ridge weight for least-squares calibration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tikhonov {
    /// Added to the diagonal of `AᴴA` as is.
    Absolute(f64),
    /// Scaled by `trace(AᴴA) / cols`.
    Relative(f64),
}

impl Default for Tikhonov {
    fn default() -> Self {
        Tikhonov::Relative(1e-6)
    }
}

impl Tikhonov {
    pub fn validate(&self) -> Result<()> {
        let v = match self {
            Tikhonov::Absolute(v) | Tikhonov::Relative(v) => *v,
        };
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("tikhonov weight must be finite and >= 0, got {v}")))
        }
    }
}

/// Solves `min ‖A X − B‖² + λ‖X‖²` column-wise via the normal equations.
pub fn ridge_solve(a: &DMatrix<C64>, b: &DMatrix<C64>, reg: Tikhonov) -> Result<DMatrix<C64>> {
    reg.validate()?;
    let mut gram = a.ad_mul(a);
    let cols = gram.ncols();
    let lambda = match reg {
        Tikhonov::Absolute(v) => v,
        Tikhonov::Relative(v) => v * (0..cols).map(|i| gram[(i, i)].re).sum::<f64>() / cols as f64,
    };
    for i in 0..cols {
        gram[(i, i)] += C64::new(lambda, 0.0);
    }
    let rhs = a.ad_mul(b);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Calibration("calibration system is singular; increase tikhonov".into()))?;
    Ok(chol.solve(&rhs))
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<C64>,
    /// `‖b − A x_k‖ / ‖b‖` after each iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Solves `A x = b` starting from `x0`. Stops once the relative residual
/// drops below `tol` or after `max_iter` iterations. `on_iter` sees every
/// iterate.
pub fn conjugate_gradient<A, F>(apply: A, b: &[C64], x0: Vec<C64>, tol: f64, max_iter: usize, mut on_iter: F) -> CgOutcome
where
    A: Fn(&[C64]) -> Vec<C64>,
    F: FnMut(&[C64]),
{
    let b_norm = norm_sqr(b).sqrt();
    let mut x = x0;
    if b_norm == 0.0 && norm_sqr(&x) == 0.0 {
        return CgOutcome { x, residuals: vec![0.0], converged: true };
    }
    let ax = apply(&x);
    let mut r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let mut rs = norm_sqr(&r);
    let mut residuals = Vec::new();
    if rs.sqrt() / scale < tol {
        return CgOutcome { x, residuals: vec![rs.sqrt() / scale], converged: true };
    }
    let mut p = r.clone();
    let mut converged = false;
    for _ in 0..max_iter {
        let ap = apply(&p);
        let pap = rdot(&p, &ap);
        if !(pap > 0.0) {
            // search direction in the null space: the iterate cannot improve
            residuals.push(rs.sqrt() / scale);
            break;
        }
        let alpha = rs / pap;
        for i in 0..x.len() {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        let rs_new = norm_sqr(&r);
        on_iter(&x);
        residuals.push(rs_new.sqrt() / scale);
        if rs_new.sqrt() / scale < tol {
            converged = true;
            break;
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..p.len() {
            p[i] = r[i] + p[i] * beta;
        }
    }
    CgOutcome { x, residuals, converged }
}

/// Conjugate residuals for Hermitian positive semi-definite `A`. Same
/// Krylov space as CG, but each iterate minimizes `‖b − A x‖`, so the residual
/// history is non-increasing. One operator application per iteration.
pub fn conjugate_residual<A, F>(apply: A, b: &[C64], x0: Vec<C64>, tol: f64, max_iter: usize, mut on_iter: F) -> CgOutcome
where
    A: Fn(&[C64]) -> Vec<C64>,
    F: FnMut(&[C64]),
{
    let b_norm = norm_sqr(b).sqrt();
    let mut x = x0;
    if b_norm == 0.0 && norm_sqr(&x) == 0.0 {
        return CgOutcome { x, residuals: vec![0.0], converged: true };
    }
    let ax = apply(&x);
    let mut r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let mut res = norm_sqr(&r).sqrt() / scale;
    if res < tol {
        return CgOutcome { x, residuals: vec![res], converged: true };
    }
    let mut ar = apply(&r);
    let mut rar = rdot(&r, &ar);
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let apap = norm_sqr(&ap);
        if !(rar > 0.0 && apap > 0.0) {
            residuals.push(res);
            break;
        }
        let alpha = rar / apap;
        for i in 0..x.len() {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        on_iter(&x);
        res = norm_sqr(&r).sqrt() / scale;
        residuals.push(res);
        if res < tol {
            converged = true;
            break;
        }
        ar = apply(&r);
        let rar_new = rdot(&r, &ar);
        let beta = rar_new / rar;
        rar = rar_new;
        for i in 0..p.len() {
            p[i] = r[i] + p[i] * beta;
            ap[i] = ar[i] + ap[i] * beta;
        }
    }
    CgOutcome { x, residuals, converged }
}
