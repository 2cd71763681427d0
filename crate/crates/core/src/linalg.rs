//! Linear solvers: Jacobi-preconditioned conjugate gradients for symmetric
//! positive (semi-)definite systems and a sparse Cholesky backend.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::CsrMatrix;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("conjugate gradients stopped after {iterations} iterations at relative residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("negative curvature p^T A p = {0:e}: matrix is not positive semi-definite")]
    NegativeCurvature(f64),
    #[error("sparse Cholesky factorization failed: {0}")]
    Factorization(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Sparse Cholesky factorization.
    #[default]
    Cholesky,
    /// Jacobi-preconditioned conjugate gradients.
    Pcg,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Number of interleaved components whose constant vectors span the
    /// kernel; the right side and iterates are projected to zero mean in each.
    pub null_components: Option<usize>,
}

impl CgOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        CgOptions { tol, max_iter, null_components: None }
    }

    pub fn singular(mut self, m: usize) -> Self {
        self.null_components = Some(m);
        self
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SolveInfo {
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Removes the per-component mean of an interleaved vector.
pub fn project_mean(x: &mut [f64], m: usize) {
    let nodes = x.len() / m;
    for alpha in 0..m {
        let mean = x.iter().skip(alpha).step_by(m).sum::<f64>() / nodes as f64;
        x.iter_mut().skip(alpha).step_by(m).for_each(|v| *v -= mean);
    }
}

/// Solves `a x = b` by Jacobi-preconditioned CG starting from `x`.
///
/// The stopping test is `|b - a x| <= tol |b|`. For singular systems with a
/// known constant kernel the right side is projected onto the range first, so
/// the iteration stays consistent, and the returned iterate has zero mean.
pub fn pcg(a: &CsrMatrix, b: &[f64], x: &mut [f64], opts: &CgOptions) -> Result<SolveInfo, SolveError> {
    let n = a.n();
    let mut rhs = b.to_vec();
    if let Some(m) = opts.null_components {
        project_mean(&mut rhs, m);
    }
    let bnorm = dot(&rhs, &rhs).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveInfo { iterations: 0, residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    r.iter_mut().zip(&rhs).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / bnorm;
    let mut it = 0;
    while res > opts.tol {
        if it >= opts.max_iter {
            return Err(SolveError::NotConverged { iterations: it, residual: res });
        }
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            if pap < 0.0 {
                return Err(SolveError::NegativeCurvature(pap));
            }
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = dot(&r, &r).sqrt() / bnorm;
        it += 1;
    }
    if let Some(m) = opts.null_components {
        project_mean(x, m);
    }
    Ok(SolveInfo { iterations: it, residual: res })
}

/// Sparse Cholesky factorization of a symmetric positive definite matrix.
pub struct Cholesky {
    llt: Llt<usize, f64>,
    n: usize,
}

impl Cholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self, SolveError> {
        let upper = a.to_faer_upper();
        let llt = upper.sp_cholesky(Side::Upper).map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
        Ok(Cholesky { llt, n: a.n() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut m = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.llt.solve_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }

    /// Solves for every column of `b` in place.
    pub fn solve_many(&self, b: &mut Mat<f64>) {
        self.llt.solve_in_place(b.as_mut());
    }
}

/// Relative residual |b - a x| / |b| (0 when b = 0 and a x = 0).
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul(x);
    let r: f64 = ax.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let bn = dot(b, b).sqrt();
    if bn == 0.0 {
        r
    } else {
        r / bn
    }
}

/// Solves an SPD system with the chosen backend.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], backend: Backend, tol: f64) -> Result<(Vec<f64>, SolveInfo), SolveError> {
    match backend {
        Backend::Cholesky => {
            let x = Cholesky::new(a)?.solve(b);
            let residual = relative_residual(a, &x, b);
            Ok((x, SolveInfo { iterations: 0, residual }))
        }
        Backend::Pcg => {
            let mut x = vec![0.0; a.n()];
            let info = pcg(a, b, &mut x, &CgOptions::new(tol, 20 * a.n().max(100)))?;
            Ok((x, info))
        }
    }
}
