//! Dirichlet, Neumann and Steklov eigenvalues of the oscillatory and
//! homogenized operators, their gaps along an ε ladder, the resolvent form
//! of the gap inequality, and the Neumann-to-Dirichlet operator gap.

use std::sync::Arc;

use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{Mat, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeff::Tensor;
use crate::domain::{DomainError, Polygon, StructMesh};
use crate::fem::{self, CsrMatrix};
use crate::harness::fit::{fit_slope, FitError, SlopeFit};
use crate::linalg::{Cholesky, SolveError};
use crate::solver::{self, Operator, SolverError};
use crate::torus::{CellError, CorrectorSet};

/// Largest number of eigenvalues a single call may request.
pub const MAX_EIGS: usize = 20;

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("requested {0} eigenvalues, at most {MAX_EIGS} are supported")]
    TooMany(usize),
    #[error("eigensolver did not converge in {iterations} iterations (worst residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("problem has only {0} degrees of freedom")]
    TooSmall(usize),
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
    #[error("dense factorization failed: {0}")]
    Dense(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenKind {
    Dirichlet,
    Neumann,
    Steklov,
}

impl EigenKind {
    pub fn name(self) -> &'static str {
        match self {
            EigenKind::Dirichlet => "dirichlet",
            EigenKind::Neumann => "neumann",
            EigenKind::Steklov => "steklov",
        }
    }
}

impl std::str::FromStr for EigenKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dirichlet" => Ok(EigenKind::Dirichlet),
            "neumann" => Ok(EigenKind::Neumann),
            "steklov" => Ok(EigenKind::Steklov),
            other => Err(format!("unknown eigenproblem kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Relative residual target for every reported pair.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Relative spacing below which neighbouring eigenvalues form a cluster.
    pub cluster_tol: f64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { tol: 1e-9, max_iter: 300, seed: 0x5eed, cluster_tol: 1e-6 }
    }
}

/// Eigenvalues of one problem, ascending, zero modes removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub kind: EigenKind,
    /// Period; 0 for the homogenized operator.
    pub eps: f64,
    pub h: f64,
    pub eigenvalues: Vec<f64>,
    /// ‖K u − λ M u‖ / (λ ‖M u‖) per pair.
    pub residuals: Vec<f64>,
    /// |λ − uᵀKu / uᵀMu| / λ per pair.
    pub rayleigh_defects: Vec<f64>,
    /// Groups of (1-based) indices whose eigenvalues coincide to `cluster_tol`.
    pub clusters: Vec<Vec<usize>>,
    pub iterations: usize,
    /// M-orthonormal eigenvectors over all dofs (boundary dofs for Steklov).
    #[serde(skip)]
    pub eigenvectors: Vec<Vec<f64>>,
}

impl SpectrumReport {
    /// Index range (0-based, half open) of the cluster containing index k.
    pub fn cluster_of(&self, k: usize) -> (usize, usize) {
        for c in &self.clusters {
            if c.contains(&(k + 1)) {
                return (c[0] - 1, *c.last().unwrap());
            }
        }
        (k, k + 1)
    }
}

fn find_clusters(vals: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut cur = vec![1];
    for k in 1..vals.len() {
        if (vals[k] - vals[k - 1]).abs() <= tol * vals[k].abs().max(vals[k - 1].abs()) {
            cur.push(k + 1);
        } else {
            if cur.len() > 1 {
                out.push(cur.clone());
            }
            cur = vec![k + 1];
        }
    }
    if cur.len() > 1 {
        out.push(cur);
    }
    out
}

struct EigenPairs {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    residuals: Vec<f64>,
    rayleigh: Vec<f64>,
    iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// M-orthonormalizes the columns of `z` in place (modified Gram-Schmidt,
/// two passes).
fn m_orthonormalize(z: &mut [Vec<f64>], m: &CsrMatrix) {
    for _ in 0..2 {
        for j in 0..z.len() {
            for i in 0..j {
                let mz = m.mul(&z[i]);
                let c = dot(&mz, &z[j]);
                let (head, tail) = z.split_at_mut(j);
                for (a, b) in tail[0].iter_mut().zip(&head[i]) {
                    *a -= c * b;
                }
            }
            let nrm = m.form(&z[j], &z[j]).max(0.0).sqrt();
            if nrm > 0.0 {
                z[j].iter_mut().for_each(|v| *v /= nrm);
            }
        }
    }
}

fn deflate(z: &mut [Vec<f64>], basis: &[Vec<f64>], mbasis: &[Vec<f64>]) {
    for col in z.iter_mut() {
        for (b, mb) in basis.iter().zip(mbasis) {
            let c = dot(mb, col);
            for (a, v) in col.iter_mut().zip(b) {
                *a -= c * v;
            }
        }
    }
}

/// Symmetric eigen decomposition of a small dense matrix (ascending).
fn dense_eigen(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>), SpectraError> {
    let e = a.self_adjoint_eigen(Side::Lower).map_err(|e| SpectraError::Dense(format!("{e:?}")))?;
    let s = e.S().column_vector();
    let vals = (0..a.nrows()).map(|i| s[i]).collect();
    Ok((vals, e.U().to_owned()))
}

/// Smallest `nev` eigenpairs of K x = λ M x in the M-orthogonal complement of
/// `deflation`, by shift-invert block subspace iteration with Rayleigh-Ritz.
fn subspace_eigs(
    k: &CsrMatrix,
    m: &CsrMatrix,
    nev: usize,
    shift: f64,
    deflation: &[Vec<f64>],
    opts: &EigenOptions,
    fingerprint: u64,
) -> Result<EigenPairs, SpectraError> {
    let n = k.n();
    let avail = n.saturating_sub(deflation.len());
    if nev == 0 || nev > avail {
        return Err(SpectraError::TooSmall(n));
    }
    let p = (2 * nev).max(nev + 8).min(avail);
    let a = if shift == 0.0 { k.clone() } else { k.add_scaled(-shift, m) };
    let chol = Cholesky::new(&a)?;
    let mut basis: Vec<Vec<f64>> = deflation.to_vec();
    m_orthonormalize(&mut basis, m);
    let mbasis: Vec<Vec<f64>> = basis.iter().map(|b| m.mul(b)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ fingerprint);
    let mut x: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut worst = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let mut rhs = Mat::<f64>::zeros(n, p);
        for (j, col) in x.iter().enumerate() {
            rhs.col_as_slice_mut(j).copy_from_slice(&m.mul(col));
        }
        chol.solve_many(&mut rhs);
        let mut z: Vec<Vec<f64>> = (0..p).map(|j| rhs.col_as_slice(j).to_vec()).collect();
        deflate(&mut z, &basis, &mbasis);
        m_orthonormalize(&mut z, m);
        let kz: Vec<Vec<f64>> = z.iter().map(|c| k.mul(c)).collect();
        let mut kr = Mat::<f64>::zeros(p, p);
        for i in 0..p {
            for j in 0..=i {
                let v = 0.5 * (dot(&z[i], &kz[j]) + dot(&z[j], &kz[i]));
                kr[(i, j)] = v;
                kr[(j, i)] = v;
            }
        }
        let (theta, v) = dense_eigen(&kr)?;
        x = (0..p)
            .map(|c| {
                let mut col = vec![0.0; n];
                for (i, zi) in z.iter().enumerate() {
                    let w = v[(i, c)];
                    for (a, b) in col.iter_mut().zip(zi) {
                        *a += w * b;
                    }
                }
                col
            })
            .collect();
        let mut residuals = Vec::with_capacity(nev);
        let mut rayleigh = Vec::with_capacity(nev);
        for j in 0..nev {
            let kx = k.mul(&x[j]);
            let mx = m.mul(&x[j]);
            let lam = theta[j];
            let r: Vec<f64> = kx.iter().zip(&mx).map(|(a, b)| a - lam * b).collect();
            residuals.push(norm(&r) / (lam.abs() * norm(&mx)).max(f64::MIN_POSITIVE));
            let rq = dot(&x[j], &kx) / dot(&x[j], &mx);
            rayleigh.push((lam - rq).abs() / lam.abs().max(f64::MIN_POSITIVE));
        }
        worst = residuals.iter().fold(0.0f64, |s, &r| s.max(r));
        if worst <= opts.tol {
            x.truncate(nev);
            return Ok(EigenPairs { values: theta[..nev].to_vec(), vectors: x, residuals, rayleigh, iterations: it });
        }
    }
    Err(SpectraError::NotConverged { iterations: opts.max_iter, residual: worst })
}

/// Stiffness matrix of the operator and the consistent mass matrix.
pub fn stiffness_and_mass(op: &Operator, mesh: &StructMesh, q: usize) -> Result<(CsrMatrix, CsrMatrix), SpectraError> {
    let k = solver::stiffness(op, mesh, q)?;
    let m = fem::assemble_mass(mesh, op.m());
    Ok((k, m))
}

fn interior_map(mesh: &StructMesh, m: usize) -> (Vec<usize>, usize) {
    let ndof = mesh.nodes.len() * m;
    let mut map = vec![usize::MAX; ndof];
    let mut k = 0;
    for (d, slot) in map.iter_mut().enumerate() {
        if !mesh.boundary[d / m] {
            *slot = k;
            k += 1;
        }
    }
    (map, k)
}

fn check_count(k: usize) -> Result<(), SpectraError> {
    if k > MAX_EIGS {
        Err(SpectraError::TooMany(k))
    } else {
        Ok(())
    }
}

fn report(kind: EigenKind, op: &Operator, mesh: &StructMesh, pairs: EigenPairs, opts: &EigenOptions) -> SpectrumReport {
    SpectrumReport {
        kind,
        eps: op.eps().unwrap_or(0.0),
        h: mesh.h,
        clusters: find_clusters(&pairs.values, opts.cluster_tol),
        eigenvalues: pairs.values,
        residuals: pairs.residuals,
        rayleigh_defects: pairs.rayleigh,
        iterations: pairs.iterations,
        eigenvectors: pairs.vectors,
    }
}

/// The `count` smallest Dirichlet eigenvalues. Eigenvectors are returned over
/// all dofs with zeros on the boundary.
pub fn dirichlet_eigs(
    op: &Operator,
    mesh: &StructMesh,
    q: usize,
    count: usize,
    opts: &EigenOptions,
) -> Result<SpectrumReport, SpectraError> {
    check_count(count)?;
    let (k, m) = stiffness_and_mass(op, mesh, q)?;
    let nc = op.m();
    let (map, ni) = interior_map(mesh, nc);
    let (kii, mii) = (k.extract(&map, ni, &map), m.extract(&map, ni, &map));
    let mut pairs = subspace_eigs(&kii, &mii, count, 0.0, &[], opts, mesh.fingerprint())?;
    pairs.vectors = pairs
        .vectors
        .iter()
        .map(|v| map.iter().map(|&r| if r == usize::MAX { 0.0 } else { v[r] }).collect())
        .collect();
    Ok(report(EigenKind::Dirichlet, op, mesh, pairs, opts))
}

/// Per-component constant vectors (the kernel of the Neumann operator).
fn constants(ndof: usize, m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|a| (0..ndof).map(|d| if d % m == a { 1.0 } else { 0.0 }).collect()).collect()
}

/// Shift below the spectrum that scales with the operator: minus the mean
/// diagonal coefficient recovered from the stiffness diagonal.
fn neumann_shift(k: &CsrMatrix) -> f64 {
    let d = k.diagonal();
    // A bilinear interior diagonal equals 8/3 times the local coefficient.
    -0.375 * d.iter().sum::<f64>() / d.len() as f64
}

/// The `count` smallest nonzero Neumann eigenvalues; the constants are
/// deflated so eigenvectors have zero mean.
pub fn neumann_eigs(
    op: &Operator,
    mesh: &StructMesh,
    q: usize,
    count: usize,
    opts: &EigenOptions,
) -> Result<SpectrumReport, SpectraError> {
    check_count(count)?;
    let (k, m) = stiffness_and_mass(op, mesh, q)?;
    let defl = constants(k.n(), op.m());
    let pairs = subspace_eigs(&k, &m, count, neumann_shift(&k), &defl, opts, mesh.fingerprint())?;
    Ok(report(EigenKind::Neumann, op, mesh, pairs, opts))
}

/// Boundary mass matrix ∫_∂Ω φ_a φ_b over the boundary dofs (in the order
/// of `boundary_dofs`).
pub fn boundary_mass(mesh: &StructMesh, m: usize, bmap: &[usize], nb: usize) -> Mat<f64> {
    let mut b = Mat::<f64>::zeros(nb, nb);
    for e in &mesh.boundary_edges {
        let [p, q] = e.nodes;
        for a in 0..m {
            let (i, j) = (bmap[p * m + a], bmap[q * m + a]);
            b[(i, i)] += mesh.h / 3.0;
            b[(j, j)] += mesh.h / 3.0;
            b[(i, j)] += mesh.h / 6.0;
            b[(j, i)] += mesh.h / 6.0;
        }
    }
    b
}

/// Dense discrete Dirichlet-to-Neumann map of one operator in boundary
/// mass-orthonormal coordinates, C = L⁻¹ S L⁻ᵀ with B = L Lᵀ, and its
/// eigen decomposition.
#[derive(Debug, Clone)]
pub struct DtnOperator {
    pub m: usize,
    pub perimeter: f64,
    pub c: Mat<f64>,
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

/// Columns of the Schur complement handled per block of solves.
const SCHUR_BLOCK: usize = 32;

/// S = K_BB − K_BI K_II⁻¹ K_IB, dense.
pub fn schur_complement(k: &CsrMatrix, bmap: &[usize], nb: usize, imap: &[usize], ni: usize) -> Result<Mat<f64>, SpectraError> {
    let kii = k.extract(imap, ni, imap);
    let kbi = k.extract(bmap, nb, imap);
    let kbb = k.extract(bmap, nb, bmap);
    let chol = Cholesky::new(&kii)?;
    let mut s = Mat::<f64>::zeros(nb, nb);
    for j0 in (0..nb).step_by(SCHUR_BLOCK) {
        let bs = SCHUR_BLOCK.min(nb - j0);
        // Column j of K_IB is row j of K_BI.
        let mut x = Mat::<f64>::zeros(ni, bs);
        for c in 0..bs {
            let (cols, vals) = kbi.row(j0 + c);
            for (&i, &v) in cols.iter().zip(vals) {
                x[(i, c)] = v;
            }
        }
        chol.solve_many(&mut x);
        for r in 0..nb {
            let (cols, vals) = kbi.row(r);
            for c in 0..bs {
                let mut acc = kbb.get(r, j0 + c);
                for (&i, &v) in cols.iter().zip(vals) {
                    acc -= v * x[(i, c)];
                }
                s[(r, j0 + c)] = acc;
            }
        }
    }
    // Symmetrize away rounding.
    for i in 0..nb {
        for j in 0..i {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

fn boundary_maps(mesh: &StructMesh, m: usize) -> (Vec<usize>, usize, Vec<usize>, usize) {
    let ndof = mesh.nodes.len() * m;
    let (mut bmap, mut imap) = (vec![usize::MAX; ndof], vec![usize::MAX; ndof]);
    let (mut nb, mut ni) = (0, 0);
    for d in 0..ndof {
        if mesh.boundary[d / m] {
            bmap[d] = nb;
            nb += 1;
        } else {
            imap[d] = ni;
            ni += 1;
        }
    }
    (bmap, nb, imap, ni)
}

impl DtnOperator {
    pub fn build(op: &Operator, mesh: &StructMesh, q: usize) -> Result<Self, SpectraError> {
        let k = solver::stiffness(op, mesh, q)?;
        let m = op.m();
        let (bmap, nb, imap, ni) = boundary_maps(mesh, m);
        let s = schur_complement(&k, &bmap, nb, &imap, ni)?;
        let b = boundary_mass(mesh, m, &bmap, nb);
        let llt = b.llt(Side::Lower).map_err(|e| SpectraError::Dense(format!("{e:?}")))?;
        let l = llt.L().to_owned();
        let mut w = s;
        solve_lower_triangular_in_place(l.as_ref(), w.as_mut(), Par::Seq);
        let mut c = w.transpose().to_owned();
        solve_lower_triangular_in_place(l.as_ref(), c.as_mut(), Par::Seq);
        for i in 0..nb {
            for j in 0..i {
                let v = 0.5 * (c[(i, j)] + c[(j, i)]);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        let (values, vectors) = dense_eigen(&c)?;
        Ok(DtnOperator { m, perimeter: mesh.perimeter(), c, values, vectors })
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    /// Pseudo-inverse on the complement of the m constant modes: the
    /// discrete Neumann-to-Dirichlet map.
    pub fn ntd(&self) -> Mat<f64> {
        let n = self.n();
        let mut out = Mat::<f64>::zeros(n, n);
        for k in self.m..n {
            let inv = 1.0 / self.values[k];
            for j in 0..n {
                let vj = self.vectors[(j, k)] * inv;
                if vj == 0.0 {
                    continue;
                }
                for i in 0..n {
                    out[(i, j)] += self.vectors[(i, k)] * vj;
                }
            }
        }
        out
    }
}

/// The `count` smallest nonzero Steklov eigenvalues s, where
/// ∂u/∂ν = s |∂Ω|⁻¹ u on the boundary.
pub fn steklov_eigs(
    op: &Operator,
    mesh: &StructMesh,
    q: usize,
    count: usize,
    opts: &EigenOptions,
) -> Result<SpectrumReport, SpectraError> {
    check_count(count)?;
    let dtn = DtnOperator::build(op, mesh, q)?;
    Ok(steklov_from(&dtn, op, mesh, count, opts))
}

fn steklov_from(dtn: &DtnOperator, op: &Operator, mesh: &StructMesh, count: usize, opts: &EigenOptions) -> SpectrumReport {
    let n = dtn.n();
    let m = dtn.m;
    let count = count.min(n - m);
    let mut eigenvalues = Vec::with_capacity(count);
    let mut residuals = Vec::with_capacity(count);
    let mut rayleigh = Vec::with_capacity(count);
    let mut vectors = Vec::with_capacity(count);
    for k in m..m + count {
        let mu = dtn.values[k];
        let v: Vec<f64> = (0..n).map(|i| dtn.vectors[(i, k)]).collect();
        let cv: Vec<f64> = (0..n).map(|i| (0..n).map(|j| dtn.c[(i, j)] * v[j]).sum()).collect();
        let r: Vec<f64> = cv.iter().zip(&v).map(|(a, b)| a - mu * b).collect();
        residuals.push(norm(&r) / (mu.abs() * norm(&v)));
        rayleigh.push((mu - dot(&v, &cv) / dot(&v, &v)).abs() / mu.abs());
        eigenvalues.push(mu * dtn.perimeter);
        vectors.push(v);
    }
    SpectrumReport {
        kind: EigenKind::Steklov,
        eps: op.eps().unwrap_or(0.0),
        h: mesh.h,
        clusters: find_clusters(&eigenvalues, opts.cluster_tol),
        eigenvalues,
        residuals,
        rayleigh_defects: rayleigh,
        iterations: 0,
        eigenvectors: vectors,
    }
}

/// Spectrum of one kind for one operator.
pub fn eigs(
    kind: EigenKind,
    op: &Operator,
    mesh: &StructMesh,
    q: usize,
    count: usize,
    opts: &EigenOptions,
) -> Result<SpectrumReport, SpectraError> {
    match kind {
        EigenKind::Dirichlet => dirichlet_eigs(op, mesh, q, count, opts),
        EigenKind::Neumann => neumann_eigs(op, mesh, q, count, opts),
        EigenKind::Steklov => steklov_eigs(op, mesh, q, count, opts),
    }
}

/// ‖N_ε − N_0‖ for the discrete Neumann-to-Dirichlet maps on one mesh.
pub fn dtn_gap_from(eps_op: &DtnOperator, hom_op: &DtnOperator) -> Result<f64, SpectraError> {
    let (a, b) = (eps_op.ntd(), hom_op.ntd());
    let d = &a - &b;
    let (vals, _) = dense_eigen(&d)?;
    Ok(vals.iter().fold(0.0f64, |s, v| s.max(v.abs())))
}

/// Operator-norm gap between the oscillatory and homogenized
/// Neumann-to-Dirichlet maps at period ε on a mesh of size h.
pub fn dtn_gap(cs: &CorrectorSet, poly: &Polygon, eps: f64, h: f64, q: usize) -> Result<f64, SpectraError> {
    let mesh = StructMesh::build(poly, h)?;
    let e = DtnOperator::build(&Operator::Oscillatory { field: cs.field.clone(), eps }, &mesh, q)?;
    let z = DtnOperator::build(&Operator::Homogenized(cs.a_hat()?.clone()), &mesh, q)?;
    dtn_gap_from(&e, &z)
}

/// One (ε, k) entry of an eigenvalue gap study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub kind: EigenKind,
    pub eps: f64,
    pub h: f64,
    pub k: usize,
    pub lambda_eps: f64,
    pub lambda_0: f64,
    pub gap: f64,
    pub residual_eps: f64,
    pub residual_0: f64,
    /// Mass-norm of the projection of the ε eigenvector onto the homogenized
    /// eigenspace (cluster) of the same index.
    pub overlap: f64,
    /// `overlap >= 0.5`; unmatched entries are flagged, never reordered.
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStudy {
    pub kind: EigenKind,
    pub r: usize,
    pub rows: Vec<GapRow>,
    /// (k, fit) per eigenvalue index; absent when the gaps sit at the floor.
    pub slopes: Vec<(usize, Option<SlopeFit>)>,
    pub spectra: Vec<SpectrumReport>,
    /// ‖N_ε − N_0‖ per ladder point (Steklov studies only).
    pub dtn_gaps: Vec<(f64, f64)>,
    /// Gap inequality for k = 1 at every ladder point (Dirichlet and Neumann).
    pub inequalities: Vec<GapInequality>,
    /// Diagnostic only: slope of |mean of λ_ε over a homogenized cluster − λ_0|
    /// for every multiple eigenvalue among the first k.
    pub cluster_slopes: Vec<(Vec<usize>, Option<SlopeFit>)>,
}

/// Gaps below this are treated as numerically zero and not fitted.
pub const GAP_FLOOR: f64 = 1e-8;

fn overlap(e: &SpectrumReport, z: &SpectrumReport, k: usize, metric: Option<&CsrMatrix>) -> f64 {
    let (lo, hi) = z.cluster_of(k);
    let u = &e.eigenvectors[k];
    let mu = match metric {
        Some(m) => m.mul(u),
        None => u.clone(),
    };
    (lo..hi).map(|j| dot(&mu, &z.eigenvectors[j]).powi(2)).sum::<f64>().sqrt()
}

struct LadderPoint {
    eps: f64,
    rows: Vec<GapRow>,
    spectra: (SpectrumReport, SpectrumReport),
    dtn_gap: Option<f64>,
    inequality: Option<GapInequality>,
    cluster_gaps: Vec<(Vec<usize>, f64)>,
}

#[allow(clippy::too_many_arguments)]
fn ladder_point(
    cs: &CorrectorSet,
    a_hat: &Tensor,
    poly: &Polygon,
    kind: EigenKind,
    eps: f64,
    h: f64,
    count: usize,
    q: usize,
    opts: &EigenOptions,
) -> Result<LadderPoint, SpectraError> {
    let mesh = Arc::new(StructMesh::build(poly, h)?);
    let op_e = Operator::Oscillatory { field: cs.field.clone(), eps };
    let op_0 = Operator::Homogenized(a_hat.clone());
    let mut dtn_gap = None;
    let mut inequality = None;
    let (se, s0, metric) = match kind {
        EigenKind::Steklov => {
            let de = DtnOperator::build(&op_e, &mesh, q)?;
            let d0 = DtnOperator::build(&op_0, &mesh, q)?;
            dtn_gap = Some(dtn_gap_from(&de, &d0)?);
            (steklov_from(&de, &op_e, &mesh, count, opts), steklov_from(&d0, &op_0, &mesh, count, opts), None)
        }
        _ => {
            let se = eigs(kind, &op_e, &mesh, q, count, opts)?;
            let s0 = eigs(kind, &op_0, &mesh, q, count, opts)?;
            inequality = Some(gap_inequality_from(&op_e, &mesh, q, &se, &s0, 1)?);
            (se, s0, Some(fem::assemble_mass(mesh.as_ref(), op_e.m())))
        }
    };
    let mut cluster_gaps = vec![];
    for c in &s0.clusters {
        let (lo, hi) = (c[0] - 1, *c.last().unwrap());
        if hi > se.eigenvalues.len() {
            continue;
        }
        let mean_e = se.eigenvalues[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        let mean_0 = s0.eigenvalues[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        cluster_gaps.push((c.clone(), (mean_e - mean_0).abs()));
    }
    let mut rows = vec![];
    for k in 0..count.min(se.eigenvalues.len()) {
        let ov = overlap(&se, &s0, k, metric.as_ref());
        rows.push(GapRow {
            kind,
            eps,
            h,
            k: k + 1,
            lambda_eps: se.eigenvalues[k],
            lambda_0: s0.eigenvalues[k],
            gap: (se.eigenvalues[k] - s0.eigenvalues[k]).abs(),
            residual_eps: se.residuals[k],
            residual_0: s0.residuals[k],
            overlap: ov,
            matched: ov >= 0.5,
        });
    }
    Ok(LadderPoint { eps, rows, spectra: (se, s0), dtn_gap, inequality, cluster_gaps })
}

/// Runs the oscillatory and homogenized eigenproblems on the mesh h = ε/r for
/// every ladder ε and tabulates |λ_ε^k − λ_0^k|.
pub fn eig_gap_study(
    cs: &CorrectorSet,
    poly: &Polygon,
    kind: EigenKind,
    ladder: &[f64],
    r: usize,
    count: usize,
    q: usize,
    opts: &EigenOptions,
) -> Result<GapStudy, SpectraError> {
    let a_hat: Tensor = cs.a_hat()?.clone();
    // Ladder points are independent; results are merged in ladder order.
    let points: Vec<LadderPoint> = ladder
        .par_iter()
        .map(|&eps| ladder_point(cs, &a_hat, poly, kind, eps, eps / r as f64, count, q, opts))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut spectra = Vec::new();
    let mut dtn_gaps = Vec::new();
    let mut inequalities = Vec::new();
    let mut cluster_pts: Vec<(Vec<usize>, Vec<(f64, f64)>)> = Vec::new();
    for p in points {
        rows.extend(p.rows);
        dtn_gaps.extend(p.dtn_gap.map(|g| (p.eps, g)));
        inequalities.extend(p.inequality);
        for (c, gap) in p.cluster_gaps {
            match cluster_pts.iter_mut().find(|(k, _)| *k == c) {
                Some((_, pts)) => pts.push((p.eps, gap)),
                None => cluster_pts.push((c, vec![(p.eps, gap)])),
            }
        }
        spectra.push(p.spectra.0);
        spectra.push(p.spectra.1);
    }
    let mut slopes = Vec::new();
    for k in 1..=count {
        let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.k == k).map(|r| (r.eps, r.gap)).collect();
        let fit = if pts.len() >= 3 && pts.iter().all(|p| p.1 > GAP_FLOOR) { Some(fit_slope(&pts)?) } else { None };
        slopes.push((k, fit));
    }
    let cluster_slopes = cluster_pts
        .into_iter()
        .map(|(c, pts)| {
            let fit = if pts.len() >= 3 && pts.iter().all(|p| p.1 > GAP_FLOOR) { fit_slope(&pts).ok() } else { None };
            (c, fit)
        })
        .collect();
    Ok(GapStudy { kind, r, rows, slopes, spectra, dtn_gaps, inequalities, cluster_slopes })
}

/// Both sides of |1/λ_ε^k − 1/λ_0^k| ≤ 2 sup ‖(T_ε − T_0) f‖, where T are
/// the solution operators and the supremum runs over unit f in the
/// homogenized eigenspace of λ_0^k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapInequality {
    pub kind: EigenKind,
    pub eps: f64,
    pub h: f64,
    pub k: usize,
    pub lambda_eps: f64,
    pub lambda_0: f64,
    pub lhs: f64,
    /// 2 sup ‖u_ε − u_0‖.
    pub rhs: f64,
    /// Dimension of the eigenspace the supremum runs over.
    pub multiplicity: usize,
    /// lhs ≤ 1.05 rhs.
    pub holds: bool,
}

/// Checks the gap inequality for a Dirichlet or Neumann eigenvalue.
#[allow(clippy::too_many_arguments)]
pub fn gap_inequality_check(
    cs: &CorrectorSet,
    poly: &Polygon,
    kind: EigenKind,
    eps: f64,
    h: f64,
    k: usize,
    q: usize,
    opts: &EigenOptions,
) -> Result<GapInequality, SpectraError> {
    assert!(k >= 1, "eigenvalue indices are 1-based");
    let mesh = StructMesh::build(poly, h)?;
    let op_e = Operator::Oscillatory { field: cs.field.clone(), eps };
    let op_0 = Operator::Homogenized(cs.a_hat()?.clone());
    // A few extra eigenvalues so that a cluster containing k is complete.
    let count = (k + 3).min(MAX_EIGS);
    let se = eigs(kind, &op_e, &mesh, q, count, opts)?;
    let s0 = eigs(kind, &op_0, &mesh, q, count, opts)?;
    gap_inequality_from(&op_e, &mesh, q, &se, &s0, k)
}

/// The gap inequality from already computed spectra of the oscillatory (`se`)
/// and homogenized (`s0`) problems on `mesh`.
pub fn gap_inequality_from(
    op_e: &Operator,
    mesh: &StructMesh,
    q: usize,
    se: &SpectrumReport,
    s0: &SpectrumReport,
    k: usize,
) -> Result<GapInequality, SpectraError> {
    let kind = s0.kind;
    if kind == EigenKind::Steklov {
        return Err(SpectraError::Unsupported("the gap inequality is checked for Dirichlet and Neumann problems only"));
    }
    let (lam_e, lam_0) = (se.eigenvalues[k - 1], s0.eigenvalues[k - 1]);
    let (lo, hi) = s0.cluster_of(k - 1);
    let nc = op_e.m();
    let ke = solver::stiffness(op_e, mesh, q)?;
    let mass = fem::assemble_mass(mesh, nc);
    let ndof = ke.n();
    // Free dofs: interior nodes for Dirichlet; all but one pinned node per
    // component for Neumann (the right sides below are compatible).
    let mut map = vec![usize::MAX; ndof];
    let mut nf = 0;
    for (d, slot) in map.iter_mut().enumerate() {
        let free = match kind {
            EigenKind::Dirichlet => !mesh.boundary[d / nc],
            _ => d >= nc,
        };
        if free {
            *slot = nf;
            nf += 1;
        }
    }
    let chol = Cholesky::new(&ke.extract(&map, nf, &map))?;
    let defl = constants(ndof, nc);
    let mdefl: Vec<Vec<f64>> = defl.iter().map(|c| mass.mul(c)).collect();
    // Columns d_j = T_ε φ_j − T_0 φ_j for the M-orthonormal eigenvectors φ_j
    // spanning the eigenspace, where T_0 φ_j = φ_j / λ_0^j.
    let mut cols = Vec::with_capacity(hi - lo);
    for j in lo..hi {
        let phi = &s0.eigenvectors[j];
        let mf = mass.mul(phi);
        let rhs: Vec<f64> = (0..ndof).filter(|&d| map[d] != usize::MAX).map(|d| mf[d]).collect();
        let uf = chol.solve(&rhs);
        let mut u: Vec<f64> = (0..ndof).map(|d| if map[d] == usize::MAX { 0.0 } else { uf[map[d]] }).collect();
        if kind == EigenKind::Neumann {
            for (c, mc) in defl.iter().zip(&mdefl) {
                let s = dot(mc, &u) / dot(mc, c);
                for (a, b) in u.iter_mut().zip(c) {
                    *a -= s * b;
                }
            }
        }
        let inv = 1.0 / s0.eigenvalues[j];
        cols.push(u.iter().zip(phi).map(|(a, b)| a - inv * b).collect::<Vec<f64>>());
    }
    let p = cols.len();
    let mcols: Vec<Vec<f64>> = cols.iter().map(|c| mass.mul(c)).collect();
    let mut g = Mat::<f64>::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            g[(i, j)] = 0.5 * (dot(&cols[i], &mcols[j]) + dot(&cols[j], &mcols[i]));
        }
    }
    let (gv, _) = dense_eigen(&g)?;
    let sup = gv.last().copied().unwrap_or(0.0).max(0.0).sqrt();
    let lhs = (1.0 / lam_e - 1.0 / lam_0).abs();
    let rhs = 2.0 * sup;
    Ok(GapInequality {
        kind,
        eps: se.eps,
        h: mesh.h,
        k,
        lambda_eps: lam_e,
        lambda_0: lam_0,
        lhs,
        rhs,
        multiplicity: p,
        holds: lhs <= rhs * 1.05,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clusters_group_neighbours() {
        let c = find_clusters(&[1.0, 2.0, 2.0 + 1e-9, 3.0, 4.0, 4.0], 1e-6);
        assert_eq!(c, vec![vec![2, 3], vec![5, 6]]);
    }

    #[test]
    fn small_dirichlet_problem_matches_dense_solve() {
        let mesh = StructMesh::build(&Polygon::square(), 0.125).unwrap();
        let op = Operator::Homogenized(Tensor::scaled_identity(1, 1.0));
        let rep = dirichlet_eigs(&op, &mesh, 1, 4, &EigenOptions::default()).unwrap();
        // Tensor-product oracle: 1-D linear elements give
        // λ_p = (6/h²)(1 − cos θ)/(2 + cos θ), θ = pπh, and the 2-D
        // generalized eigenvalues satisfy λ = λ_p + λ_q.
        let h = 0.125f64;
        let l1 = |p: f64| {
            let t = p * std::f64::consts::PI * h;
            6.0 / (h * h) * (1.0 - t.cos()) / (2.0 + t.cos())
        };
        let want = [2.0 * l1(1.0), l1(1.0) + l1(2.0), l1(1.0) + l1(2.0), 2.0 * l1(2.0)];
        for (got, w) in rep.eigenvalues.iter().zip(want) {
            assert!((got - w).abs() <= 1e-9 * w, "{got} vs {w}");
        }
        assert_eq!(rep.clusters, vec![vec![2, 3]]);
    }
}
