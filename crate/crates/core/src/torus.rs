//! Periodic cell problems on the unit torus: correctors χ, the homogenized
//! tensor Â, the flux discrepancy Φ, flux correctors Ψ and the tensor b.
//!
//! Storage layout (all nodal, `n * n` values per scalar field, node index
//! `j * n + i` for lattice position (i, j)):
//! - `chi[(j * m + g) * m + b]` holds χ_j^{gb}
//! - `phi[((i * d + j) * m + a) * m + b]` holds Φ_ij^{ab}
//! - `psi[(((k * d + i) * d + j) * m + a) * m + b]` holds Ψ_kij^{ab}
//! - `b[(((i * d + j) * d + k) * m + a) * m + g]` holds b_ijk^{ag}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeff::{CoeffError, CoefficientField, Tensor, DIM};
use crate::fem::{self, QuadMesh, QuadRule};
use crate::linalg::{pcg, CgOptions, SolveError};

#[derive(Debug, Error)]
pub enum CellError {
    #[error("cell grid needs n >= 8, got {0}")]
    TooCoarse(usize),
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error("cell solve: {0}")]
    Solve(#[from] SolveError),
    #[error("Φ has non-zero mean {0:e}; the flux-corrector construction needs mean zero")]
    NonzeroMean(f64),
    #[error("{0} must be computed first")]
    Missing(&'static str),
}

/// Uniform periodic grid of the unit cell with n cells per side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGrid {
    pub n: usize,
}

impl CellGrid {
    pub fn new(n: usize) -> Result<Self, CellError> {
        if n < 8 {
            return Err(CellError::TooCoarse(n));
        }
        Ok(CellGrid { n })
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        (j % self.n) * self.n + i % self.n
    }

    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let h = 1.0 / self.n as f64;
        [(node % self.n) as f64 * h, (node / self.n) as f64 * h]
    }

    /// Periodic bilinear interpolation of a nodal field at y (any real point).
    #[inline]
    pub fn interpolate(&self, values: &[f64], y: [f64; 2]) -> f64 {
        let n = self.n;
        let fx = (y[0] - y[0].floor()) * n as f64;
        let fy = (y[1] - y[1].floor()) * n as f64;
        let (i, j) = ((fx.floor() as usize).min(n - 1), (fy.floor() as usize).min(n - 1));
        let (xi, eta) = (fx - i as f64, fy - j as f64);
        let s = fem::shape(xi, eta);
        let (i1, j1) = ((i + 1) % n, (j + 1) % n);
        s[0] * values[j * n + i] + s[1] * values[j * n + i1] + s[2] * values[j1 * n + i1] + s[3] * values[j1 * n + i]
    }
}

impl QuadMesh for CellGrid {
    fn h(&self) -> f64 {
        1.0 / self.n as f64
    }
    fn n_nodes(&self) -> usize {
        self.n * self.n
    }
    fn n_elements(&self) -> usize {
        self.n * self.n
    }
    fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (i, j) = (e % self.n, e / self.n);
        [self.node(i, j), self.node(i + 1, j), self.node(i + 1, j + 1), self.node(i, j + 1)]
    }
    fn element_origin(&self, e: usize) -> [f64; 2] {
        let h = self.h();
        [(e % self.n) as f64 * h, (e / self.n) as f64 * h]
    }
}

/// Iteration counts and final residuals of the linear solves.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CellStats {
    pub chi_iterations: Vec<usize>,
    pub chi_residuals: Vec<f64>,
    pub poisson_iterations: Vec<usize>,
    pub poisson_residuals: Vec<f64>,
}

/// Cell-grid fields of one coefficient tensor. Fields are filled in stages by
/// [`solve_cell`], [`homogenize`], [`compute_phi`], [`build_flux_correctors`]
/// and [`build_b`]; [`CorrectorSet::build`] runs all of them.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    pub grid: CellGrid,
    pub q: usize,
    pub field: CoefficientField,
    pub chi: Vec<Vec<f64>>,
    /// Projected nodal gradients of χ, `[node * 2 + k]` per χ component.
    pub grad_chi: Vec<Vec<f64>>,
    pub a_hat: Option<Tensor>,
    pub phi: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub stats: CellStats,
    /// Coefficient at every sub-cell midpoint, `[(e * q^2 + s) * (dm)^2 + ..]`.
    a_quad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Chi,
    GradChi,
    B,
    Psi,
}

impl CorrectorSet {
    pub fn build(field: &CoefficientField, n: usize, q: usize) -> Result<Self, CellError> {
        let mut cs = solve_cell(field, n, q)?;
        homogenize(&mut cs)?;
        compute_phi(&mut cs)?;
        build_flux_correctors(&mut cs)?;
        build_b(&mut cs)?;
        Ok(cs)
    }

    pub fn m(&self) -> usize {
        self.field.m()
    }

    pub fn chi_index(&self, j: usize, g: usize, b: usize) -> usize {
        let m = self.m();
        (j * m + g) * m + b
    }

    pub fn phi_index(&self, i: usize, j: usize, a: usize, b: usize) -> usize {
        let m = self.m();
        ((i * DIM + j) * m + a) * m + b
    }

    pub fn psi_index(&self, k: usize, i: usize, j: usize, a: usize, b: usize) -> usize {
        let m = self.m();
        (((k * DIM + i) * DIM + j) * m + a) * m + b
    }

    pub fn b_index(&self, i: usize, j: usize, k: usize, a: usize, g: usize) -> usize {
        let m = self.m();
        (((i * DIM + j) * DIM + k) * m + a) * m + g
    }

    pub fn a_hat(&self) -> Result<&Tensor, CellError> {
        self.a_hat.as_ref().ok_or(CellError::Missing("the homogenized tensor"))
    }

    /// Cell average of a nodal field (exact for the bilinear interpolant).
    pub fn mean(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() / values.len() as f64
    }

    /// All components of χ at y, in `chi` storage order.
    pub fn chi_at(&self, y: [f64; 2], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.chi) {
            *o = self.grid.interpolate(c, y);
        }
    }

    /// Periodic bilinear interpolation of the requested field at frac(x/ε).
    /// Gradients are with respect to y and are not rescaled by 1/ε.
    pub fn sample(&self, x: [f64; 2], eps: f64, which: Which) -> Vec<f64> {
        let y = [x[0] / eps, x[1] / eps];
        let interp = |fields: &[Vec<f64>]| fields.iter().map(|f| self.grid.interpolate(f, y)).collect();
        match which {
            Which::Chi => interp(&self.chi),
            Which::B => interp(&self.b),
            Which::Psi => interp(&self.psi),
            Which::GradChi => {
                let mut out = Vec::with_capacity(self.grad_chi.len() * DIM);
                for g in &self.grad_chi {
                    for k in 0..DIM {
                        let comp: Vec<f64> = g.iter().skip(k).step_by(DIM).copied().collect();
                        out.push(self.grid.interpolate(&comp, y));
                    }
                }
                out
            }
        }
    }

    /// Relative L2 residual of the identity ∂_k Ψ_kij = Φ_ij, evaluated at
    /// element centres over all (i, j, α, β).
    pub fn flux_identity_residual(&self) -> Result<f64, CellError> {
        if self.psi.is_empty() {
            return Err(CellError::Missing("the flux correctors"));
        }
        let m = self.m();
        let g = self.grid;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..DIM {
            for j in 0..DIM {
                for a in 0..m {
                    for b in 0..m {
                        let phi = &self.phi[self.phi_index(i, j, a, b)];
                        for e in 0..g.n_elements() {
                            let mut div = 0.0;
                            for k in 0..DIM {
                                let psi = &self.psi[self.psi_index(k, i, j, a, b)];
                                div += fem::element_gradient(&g, psi, 1, 0, e, 0.5, 0.5)[k];
                            }
                            let centre: f64 = g.element_nodes(e).iter().map(|&v| phi[v]).sum::<f64>() / 4.0;
                            num += (div - centre).powi(2);
                            den += centre * centre;
                        }
                    }
                }
            }
        }
        Ok(if den == 0.0 { num.sqrt() } else { (num / den).sqrt() })
    }
}

fn cg_options(grid: &CellGrid, m: usize) -> CgOptions {
    CgOptions::new(1e-10, 20 * grid.n).singular(m)
}

/// Solves the d * m cell problems for χ_j^{·β} on an n x n periodic grid.
pub fn solve_cell(field: &CoefficientField, n: usize, q: usize) -> Result<CorrectorSet, CellError> {
    let grid = CellGrid::new(n)?;
    let m = field.m();
    let dm = DIM * m;
    let rule = QuadRule::midpoint(q);
    let nq = rule.points.len();
    let h = grid.h();

    // Coefficient at every sub-cell midpoint, reused by Â and Φ.
    let mut a_quad = vec![0.0; grid.n_elements() * nq * dm * dm];
    a_quad.par_chunks_mut(nq * dm * dm).enumerate().for_each(|(e, chunk)| {
        let o = grid.element_origin(e);
        for (s, p) in rule.points.iter().enumerate() {
            field.eval_into([o[0] + p[0] * h, o[1] + p[1] * h], &mut chunk[s * dm * dm..(s + 1) * dm * dm]);
        }
    });
    if let Some(bad) = a_quad.iter().position(|v| !v.is_finite()) {
        let e = bad / (nq * dm * dm);
        let o = grid.element_origin(e);
        return Err(CoeffError::NonFinite(o[0], o[1]).into());
    }

    let k_mat = fem::assemble_stiffness(&grid, m, q, |y, out| field.eval_into(y, out));

    // Right sides: -∫ a_ij^{αβ} ∂_i φ_a^α for each (j, β).
    let ndof = grid.n_nodes() * m;
    let mut rhs = vec![vec![0.0; ndof]; DIM * m];
    let grads: Vec<[[f64; 2]; 4]> = rule.points.iter().map(|p| fem::shape_grad(p[0], p[1])).collect();
    for e in 0..grid.n_elements() {
        let nodes = grid.element_nodes(e);
        for (s, g) in grads.iter().enumerate() {
            let a = &a_quad[(e * nq + s) * dm * dm..(e * nq + s + 1) * dm * dm];
            for j in 0..DIM {
                for beta in 0..m {
                    let r = &mut rhs[j * m + beta];
                    for (la, &node) in nodes.iter().enumerate() {
                        for alpha in 0..m {
                            let mut v = 0.0;
                            for i in 0..DIM {
                                v += a[(i * m + alpha) * dm + j * m + beta] * g[la][i];
                            }
                            // ∫_sub ∂_i φ = h * (sub-cell area) * reference gradient
                            r[node * m + alpha] -= h * rule.weight * v;
                        }
                    }
                }
            }
        }
    }

    let opts = cg_options(&grid, m);
    let results: Vec<Result<(Vec<f64>, usize, f64), SolveError>> = rhs
        .par_iter()
        .map(|b| {
            let mut x = vec![0.0; ndof];
            let info = pcg(&k_mat, b, &mut x, &opts)?;
            Ok((x, info.iterations, info.residual))
        })
        .collect();

    let mut chi = vec![Vec::new(); DIM * m * m];
    let mut stats = CellStats::default();
    for (jb, res) in results.into_iter().enumerate() {
        let (x, it, r) = res?;
        stats.chi_iterations.push(it);
        stats.chi_residuals.push(r);
        let (j, beta) = (jb / m, jb % m);
        for g in 0..m {
            chi[(j * m + g) * m + beta] = x.iter().skip(g).step_by(m).copied().collect();
        }
    }
    let grad_chi = chi.iter().map(|c| fem::nodal_gradients(&grid, c, 1)).collect();
    Ok(CorrectorSet {
        grid,
        q,
        field: field.clone(),
        chi,
        grad_chi,
        a_hat: None,
        phi: Vec::new(),
        psi: Vec::new(),
        b: Vec::new(),
        stats,
        a_quad,
    })
}

/// Quadrature average of the flux a_ij^{αβ} + a_ik^{αγ} ∂_k χ_j^{γβ} over each
/// element, `[e][((i * d + j) * m + α) * m + β]`.
fn element_fluxes(cs: &CorrectorSet) -> Vec<Vec<f64>> {
    let m = cs.m();
    let dm = DIM * m;
    let grid = cs.grid;
    let rule = QuadRule::midpoint(cs.q);
    let nq = rule.points.len();
    (0..grid.n_elements())
        .into_par_iter()
        .map(|e| {
            let mut flux = vec![0.0; DIM * DIM * m * m];
            for (s, p) in rule.points.iter().enumerate() {
                let a = &cs.a_quad[(e * nq + s) * dm * dm..(e * nq + s + 1) * dm * dm];
                // ∇χ_j^{γβ} at this sub-cell midpoint.
                let gchi: Vec<[f64; 2]> =
                    cs.chi.iter().map(|c| fem::element_gradient(&grid, c, 1, 0, e, p[0], p[1])).collect();
                for i in 0..DIM {
                    for j in 0..DIM {
                        for alpha in 0..m {
                            for beta in 0..m {
                                let mut v = a[(i * m + alpha) * dm + j * m + beta];
                                for k in 0..DIM {
                                    for g in 0..m {
                                        v += a[(i * m + alpha) * dm + k * m + g] * gchi[(j * m + g) * m + beta][k];
                                    }
                                }
                                flux[((i * DIM + j) * m + alpha) * m + beta] += rule.weight * v;
                            }
                        }
                    }
                }
            }
            flux
        })
        .collect()
}

/// Â_ij^{αβ} = ∫_Y a_ij^{αβ} + a_ik^{αγ} ∂_k χ_j^{γβ}.
pub fn homogenize(cs: &mut CorrectorSet) -> Result<Tensor, CellError> {
    if cs.chi.is_empty() {
        return Err(CellError::Missing("the correctors"));
    }
    let m = cs.m();
    let fluxes = element_fluxes(cs);
    let area = cs.grid.h() * cs.grid.h();
    let mut t = Tensor::zeros(m);
    for i in 0..DIM {
        for j in 0..DIM {
            for a in 0..m {
                for b in 0..m {
                    let idx = ((i * DIM + j) * m + a) * m + b;
                    let s: f64 = fluxes.iter().map(|f| f[idx]).sum();
                    t.set(i, j, a, b, s * area);
                }
            }
        }
    }
    cs.a_hat = Some(t.clone());
    Ok(t)
}

/// Φ_ij^{αβ} = â_ij^{αβ} − (projected flux)_ij^{αβ} at nodes.
pub fn compute_phi(cs: &mut CorrectorSet) -> Result<(), CellError> {
    let a_hat = cs.a_hat()?.clone();
    let m = cs.m();
    let fluxes = element_fluxes(cs);
    let mut phi = vec![Vec::new(); DIM * DIM * m * m];
    for i in 0..DIM {
        for j in 0..DIM {
            for a in 0..m {
                for b in 0..m {
                    let idx = ((i * DIM + j) * m + a) * m + b;
                    let per_element: Vec<f64> = fluxes.iter().map(|f| f[idx]).collect();
                    let c = a_hat.get(i, j, a, b);
                    phi[idx] = fem::nodal_average(&cs.grid, &per_element).into_iter().map(|v| c - v).collect();
                }
            }
        }
    }
    cs.phi = phi;
    Ok(())
}

/// Ψ_kij^{αβ} = ∂_k f_i − ∂_i f_k where Δ f_i = Φ_ij^{αβ} (periodic, mean zero).
pub fn build_flux_correctors(cs: &mut CorrectorSet) -> Result<(), CellError> {
    if cs.phi.is_empty() {
        return Err(CellError::Missing("Φ"));
    }
    let m = cs.m();
    let grid = cs.grid;
    for p in &cs.phi {
        let scale = p.iter().fold(1.0f64, |s, v| s.max(v.abs()));
        let mean = cs.mean(p);
        if mean.abs() > 1e-6 * scale {
            return Err(CellError::NonzeroMean(mean));
        }
    }
    let lap = fem::assemble_stiffness(&grid, 1, 1, |_, a| a.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]));
    let mass = fem::assemble_mass(&grid, 1);
    let opts = cg_options(&grid, 1);

    // Weak form of Δf = Φ: K f = −M Φ.
    let solve = |phi: &Vec<f64>| -> Result<(Vec<f64>, usize, f64), SolveError> {
        let mut rhs = mass.mul(phi);
        rhs.iter_mut().for_each(|v| *v = -*v);
        let mut f = vec![0.0; phi.len()];
        let info = pcg(&lap, &rhs, &mut f, &opts)?;
        Ok((f, info.iterations, info.residual))
    };
    let solutions: Vec<Result<(Vec<f64>, usize, f64), SolveError>> = cs.phi.par_iter().map(solve).collect();
    let mut grads = Vec::with_capacity(solutions.len());
    for s in solutions {
        let (f, it, r) = s?;
        cs.stats.poisson_iterations.push(it);
        cs.stats.poisson_residuals.push(r);
        grads.push(fem::nodal_gradients(&grid, &f, 1));
    }
    // grads[phi_index(i, j, a, b)][node * 2 + k] = ∂_k f_i for the (j, a, b) family.
    let nn = grid.n_nodes();
    let mut psi = vec![Vec::new(); DIM * DIM * DIM * m * m];
    for k in 0..DIM {
        for i in 0..DIM {
            for j in 0..DIM {
                for a in 0..m {
                    for b in 0..m {
                        let gi = &grads[cs.phi_index(i, j, a, b)];
                        let gk = &grads[cs.phi_index(k, j, a, b)];
                        let v: Vec<f64> = (0..nn).map(|node| gi[node * 2 + k] - gk[node * 2 + i]).collect();
                        psi[cs.psi_index(k, i, j, a, b)] = v;
                    }
                }
            }
        }
    }
    cs.psi = psi;
    Ok(())
}

/// b_ijk^{αγ} = Ψ_jik^{αγ} + a_ij^{αβ} χ_k^{βγ} at nodes.
pub fn build_b(cs: &mut CorrectorSet) -> Result<(), CellError> {
    if cs.psi.is_empty() {
        return Err(CellError::Missing("the flux correctors"));
    }
    let m = cs.m();
    let dm = DIM * m;
    let grid = cs.grid;
    let nn = grid.n_nodes();
    let a_nodes: Vec<Vec<f64>> = (0..nn)
        .map(|node| {
            let mut a = vec![0.0; dm * dm];
            cs.field.eval_into(grid.node_coords(node), &mut a);
            a
        })
        .collect();
    let mut b = vec![Vec::new(); DIM * DIM * DIM * m * m];
    for i in 0..DIM {
        for j in 0..DIM {
            for k in 0..DIM {
                for alpha in 0..m {
                    for gamma in 0..m {
                        let psi = &cs.psi[cs.psi_index(j, i, k, alpha, gamma)];
                        let v: Vec<f64> = (0..nn)
                            .map(|node| {
                                let mut s = psi[node];
                                for beta in 0..m {
                                    s += a_nodes[node][(i * m + alpha) * dm + j * m + beta]
                                        * cs.chi[cs.chi_index(k, beta, gamma)][node];
                                }
                                s
                            })
                            .collect();
                        b[cs.b_index(i, j, k, alpha, gamma)] = v;
                    }
                }
            }
        }
    }
    cs.b = b;
    Ok(())
}

/// Convenience wrapper: [`CorrectorSet::sample`].
pub fn sample_corrector(cs: &CorrectorSet, x: [f64; 2], eps: f64, which: Which) -> Vec<f64> {
    cs.sample(x, eps, which)
}
