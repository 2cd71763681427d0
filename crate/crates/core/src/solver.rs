//! Dirichlet and Neumann problems for the oscillatory operator
//! −∂_i(a_ij(x/ε) ∂_j) and its constant-coefficient homogenized limit.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeff::{CoeffError, CoefficientField, Env, Expr, Tensor, DIM};
use crate::domain::{BoundaryPoint, DomainError, StructMesh};
use crate::fem::{self, CsrMatrix, QuadMesh};
use crate::linalg::{self, project_mean, Backend, CgOptions, SolveError, SolveInfo};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("mesh size h = {h} does not resolve ε = {eps} (need h <= ε/4)")]
    Unresolved { h: f64, eps: f64 },
    #[error("Neumann data incompatible: ∫F + ∫g = {defect:e} for component {component}")]
    Incompatible { component: usize, defect: f64 },
    #[error("expected {expected} data expressions (one per component), got {got}")]
    ComponentCount { expected: usize, got: usize },
    #[error("assembled matrix is not symmetric (max deviation {0:e})")]
    Asymmetric(f64),
    #[error("non-finite values in the {0}")]
    NonFinite(&'static str),
    #[error("meshes differ")]
    MeshMismatch,
    #[error("boundary condition does not match the requested solve")]
    WrongCondition,
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// The second-order operator of a boundary value problem.
#[derive(Debug, Clone)]
pub enum Operator {
    /// −∂_i(a_ij(x/ε) ∂_j ·).
    Oscillatory { field: CoefficientField, eps: f64 },
    /// −∂_i(â_ij ∂_j ·) with a constant tensor.
    Homogenized(Tensor),
}

impl Operator {
    pub fn m(&self) -> usize {
        match self {
            Operator::Oscillatory { field, .. } => field.m(),
            Operator::Homogenized(t) => t.m(),
        }
    }

    /// Writes the coefficient tensor at physical point x.
    #[inline]
    pub fn eval(&self, x: [f64; 2], out: &mut [f64]) {
        match self {
            Operator::Oscillatory { field, eps } => field.eval_into([x[0] / eps, x[1] / eps], out),
            Operator::Homogenized(t) => out.copy_from_slice(t.as_slice()),
        }
    }

    pub fn eps(&self) -> Option<f64> {
        match self {
            Operator::Oscillatory { eps, .. } => Some(*eps),
            Operator::Homogenized(_) => None,
        }
    }

    fn symmetric(&self) -> bool {
        match self {
            Operator::Oscillatory { field, .. } => field.symmetric,
            Operator::Homogenized(t) => t.asymmetry() == 0.0,
        }
    }

    pub fn check_resolution(&self, h: f64) -> Result<(), SolverError> {
        if let Some(eps) = self.eps() {
            if h > eps / 4.0 * (1.0 + 1e-12) {
                return Err(SolverError::Unresolved { h, eps });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum BoundaryCondition {
    /// u = f on ∂Ω, one expression in x1, x2 per component.
    Dirichlet(Vec<Expr>),
    /// Conormal derivative = g on ∂Ω; expressions may use n1, n2.
    Neumann(Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    MeanZeroVolume,
    MeanZeroBoundary,
}

#[derive(Debug, Clone)]
pub struct BvpSpec {
    pub operator: Operator,
    pub bc: BoundaryCondition,
    /// Volume source F, one expression per component.
    pub source: Vec<Expr>,
    pub normalization: Normalization,
    pub backend: Backend,
}

impl BvpSpec {
    pub fn dirichlet(operator: Operator, source: Vec<Expr>, f: Vec<Expr>) -> Self {
        BvpSpec {
            operator,
            bc: BoundaryCondition::Dirichlet(f),
            source,
            normalization: Normalization::None,
            backend: Backend::default(),
        }
    }

    pub fn neumann(operator: Operator, source: Vec<Expr>, g: Vec<Expr>) -> Self {
        BvpSpec {
            operator,
            bc: BoundaryCondition::Neumann(g),
            source,
            normalization: Normalization::MeanZeroVolume,
            backend: Backend::default(),
        }
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_normalization(mut self, n: Normalization) -> Self {
        self.normalization = n;
        self
    }

    fn check_counts(&self) -> Result<(), SolverError> {
        let m = self.operator.m();
        let data = match &self.bc {
            BoundaryCondition::Dirichlet(v) | BoundaryCondition::Neumann(v) => v.len(),
        };
        for got in [data, self.source.len()] {
            if got != m {
                return Err(SolverError::ComponentCount { expected: m, got });
            }
        }
        Ok(())
    }
}

/// Nodal values of an m-component bilinear field with cached element-centre
/// gradients.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    pub mesh: Arc<StructMesh>,
    pub m: usize,
    /// `values[node * m + alpha]`.
    pub values: Vec<f64>,
    /// `grads[(e * m + alpha)]` at the element centre.
    pub grads: Vec<[f64; 2]>,
}

impl DiscreteField {
    pub fn new(mesh: Arc<StructMesh>, m: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), mesh.nodes.len() * m);
        let grads = (0..mesh.elements.len())
            .flat_map(|e| (0..m).map(move |a| (e, a)))
            .map(|(e, a)| fem::element_gradient(mesh.as_ref(), &values, m, a, e, 0.5, 0.5))
            .collect();
        DiscreteField { mesh, m, values, grads }
    }

    /// Nodal interpolant of expressions (one per component).
    pub fn interpolate(mesh: Arc<StructMesh>, exprs: &[Expr]) -> Self {
        let m = exprs.len();
        let values = mesh.nodes.iter().flat_map(|&x| exprs.iter().map(move |e| e.eval_at(x))).collect();
        Self::new(mesh, m, values)
    }

    pub fn zeros_like(&self) -> Self {
        Self::new(self.mesh.clone(), self.m, vec![0.0; self.values.len()])
    }

    pub fn evaluate(&self, x: [f64; 2]) -> Result<Vec<f64>, SolverError> {
        let (e, xi, eta) = self.mesh.locate(x)?;
        let s = fem::shape(xi, eta);
        let nodes = self.mesh.elements[e];
        Ok((0..self.m).map(|a| (0..4).map(|k| s[k] * self.values[nodes[k] * self.m + a]).sum()).collect())
    }

    /// `m x d` gradient at x, row-major.
    pub fn gradient(&self, x: [f64; 2]) -> Result<Vec<f64>, SolverError> {
        let (e, xi, eta) = self.mesh.locate(x)?;
        Ok(self.gradient_in(e, xi, eta))
    }

    /// Gradient inside element e at reference point (xi, eta).
    pub fn gradient_in(&self, e: usize, xi: f64, eta: f64) -> Vec<f64> {
        (0..self.m)
            .flat_map(|a| fem::element_gradient(self.mesh.as_ref(), &self.values, self.m, a, e, xi, eta))
            .collect()
    }

    /// Projected nodal gradients, `[(node * m + alpha) * 2 + k]`.
    pub fn nodal_gradients(&self) -> Vec<f64> {
        fem::nodal_gradients(self.mesh.as_ref(), &self.values, self.m)
    }

    pub fn integral(&self) -> Vec<f64> {
        fem::integrate(self.mesh.as_ref(), &self.values, self.m)
    }

    /// Trapezoidal (exact for the bilinear trace) boundary integral.
    pub fn boundary_integral(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.m];
        let h = self.mesh.h;
        for e in &self.mesh.boundary_edges {
            for (a, sa) in s.iter_mut().enumerate() {
                *sa += 0.5 * h * (self.values[e.nodes[0] * self.m + a] + self.values[e.nodes[1] * self.m + a]);
            }
        }
        s
    }

    pub fn normalize(&mut self, how: Normalization) {
        let (shift, measure) = match how {
            Normalization::None => return,
            Normalization::MeanZeroVolume => (self.integral(), self.mesh.area()),
            Normalization::MeanZeroBoundary => (self.boundary_integral(), self.mesh.perimeter()),
        };
        for (k, v) in self.values.iter_mut().enumerate() {
            *v -= shift[k % self.m] / measure;
        }
        *self = Self::new(self.mesh.clone(), self.m, std::mem::take(&mut self.values));
    }

    /// Pointwise difference; both fields must live on the same mesh.
    pub fn sub(&self, other: &DiscreteField) -> Result<DiscreteField, SolverError> {
        if !Arc::ptr_eq(&self.mesh, &other.mesh) && self.mesh.nodes != other.mesh.nodes {
            return Err(SolverError::MeshMismatch);
        }
        let v = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Self::new(self.mesh.clone(), self.m, v))
    }

    pub fn scaled(&self, c: f64) -> DiscreteField {
        Self::new(self.mesh.clone(), self.m, self.values.iter().map(|v| c * v).collect())
    }

    /// Restriction to a coarser mesh of the same polygon whose lattice divides
    /// this one (nodes are copied, nothing is averaged).
    pub fn restrict(&self, coarse: Arc<StructMesh>) -> Result<DiscreteField, SolverError> {
        let fine = &self.mesh;
        if !fine.n.is_multiple_of(coarse.n) || fine.poly != coarse.poly {
            return Err(SolverError::MeshMismatch);
        }
        let k = fine.n / coarse.n;
        let mut values = Vec::with_capacity(coarse.nodes.len() * self.m);
        for x in &coarse.nodes {
            let (i, j) = ((x[0] * coarse.n as f64).round() as usize, (x[1] * coarse.n as f64).round() as usize);
            let node = fine.lattice_node(i * k, j * k).ok_or(SolverError::MeshMismatch)?;
            values.extend_from_slice(&self.values[node * self.m..(node + 1) * self.m]);
        }
        Ok(Self::new(coarse, self.m, values))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |s, v| s.max(v.abs()))
    }
}

/// Assembled stiffness matrix and load vector over all degrees of freedom.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Per-dof flag: value prescribed by a Dirichlet condition.
    pub constrained: Vec<bool>,
    /// Prescribed values (zero where unconstrained).
    pub prescribed: Vec<f64>,
}

/// Stiffness matrix of the operator on `mesh` with q x q sub-cell quadrature.
pub fn stiffness(op: &Operator, mesh: &StructMesh, q: usize) -> Result<CsrMatrix, SolverError> {
    op.check_resolution(mesh.h)?;
    let k = fem::assemble_stiffness(mesh, op.m(), q, |x, out| op.eval(x, out));
    if op.symmetric() {
        let dev = k.asymmetry();
        if dev != 0.0 {
            return Err(SolverError::Asymmetric(dev));
        }
    }
    Ok(k)
}

/// Boundary load ∫_∂Ω g φ with two-point Gauss per edge.
pub fn boundary_load(mesh: &StructMesh, g: &[Expr]) -> Vec<f64> {
    let m = g.len();
    let mut b = vec![0.0; mesh.nodes.len() * m];
    let gp = 0.5 / 3f64.sqrt();
    for e in &mesh.boundary_edges {
        let (p0, p1) = (mesh.nodes[e.nodes[0]], mesh.nodes[e.nodes[1]]);
        for s in [0.5 - gp, 0.5 + gp] {
            let x = [p0[0] + s * (p1[0] - p0[0]), p0[1] + s * (p1[1] - p0[1])];
            let env = Env { x, normal: e.normal };
            for (a, ga) in g.iter().enumerate() {
                let v = 0.5 * mesh.h * ga.eval(&env);
                b[e.nodes[0] * m + a] += (1.0 - s) * v;
                b[e.nodes[1] * m + a] += s * v;
            }
        }
    }
    b
}

pub fn assemble(spec: &BvpSpec, mesh: &StructMesh, q: usize) -> Result<LinearSystem, SolverError> {
    spec.check_counts()?;
    let m = spec.operator.m();
    let matrix = stiffness(&spec.operator, mesh, q)?;
    let mut rhs = fem::assemble_load(mesh, m, q, |x, out| {
        for (o, f) in out.iter_mut().zip(&spec.source) {
            *o = f.eval_at(x);
        }
    });
    let ndof = mesh.nodes.len() * m;
    let mut constrained = vec![false; ndof];
    let mut prescribed = vec![0.0; ndof];
    match &spec.bc {
        BoundaryCondition::Dirichlet(f) => {
            for (node, &x) in mesh.nodes.iter().enumerate() {
                if mesh.boundary[node] {
                    for (a, fa) in f.iter().enumerate() {
                        constrained[node * m + a] = true;
                        prescribed[node * m + a] = fa.eval_at(x);
                    }
                }
            }
        }
        BoundaryCondition::Neumann(g) => {
            for (r, b) in rhs.iter_mut().zip(boundary_load(mesh, g)) {
                *r += b;
            }
        }
    }
    Ok(LinearSystem { matrix, rhs, constrained, prescribed })
}

/// Diagnostics of one boundary value solve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual of the reduced linear system.
    pub residual: f64,
    /// Energy u^T K u of the returned field.
    pub energy: f64,
    pub backend: Backend,
}

fn reduced_maps(free: &[bool]) -> (Vec<usize>, usize) {
    let mut map = vec![usize::MAX; free.len()];
    let mut k = 0;
    for (i, &f) in free.iter().enumerate() {
        if f {
            map[i] = k;
            k += 1;
        }
    }
    (map, k)
}

/// Solves the system restricted to the dofs flagged `free`, with the other
/// dofs held at `fixed`.
fn solve_reduced(
    sys: &LinearSystem,
    free: &[bool],
    fixed: &[f64],
    backend: Backend,
    singular_m: Option<usize>,
) -> Result<(Vec<f64>, SolveInfo), SolverError> {
    let (map, nf) = reduced_maps(free);
    let kff = sys.matrix.extract(&map, nf, &map);
    let kx = sys.matrix.mul(fixed);
    let mut b = vec![0.0; nf];
    for (i, &r) in map.iter().enumerate() {
        if r != usize::MAX {
            b[r] = sys.rhs[i] - kx[i];
        }
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite("right-hand side"));
    }
    let (x, info) = match (backend, singular_m) {
        (Backend::Pcg, Some(m)) => {
            let mut x = vec![0.0; nf];
            let info = linalg::pcg(&kff, &b, &mut x, &CgOptions::new(1e-12, 20 * nf.max(100)).singular(m))?;
            (x, info)
        }
        _ => linalg::solve_spd(&kff, &b, backend, 1e-12)?,
    };
    if !info.residual.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite("solution"));
    }
    let mut full = fixed.to_vec();
    for (i, &r) in map.iter().enumerate() {
        if r != usize::MAX {
            full[i] = x[r];
        }
    }
    Ok((full, info))
}

pub fn solve_dirichlet(spec: &BvpSpec, mesh: &Arc<StructMesh>, q: usize) -> Result<(DiscreteField, SolveReport), SolverError> {
    if !matches!(spec.bc, BoundaryCondition::Dirichlet(_)) {
        return Err(SolverError::WrongCondition);
    }
    let sys = assemble(spec, mesh, q)?;
    let (mut field, report) = solve_constrained(&sys, mesh, spec.operator.m(), spec.backend)?;
    field.normalize(spec.normalization);
    Ok((field, report))
}

/// Dirichlet solve from an already assembled stiffness matrix and load
/// vector; `boundary` holds the prescribed value of every dof (entries at
/// interior dofs are ignored).
pub fn solve_dirichlet_with(
    matrix: CsrMatrix,
    load: Vec<f64>,
    boundary: &[f64],
    mesh: &Arc<StructMesh>,
    m: usize,
    backend: Backend,
) -> Result<(DiscreteField, SolveReport), SolverError> {
    let ndof = mesh.nodes.len() * m;
    assert!(matrix.n() == ndof && load.len() == ndof && boundary.len() == ndof);
    let constrained: Vec<bool> = (0..ndof).map(|d| mesh.boundary[d / m]).collect();
    let prescribed = (0..ndof).map(|d| if constrained[d] { boundary[d] } else { 0.0 }).collect();
    let sys = LinearSystem { matrix, rhs: load, constrained, prescribed };
    solve_constrained(&sys, mesh, m, backend)
}

fn solve_constrained(
    sys: &LinearSystem,
    mesh: &Arc<StructMesh>,
    m: usize,
    backend: Backend,
) -> Result<(DiscreteField, SolveReport), SolverError> {
    let free: Vec<bool> = sys.constrained.iter().map(|c| !c).collect();
    let (u, info) = solve_reduced(sys, &free, &sys.prescribed, backend, None)?;
    let energy = sys.matrix.form(&u, &u);
    let field = DiscreteField::new(mesh.clone(), m, u);
    Ok((field, SolveReport { iterations: info.iterations, residual: info.residual, energy, backend }))
}

/// Per-component ∫F + ∫g of the assembled load (the discrete compatibility defect).
pub fn compatibility_defect(sys: &LinearSystem, m: usize) -> Vec<f64> {
    (0..m).map(|a| sys.rhs.iter().skip(a).step_by(m).sum()).collect()
}

pub fn solve_neumann(spec: &BvpSpec, mesh: &Arc<StructMesh>, q: usize) -> Result<(DiscreteField, SolveReport), SolverError> {
    if !matches!(spec.bc, BoundaryCondition::Neumann(_)) {
        return Err(SolverError::WrongCondition);
    }
    let sys = assemble(spec, mesh, q)?;
    solve_neumann_with(sys.matrix, sys.rhs, mesh, spec.operator.m(), spec.backend, spec.normalization)
}

/// Neumann solve from an assembled matrix and a load vector that already
/// contains the boundary term. The result is normalized as requested (mean
/// zero over the volume when `how` is `None`).
pub fn solve_neumann_with(
    matrix: CsrMatrix,
    load: Vec<f64>,
    mesh: &Arc<StructMesh>,
    m: usize,
    backend: Backend,
    how: Normalization,
) -> Result<(DiscreteField, SolveReport), SolverError> {
    let ndof = load.len();
    let sys = LinearSystem { matrix, rhs: load, constrained: vec![false; ndof], prescribed: vec![0.0; ndof] };
    for (a, d) in compatibility_defect(&sys, m).into_iter().enumerate() {
        let scale: f64 = sys.rhs.iter().skip(a).step_by(m).map(|v| v.abs()).sum::<f64>().max(1.0);
        if d.abs() > 1e-8 * scale {
            return Err(SolverError::Incompatible { component: a, defect: d });
        }
    }
    let (u, info) = match backend {
        Backend::Cholesky => {
            // Pin the first node in every component; the consistent right
            // side makes the dropped equations hold automatically.
            let mut free = vec![true; ndof];
            free[..m].iter_mut().for_each(|f| *f = false);
            solve_reduced(&sys, &free, &vec![0.0; ndof], Backend::Cholesky, None)?
        }
        Backend::Pcg => {
            let mut rhs = sys.rhs.clone();
            project_mean(&mut rhs, m);
            let sys2 = LinearSystem { rhs, ..sys.clone() };
            solve_reduced(&sys2, &vec![true; ndof], &vec![0.0; ndof], Backend::Pcg, Some(m))?
        }
    };
    let energy = sys.matrix.form(&u, &u);
    let mut field = DiscreteField::new(mesh.clone(), m, u);
    field.normalize(match how {
        Normalization::None => Normalization::MeanZeroVolume,
        other => other,
    });
    Ok((field, SolveReport { iterations: info.iterations, residual: info.residual, energy, backend }))
}

/// Solves with whichever boundary condition the `BvpSpec` carries.
pub fn solve(spec: &BvpSpec, mesh: &Arc<StructMesh>, q: usize) -> Result<(DiscreteField, SolveReport), SolverError> {
    match spec.bc {
        BoundaryCondition::Dirichlet(_) => solve_dirichlet(spec, mesh, q),
        BoundaryCondition::Neumann(_) => solve_neumann(spec, mesh, q),
    }
}

/// Conormal flux n_i a_ij^{αβ}(x/ε) ∂_j u^β at a boundary quadrature point,
/// using the gradient of the adjacent element.
pub fn conormal_flux(u: &DiscreteField, op: &Operator, q: &BoundaryPoint) -> Result<Vec<f64>, SolverError> {
    let mesh = &u.mesh;
    let edge = mesh.boundary_edges.get(q.edge).ok_or(DomainError::NotOnBoundary(q.x[0], q.x[1]))?;
    if (edge.midpoint[0] - q.x[0]).abs() > 1e-12 || (edge.midpoint[1] - q.x[1]).abs() > 1e-12 {
        return Err(DomainError::NotOnBoundary(q.x[0], q.x[1]).into());
    }
    let o = mesh.element_origin(edge.element);
    let (xi, eta) = ((q.x[0] - o[0]) / mesh.h, (q.x[1] - o[1]) / mesh.h);
    let grad = u.gradient_in(edge.element, xi, eta);
    let m = u.m;
    let dm = DIM * m;
    let mut a = vec![0.0; dm * dm];
    op.eval(q.x, &mut a);
    let mut flux = vec![0.0; m];
    for (alpha, fa) in flux.iter_mut().enumerate() {
        for i in 0..DIM {
            for j in 0..DIM {
                for beta in 0..m {
                    *fa += edge.normal[i] * a[(i * m + alpha) * dm + j * m + beta] * grad[beta * DIM + j];
                }
            }
        }
    }
    Ok(flux)
}
