//! Bilinear quadrilateral elements on uniform lattices: reference basis,
//! midpoint sub-cell quadrature and matrix assembly.
//!
//! Degrees of freedom are interleaved by component, `dof = node * m + alpha`.
//! Local node order is counter-clockwise from the lower-left corner.

mod sparse;

pub use sparse::CsrMatrix;

use rayon::prelude::*;

use crate::coeff::DIM;

/// Bilinear shape functions at reference coordinates (xi, eta) in [0,1]^2.
#[inline]
pub fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta]
}

/// Reference gradients of [`shape`]; divide by h for physical gradients.
#[inline]
pub fn shape_grad(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [[-(1.0 - eta), -(1.0 - xi)], [1.0 - eta, -xi], [eta, xi], [-eta, 1.0 - xi]]
}

/// Sub-cell rule: the element is split into q x q sub-squares, the
/// coefficient is sampled at each sub-square midpoint and the basis products
/// are integrated exactly on the sub-square. Constant coefficients therefore
/// give exactly the standard bilinear matrices for every q.
#[derive(Debug, Clone)]
pub struct QuadRule {
    /// Sub-square midpoints in reference coordinates.
    pub points: Vec<[f64; 2]>,
    /// Sub-square area in reference coordinates.
    pub weight: f64,
    /// `stiff[s][i][j][a][b]` = integral over sub-square s of d_i phi_a d_j phi_b.
    pub stiff: Vec<[[[[f64; 4]; 4]; 2]; 2]>,
    /// `mass[s][a]` = integral over sub-square s of phi_a.
    pub mass: Vec<[f64; 4]>,
}

impl QuadRule {
    pub fn midpoint(q: usize) -> Self {
        assert!(q >= 1);
        let width = 1.0 / q as f64;
        // Two-point Gauss is exact for the biquadratic integrands involved.
        let g = 0.5 / 3f64.sqrt();
        let mut points = Vec::with_capacity(q * q);
        let mut stiff = Vec::with_capacity(q * q);
        let mut mass = Vec::with_capacity(q * q);
        for b in 0..q {
            for a in 0..q {
                let c = [(a as f64 + 0.5) * width, (b as f64 + 0.5) * width];
                points.push(c);
                let mut st = [[[[0.0; 4]; 4]; 2]; 2];
                let mut ms = [0.0; 4];
                for gy in [-g, g] {
                    for gx in [-g, g] {
                        let (xi, eta) = (c[0] + gx * width, c[1] + gy * width);
                        let w = 0.25 * width * width;
                        let d = shape_grad(xi, eta);
                        let s = shape(xi, eta);
                        for la in 0..4 {
                            ms[la] += w * s[la];
                            for lb in 0..4 {
                                for i in 0..2 {
                                    for j in 0..2 {
                                        st[i][j][la][lb] += w * d[la][i] * d[lb][j];
                                    }
                                }
                            }
                        }
                    }
                }
                // Enforce the exact transpose symmetry st[i][j][a][b] = st[j][i][b][a].
                for i in 0..2 {
                    for j in 0..2 {
                        for la in 0..4 {
                            for lb in 0..4 {
                                if (i, la) < (j, lb) {
                                    st[j][i][lb][la] = st[i][j][la][lb];
                                }
                            }
                        }
                    }
                }
                stiff.push(st);
                mass.push(ms);
            }
        }
        QuadRule { points, weight: width * width, stiff, mass }
    }
}

/// A mesh of axis-aligned h x h squares.
pub trait QuadMesh: Sync {
    fn h(&self) -> f64;
    fn n_nodes(&self) -> usize;
    fn n_elements(&self) -> usize;
    /// Node indices in local order (ll, lr, ur, ul).
    fn element_nodes(&self, e: usize) -> [usize; 4];
    /// Physical coordinates of the lower-left corner.
    fn element_origin(&self, e: usize) -> [f64; 2];
}

/// Sparsity pattern of an m-component operator on `mesh`.
pub fn pattern(mesh: &impl QuadMesh, m: usize) -> CsrMatrix {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_nodes()];
    for e in 0..mesh.n_elements() {
        let nodes = mesh.element_nodes(e);
        for &a in &nodes {
            adj[a].extend_from_slice(&nodes);
        }
    }
    let mut rows = Vec::with_capacity(mesh.n_nodes() * m);
    for mut nbrs in adj {
        nbrs.sort_unstable();
        nbrs.dedup();
        for _alpha in 0..m {
            rows.push(nbrs.iter().flat_map(|&b| (0..m).map(move |beta| b * m + beta)).collect());
        }
    }
    CsrMatrix::from_pattern(rows)
}

/// Element matrices are computed in parallel and scattered in element order so
/// the floating-point summation order never depends on the thread count.
fn scatter(mesh: &impl QuadMesh, m: usize, local: impl Fn(usize, &mut [f64]) + Sync) -> CsrMatrix {
    let mut mat = pattern(mesh, m);
    let nl = 4 * m;
    let ne = mesh.n_elements();
    const CHUNK: usize = 8192;
    let mut buf = vec![0.0; CHUNK.min(ne.max(1)) * nl * nl];
    let mut start = 0;
    while start < ne {
        let end = (start + CHUNK).min(ne);
        let block = &mut buf[..(end - start) * nl * nl];
        block.par_chunks_mut(nl * nl).enumerate().for_each(|(k, ke)| {
            ke.iter_mut().for_each(|v| *v = 0.0);
            local(start + k, ke);
        });
        for (k, ke) in block.chunks(nl * nl).enumerate() {
            let nodes = mesh.element_nodes(start + k);
            for la in 0..4 {
                for alpha in 0..m {
                    let row = nodes[la] * m + alpha;
                    for lb in 0..4 {
                        for beta in 0..m {
                            let v = ke[(la * m + alpha) * nl + lb * m + beta];
                            if v != 0.0 {
                                mat.add_at(row, nodes[lb] * m + beta, v);
                            }
                        }
                    }
                }
            }
        }
        start = end;
    }
    mat
}

/// Stiffness matrix of `-d_i(a_ij^{ab}(x) d_j u^b)` with q x q midpoint
/// quadrature. `coeff(x, out)` writes the dm x dm tensor at physical x.
pub fn assemble_stiffness<F>(mesh: &impl QuadMesh, m: usize, q: usize, coeff: F) -> CsrMatrix
where
    F: Fn([f64; 2], &mut [f64]) + Sync,
{
    let rule = QuadRule::midpoint(q);
    let h = mesh.h();
    let dm = DIM * m;
    // h^2 (area) times 1/h^2 (two reference gradients) cancels in 2-D.
    scatter(mesh, m, |e, ke| {
        let o = mesh.element_origin(e);
        let mut a = vec![0.0; dm * dm];
        let nl = 4 * m;
        for (p, st) in rule.points.iter().zip(&rule.stiff) {
            coeff([o[0] + p[0] * h, o[1] + p[1] * h], &mut a);
            for alpha in 0..m {
                for beta in 0..m {
                    let c = |i: usize, j: usize| a[(i * m + alpha) * dm + j * m + beta];
                    let (c00, c01, c10, c11) = (c(0, 0), c(0, 1), c(1, 0), c(1, 1));
                    for la in 0..4 {
                        for lb in 0..4 {
                            // The off-diagonal pair is summed first so that the
                            // transposed entry is bitwise identical for
                            // symmetric tensors.
                            let off = c01 * st[0][1][la][lb] + c10 * st[1][0][la][lb];
                            ke[(la * m + alpha) * nl + lb * m + beta] +=
                                c00 * st[0][0][la][lb] + c11 * st[1][1][la][lb] + off;
                        }
                    }
                }
            }
        }
    })
}

/// Consistent mass matrix, block-diagonal in components.
pub fn assemble_mass(mesh: &impl QuadMesh, m: usize) -> CsrMatrix {
    let h2 = mesh.h() * mesh.h();
    const REF: [[f64; 4]; 4] = [[4.0, 2.0, 1.0, 2.0], [2.0, 4.0, 2.0, 1.0], [1.0, 2.0, 4.0, 2.0], [2.0, 1.0, 2.0, 4.0]];
    scatter(mesh, m, |_, ke| {
        let nl = 4 * m;
        for la in 0..4 {
            for lb in 0..4 {
                for alpha in 0..m {
                    ke[(la * m + alpha) * nl + lb * m + alpha] = h2 * REF[la][lb] / 36.0;
                }
            }
        }
    })
}

/// Load vector `int f^a phi_i^a` with q x q midpoint quadrature.
pub fn assemble_load<F>(mesh: &impl QuadMesh, m: usize, q: usize, f: F) -> Vec<f64>
where
    F: Fn([f64; 2], &mut [f64]) + Sync,
{
    let rule = QuadRule::midpoint(q);
    let h = mesh.h();
    let local: Vec<Vec<f64>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let o = mesh.element_origin(e);
            let mut fe = vec![0.0; 4 * m];
            let mut val = vec![0.0; m];
            for (p, s) in rule.points.iter().zip(&rule.mass) {
                f([o[0] + p[0] * h, o[1] + p[1] * h], &mut val);
                for la in 0..4 {
                    for alpha in 0..m {
                        fe[la * m + alpha] += h * h * val[alpha] * s[la];
                    }
                }
            }
            fe
        })
        .collect();
    let mut b = vec![0.0; mesh.n_nodes() * m];
    for (e, fe) in local.iter().enumerate() {
        for (la, node) in mesh.element_nodes(e).into_iter().enumerate() {
            for alpha in 0..m {
                b[node * m + alpha] += fe[la * m + alpha];
            }
        }
    }
    b
}

/// Load vector `int f^a phi_i^a` with the 3 x 3 Gauss rule per element, exact
/// for polynomial data up to degree 3 in each variable.
pub fn assemble_load_gauss<F>(mesh: &impl QuadMesh, m: usize, f: F) -> Vec<f64>
where
    F: Fn([f64; 2], &mut [f64]) + Sync,
{
    let r = (0.6f64).sqrt() / 2.0;
    let pts = [(0.5 - r, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + r, 5.0 / 18.0)];
    let h = mesh.h();
    element_vectors(mesh, m, |e, fe| {
        let o = mesh.element_origin(e);
        let mut val = vec![0.0; m];
        for &(xi, wx) in &pts {
            for &(eta, wy) in &pts {
                f([o[0] + xi * h, o[1] + eta * h], &mut val);
                let s = shape(xi, eta);
                for la in 0..4 {
                    for alpha in 0..m {
                        fe[la * m + alpha] += h * h * wx * wy * val[alpha] * s[la];
                    }
                }
            }
        }
    })
}

/// Vector `int g_i^a d_i phi^a` with q x q sub-cell midpoint sampling; `g`
/// writes `out[alpha * 2 + i]`.
pub fn assemble_gradient_load<F>(mesh: &impl QuadMesh, m: usize, q: usize, g: F) -> Vec<f64>
where
    F: Fn([f64; 2], &mut [f64]) + Sync,
{
    let rule = QuadRule::midpoint(q);
    let h = mesh.h();
    element_vectors(mesh, m, |e, fe| {
        let o = mesh.element_origin(e);
        let mut val = vec![0.0; 2 * m];
        for p in &rule.points {
            g([o[0] + p[0] * h, o[1] + p[1] * h], &mut val);
            let dg = shape_grad(p[0], p[1]);
            for la in 0..4 {
                for alpha in 0..m {
                    // h^2 area times 1/h from the physical gradient.
                    fe[la * m + alpha] +=
                        h * rule.weight * (val[alpha * 2] * dg[la][0] + val[alpha * 2 + 1] * dg[la][1]);
                }
            }
        }
    })
}

/// Parallel element loop with an ordered sequential scatter.
fn element_vectors<F>(mesh: &impl QuadMesh, m: usize, local: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let blocks: Vec<Vec<f64>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let mut fe = vec![0.0; 4 * m];
            local(e, &mut fe);
            fe
        })
        .collect();
    let mut b = vec![0.0; mesh.n_nodes() * m];
    for (e, fe) in blocks.iter().enumerate() {
        for (la, node) in mesh.element_nodes(e).into_iter().enumerate() {
            for alpha in 0..m {
                b[node * m + alpha] += fe[la * m + alpha];
            }
        }
    }
    b
}

/// Gradient of component `alpha` of a nodal field on element `e` at reference
/// point (xi, eta).
#[inline]
pub fn element_gradient(
    mesh: &impl QuadMesh,
    values: &[f64],
    m: usize,
    alpha: usize,
    e: usize,
    xi: f64,
    eta: f64,
) -> [f64; 2] {
    let g = shape_grad(xi, eta);
    let nodes = mesh.element_nodes(e);
    let h = mesh.h();
    let mut out = [0.0; 2];
    for la in 0..4 {
        let u = values[nodes[la] * m + alpha];
        out[0] += u * g[la][0] / h;
        out[1] += u * g[la][1] / h;
    }
    out
}

/// Lumped L2 projection of element-centre gradients to nodes, i.e. the average
/// of the centre gradients of the elements sharing each node. Output layout is
/// `[(node * m + alpha) * 2 + k]`.
pub fn nodal_gradients(mesh: &impl QuadMesh, values: &[f64], m: usize) -> Vec<f64> {
    let nn = mesh.n_nodes();
    let mut acc = vec![0.0; nn * m * 2];
    let mut count = vec![0u32; nn];
    for e in 0..mesh.n_elements() {
        let nodes = mesh.element_nodes(e);
        for alpha in 0..m {
            let g = element_gradient(mesh, values, m, alpha, e, 0.5, 0.5);
            for &n in &nodes {
                acc[(n * m + alpha) * 2] += g[0];
                acc[(n * m + alpha) * 2 + 1] += g[1];
            }
        }
        for &n in &nodes {
            count[n] += 1;
        }
    }
    for n in 0..nn {
        let c = count[n].max(1) as f64;
        for v in &mut acc[n * m * 2..(n + 1) * m * 2] {
            *v /= c;
        }
    }
    acc
}

/// Lumped projection of one scalar value per element to nodes.
pub fn nodal_average(mesh: &impl QuadMesh, per_element: &[f64]) -> Vec<f64> {
    let nn = mesh.n_nodes();
    let mut acc = vec![0.0; nn];
    let mut count = vec![0u32; nn];
    for (e, &v) in per_element.iter().enumerate() {
        for n in mesh.element_nodes(e) {
            acc[n] += v;
            count[n] += 1;
        }
    }
    acc.iter().zip(&count).map(|(a, &c)| a / c.max(1) as f64).collect()
}

/// Exact integral of each component of a bilinear nodal field.
pub fn integrate(mesh: &impl QuadMesh, values: &[f64], m: usize) -> Vec<f64> {
    let mut s = vec![0.0; m];
    let w = 0.25 * mesh.h() * mesh.h();
    for e in 0..mesh.n_elements() {
        for n in mesh.element_nodes(e) {
            for (alpha, sa) in s.iter_mut().enumerate() {
                *sa += w * values[n * m + alpha];
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A single-row strip of k elements, enough to exercise assembly.
    struct Strip {
        k: usize,
        h: f64,
    }

    impl QuadMesh for Strip {
        fn h(&self) -> f64 {
            self.h
        }
        fn n_nodes(&self) -> usize {
            2 * (self.k + 1)
        }
        fn n_elements(&self) -> usize {
            self.k
        }
        fn element_nodes(&self, e: usize) -> [usize; 4] {
            let w = self.k + 1;
            [e, e + 1, w + e + 1, w + e]
        }
        fn element_origin(&self, e: usize) -> [f64; 2] {
            [e as f64 * self.h, 0.0]
        }
    }

    #[test]
    fn partition_of_unity() {
        for &(xi, eta) in &[(0.0, 0.0), (0.3, 0.8), (1.0, 0.5)] {
            let s: f64 = shape(xi, eta).iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
            let g = shape_grad(xi, eta);
            assert!(g.iter().map(|v| v[0]).sum::<f64>().abs() < 1e-15);
            assert!(g.iter().map(|v| v[1]).sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn laplacian_element_matrix() {
        let mesh = Strip { k: 1, h: 0.5 };
        let k = assemble_stiffness(&mesh, 1, 2, |_, a| {
            a.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        });
        let d = k.to_dense();
        let reference = [
            [4.0, -1.0, -2.0, -1.0],
            [-1.0, 4.0, -1.0, -2.0],
            [-2.0, -1.0, 4.0, -1.0],
            [-1.0, -2.0, -1.0, 4.0],
        ];
        // Strip node numbering: local (ll, lr, ur, ul) = (0, 1, 3, 2).
        let map = [0, 1, 3, 2];
        for q in [1, 2, 3] {
            let k = assemble_stiffness(&mesh, 1, q, |_, a| a.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]));
            let d = k.to_dense();
            for a in 0..4 {
                for b in 0..4 {
                    assert!((d[map[a]][map[b]] - reference[a][b] / 6.0).abs() < 1e-15, "q={q}");
                }
            }
        }
        assert_eq!(d.len(), 4);
        let mass = assemble_mass(&mesh, 1);
        let total: f64 = mass.to_dense().iter().flatten().sum();
        assert!((total - 0.25).abs() < 1e-15);
    }

    #[test]
    fn load_of_constant_integrates_area() {
        let mesh = Strip { k: 3, h: 0.25 };
        let b = assemble_load(&mesh, 2, 2, |_, v| {
            v[0] = 1.0;
            v[1] = -2.0;
        });
        let s0: f64 = b.iter().step_by(2).sum();
        let s1: f64 = b.iter().skip(1).step_by(2).sum();
        assert!((s0 - 3.0 * 0.0625).abs() < 1e-15);
        assert!((s1 + 6.0 * 0.0625).abs() < 1e-15);
    }

    #[test]
    fn gradients_of_linear_field() {
        let mesh = Strip { k: 4, h: 0.125 };
        let w = mesh.k + 1;
        let vals: Vec<f64> = (0..mesh.n_nodes())
            .map(|n| {
                let (i, j) = (n % w, n / w);
                3.0 * i as f64 * 0.125 - 2.0 * j as f64 * 0.125
            })
            .collect();
        let g = nodal_gradients(&mesh, &vals, 1);
        for c in g.chunks(2) {
            assert!((c[0] - 3.0).abs() < 1e-12 && (c[1] + 2.0).abs() < 1e-12);
        }
    }
}
