//! Axis-aligned polygons, structured quadrilateral meshes, the boundary
//! distance δ(x) and the inward parallel family Λ_t.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::QuadMesh;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("unknown domain `{0}` (expected `square` or `lshape`)")]
    UnknownDomain(String),
    #[error("mesh size h = {0} does not divide the unit lattice (1/h must be an integer)")]
    NonIntegerLattice(f64),
    #[error("mesh size h = {0} is too coarse (need h <= 1/8)")]
    TooCoarse(f64),
    #[error("polygon vertex ({0}, {1}) is not on the mesh lattice")]
    VertexOffLattice(f64, f64),
    #[error("point ({0}, {1}) lies outside the domain")]
    Outside(f64, f64),
    #[error("point ({0}, {1}) is not on the boundary")]
    NotOnBoundary(f64, f64),
    #[error("offset t = {t} outside (-{c}, 0]")]
    OffsetRange { t: f64, c: f64 },
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
}

const TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolygonKind {
    Square,
    Lshape,
    Custom,
}

/// Simple polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
    pub kind: PolygonKind,
    pub convex: bool,
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn normalize(a: [f64; 2]) -> [f64; 2] {
    let n = norm(a);
    [a[0] / n, a[1] / n]
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Distance from p to segment [a, b] and the parameter of the closest point.
fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let d = sub(b, a);
    let len2 = d[0] * d[0] + d[1] * d[1];
    let s = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    let c = [a[0] + s * d[0], a[1] + s * d[1]];
    (norm(sub(p, c)), s)
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, DomainError> {
        if vertices.len() < 3 {
            return Err(DomainError::InvalidPolygon("fewer than three vertices".into()));
        }
        let mut p = Polygon { vertices, kind: PolygonKind::Custom, convex: false };
        if p.signed_area() <= 0.0 {
            return Err(DomainError::InvalidPolygon("vertices must be counter-clockwise".into()));
        }
        let n = p.vertices.len();
        p.convex = (0..n).all(|k| {
            let (a, b, c) = (p.vertices[k], p.vertices[(k + 1) % n], p.vertices[(k + 2) % n]);
            cross(sub(b, a), sub(c, b)) >= 0.0
        });
        Ok(p)
    }

    /// The unit square [0,1]^2.
    pub fn square() -> Self {
        Polygon {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            kind: PolygonKind::Square,
            convex: true,
        }
    }

    /// The unit square minus its upper-right quadrant.
    pub fn lshape() -> Self {
        Polygon {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.5], [0.5, 0.5], [0.5, 1.0], [0.0, 1.0]],
            kind: PolygonKind::Lshape,
            convex: false,
        }
    }

    pub fn by_name(name: &str) -> Result<Self, DomainError> {
        match name {
            "square" => Ok(Self::square()),
            "lshape" | "l-shape" | "L" => Ok(Self::lshape()),
            other => Err(DomainError::UnknownDomain(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PolygonKind::Square => "square",
            PolygonKind::Lshape => "lshape",
            PolygonKind::Custom => "custom",
        }
    }

    fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n).map(|k| cross(self.vertices[k], self.vertices[(k + 1) % n])).sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| norm(sub(b, a))).sum()
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for a in &self.vertices {
            for b in &self.vertices {
                d = d.max(norm(sub(*a, *b)));
            }
        }
        d
    }

    pub fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |k| (self.vertices[k], self.vertices[(k + 1) % n]))
    }

    /// Inward unit normal of edge k (interior lies to the left of a CCW edge).
    pub fn inward_normal(&self, k: usize) -> [f64; 2] {
        let n = self.vertices.len();
        let d = normalize(sub(self.vertices[(k + 1) % n], self.vertices[k]));
        [-d[1], d[0]]
    }

    fn boundary_distance_raw(&self, x: [f64; 2]) -> f64 {
        self.edges().map(|(a, b)| segment_distance(x, a, b).0).fold(f64::INFINITY, f64::min)
    }

    /// Winding-number test; points within 1e-12 of the boundary count as inside.
    pub fn contains(&self, x: [f64; 2]) -> bool {
        if self.boundary_distance_raw(x) <= TOL {
            return true;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > x[1]) != (b[1] > x[1]) {
                let xi = a[0] + (x[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if x[0] < xi {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// δ(x) = dist(x, ∂Ω) for x in the closed domain.
    pub fn distance_to_boundary(&self, x: [f64; 2]) -> Result<f64, DomainError> {
        if !self.contains(x) {
            return Err(DomainError::Outside(x[0], x[1]));
        }
        Ok(self.boundary_distance_raw(x))
    }

    /// Index of an edge containing Q, if Q is on the boundary.
    pub fn boundary_edge(&self, q: [f64; 2]) -> Option<usize> {
        self.edges().position(|(a, b)| segment_distance(q, a, b).0 <= TOL)
    }

    /// Inward direction of the interior-angle bisector at vertex k.
    fn vertex_bisector(&self, k: usize) -> [f64; 2] {
        let n = self.vertices.len();
        let prev = self.inward_normal((k + n - 1) % n);
        let next = self.inward_normal(k);
        normalize([prev[0] + next[0], prev[1] + next[1]])
    }

    /// Λ_t(Q): Q moved a distance |t| into the domain. Away from vertices the
    /// direction is the inward edge normal; within |t|√2 of a vertex it is
    /// blended linearly toward that vertex's interior bisector.
    pub fn parallel_point(&self, q: [f64; 2], t: f64, c: f64) -> Result<[f64; 2], DomainError> {
        if !(t <= 0.0 && t > -c) {
            return Err(DomainError::OffsetRange { t, c });
        }
        let edge = self.boundary_edge(q).ok_or(DomainError::NotOnBoundary(q[0], q[1]))?;
        if t == 0.0 {
            return Ok(q);
        }
        let s = t.abs();
        let radius = s * std::f64::consts::SQRT_2;
        let mut dir = self.inward_normal(edge);
        let (near, dist) = (0..self.vertices.len())
            .map(|k| (k, norm(sub(q, self.vertices[k]))))
            .fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
        if dist < radius {
            let w = dist / radius;
            let b = self.vertex_bisector(near);
            dir = normalize([(1.0 - w) * b[0] + w * dir[0], (1.0 - w) * b[1] + w * dir[1]]);
        }
        Ok([q[0] + s * dir[0], q[1] + s * dir[1]])
    }
}

/// Inward offsets used to sample the radial maximal function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParallelFamily {
    /// Maximal inward offset.
    pub c: f64,
    /// Number of uniformly spaced offsets in (-c, 0].
    pub samples: usize,
}

impl Default for ParallelFamily {
    fn default() -> Self {
        ParallelFamily { c: 0.125, samples: 32 }
    }
}

impl ParallelFamily {
    /// t_k = -k c / samples for k = 0..samples, so t_0 = 0 and all t > -c.
    pub fn offsets(&self) -> Vec<f64> {
        (0..self.samples).map(|k| -(k as f64) * self.c / self.samples as f64).collect()
    }

    pub fn points(&self, poly: &Polygon, q: [f64; 2]) -> Result<Vec<[f64; 2]>, DomainError> {
        self.offsets().into_iter().map(|t| poly.parallel_point(q, t, self.c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub element: usize,
    /// End nodes, ordered counter-clockwise around the domain.
    pub nodes: [usize; 2],
    pub midpoint: [f64; 2],
    /// Outward unit normal.
    pub normal: [f64; 2],
}

/// One point of the boundary midpoint rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub x: [f64; 2],
    pub weight: f64,
    pub normal: [f64; 2],
    pub edge: usize,
}

/// Uniform quadrilateral mesh of a lattice polygon.
#[derive(Debug, Clone)]
pub struct StructMesh {
    pub poly: Polygon,
    pub h: f64,
    /// Lattice cells per unit length.
    pub n: usize,
    pub nodes: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 4]>,
    element_cells: Vec<[usize; 2]>,
    lattice_node: Vec<usize>,
    lattice_element: Vec<usize>,
    pub boundary: Vec<bool>,
    pub boundary_edges: Vec<BoundaryEdge>,
}

impl StructMesh {
    pub fn build(poly: &Polygon, h: f64) -> Result<Self, DomainError> {
        let inv = 1.0 / h;
        let n = inv.round() as usize;
        if !(h > 0.0) || (inv - n as f64).abs() > 1e-9 * inv || n == 0 {
            return Err(DomainError::NonIntegerLattice(h));
        }
        if n < 8 {
            return Err(DomainError::TooCoarse(h));
        }
        let h = 1.0 / n as f64;
        for v in &poly.vertices {
            for c in v {
                if (c * n as f64 - (c * n as f64).round()).abs() > 1e-9 || !(0.0..=1.0).contains(c) {
                    return Err(DomainError::VertexOffLattice(v[0], v[1]));
                }
            }
        }
        let w = n + 1;
        let mut lattice_element = vec![usize::MAX; n * n];
        let mut element_cells = Vec::new();
        let mut used = vec![false; w * w];
        for j in 0..n {
            for i in 0..n {
                let c = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                if poly.contains(c) {
                    lattice_element[j * n + i] = element_cells.len();
                    element_cells.push([i, j]);
                    for (di, dj) in [(0, 0), (1, 0), (1, 1), (0, 1)] {
                        used[(j + dj) * w + i + di] = true;
                    }
                }
            }
        }
        let mut lattice_node = vec![usize::MAX; w * w];
        let mut nodes = Vec::new();
        for j in 0..w {
            for i in 0..w {
                if used[j * w + i] {
                    lattice_node[j * w + i] = nodes.len();
                    nodes.push([i as f64 * h, j as f64 * h]);
                }
            }
        }
        let elements: Vec<[usize; 4]> = element_cells
            .iter()
            .map(|&[i, j]| {
                [
                    lattice_node[j * w + i],
                    lattice_node[j * w + i + 1],
                    lattice_node[(j + 1) * w + i + 1],
                    lattice_node[(j + 1) * w + i],
                ]
            })
            .collect();

        let has_element = |i: isize, j: isize| {
            i >= 0 && j >= 0 && (i as usize) < n && (j as usize) < n && lattice_element[j as usize * n + i as usize] != usize::MAX
        };
        let mut boundary = vec![false; nodes.len()];
        let mut boundary_edges = Vec::new();
        for (e, &[i, j]) in element_cells.iter().enumerate() {
            let (ii, jj) = (i as isize, j as isize);
            let el = elements[e];
            // (neighbour offset, local end nodes in CCW order, outward normal)
            let sides = [
                ((0, -1), [el[0], el[1]], [0.0, -1.0]),
                ((1, 0), [el[1], el[2]], [1.0, 0.0]),
                ((0, 1), [el[2], el[3]], [0.0, 1.0]),
                ((-1, 0), [el[3], el[0]], [-1.0, 0.0]),
            ];
            for ((di, dj), ends, normal) in sides {
                if !has_element(ii + di, jj + dj) {
                    let (a, b) = (nodes[ends[0]], nodes[ends[1]]);
                    boundary[ends[0]] = true;
                    boundary[ends[1]] = true;
                    boundary_edges.push(BoundaryEdge {
                        element: e,
                        nodes: ends,
                        midpoint: [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])],
                        normal,
                    });
                }
            }
        }
        Ok(StructMesh {
            poly: poly.clone(),
            h,
            n,
            nodes,
            elements,
            element_cells,
            lattice_node,
            lattice_element,
            boundary,
            boundary_edges,
        })
    }

    pub fn n_boundary_nodes(&self) -> usize {
        self.boundary.iter().filter(|&&b| b).count()
    }

    pub fn area(&self) -> f64 {
        self.elements.len() as f64 * self.h * self.h
    }

    pub fn perimeter(&self) -> f64 {
        self.boundary_edges.len() as f64 * self.h
    }

    /// Node at lattice position (i, j), if present.
    pub fn lattice_node(&self, i: usize, j: usize) -> Option<usize> {
        let w = self.n + 1;
        (i < w && j < w).then(|| self.lattice_node[j * w + i]).filter(|&v| v != usize::MAX)
    }

    pub fn element_cell(&self, e: usize) -> [usize; 2] {
        self.element_cells[e]
    }

    pub fn element_center(&self, e: usize) -> [f64; 2] {
        let [i, j] = self.element_cells[e];
        [(i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h]
    }

    /// Element containing x with reference coordinates, tolerant to points on
    /// element sides and on the boundary.
    pub fn locate(&self, x: [f64; 2]) -> Result<(usize, f64, f64), DomainError> {
        let n = self.n as isize;
        let fi = x[0] / self.h;
        let fj = x[1] / self.h;
        let (bi, bj) = (fi.floor() as isize, fj.floor() as isize);
        let tol = 1e-9;
        for (di, dj) in [(0, 0), (-1, 0), (0, -1), (-1, -1)] {
            let (i, j) = (bi + di, bj + dj);
            if i < 0 || j < 0 || i >= n || j >= n {
                continue;
            }
            let e = self.lattice_element[(j * n + i) as usize];
            if e == usize::MAX {
                continue;
            }
            let xi = fi - i as f64;
            let eta = fj - j as f64;
            if (-tol..=1.0 + tol).contains(&xi) && (-tol..=1.0 + tol).contains(&eta) {
                return Ok((e, xi.clamp(0.0, 1.0), eta.clamp(0.0, 1.0)));
            }
        }
        Err(DomainError::Outside(x[0], x[1]))
    }

    /// Edge-midpoint rule on the boundary; weights sum to the perimeter.
    pub fn boundary_quadrature(&self) -> Vec<BoundaryPoint> {
        self.boundary_edges
            .iter()
            .enumerate()
            .map(|(k, e)| BoundaryPoint { x: e.midpoint, weight: self.h, normal: e.normal, edge: k })
            .collect()
    }

    /// Stable identifier of the mesh, used to seed random start vectors.
    pub fn fingerprint(&self) -> u64 {
        let kind = match self.poly.kind {
            PolygonKind::Square => 1u64,
            PolygonKind::Lshape => 2,
            PolygonKind::Custom => 3,
        };
        (kind << 32) ^ (self.n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ self.nodes.len() as u64
    }
}

impl QuadMesh for StructMesh {
    fn h(&self) -> f64 {
        self.h
    }
    fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
    fn n_elements(&self) -> usize {
        self.elements.len()
    }
    fn element_nodes(&self, e: usize) -> [usize; 4] {
        self.elements[e]
    }
    fn element_origin(&self, e: usize) -> [f64; 2] {
        let [i, j] = self.element_cells[e];
        [i as f64 * self.h, j as f64 * self.h]
    }
}

/// Convenience wrapper: [`StructMesh::build`].
pub fn build_mesh(poly: &Polygon, h: f64) -> Result<StructMesh, DomainError> {
    StructMesh::build(poly, h)
}

/// Convenience wrapper: [`StructMesh::boundary_quadrature`].
pub fn boundary_quadrature(mesh: &StructMesh) -> Vec<BoundaryPoint> {
    mesh.boundary_quadrature()
}
