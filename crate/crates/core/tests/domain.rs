use homocell::domain::{ParallelFamily, Polygon, StructMesh};
use proptest::prelude::*;

fn polygons() -> [Polygon; 2] {
    [Polygon::square(), Polygon::lshape()]
}

/// A point on the boundary of `poly` at arclength fraction `s` of edge `k`.
fn boundary_point(poly: &Polygon, k: usize, s: f64) -> [f64; 2] {
    let (a, b) = poly.edges().nth(k % poly.edges().count()).unwrap();
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

#[test]
fn node_classification_matches_distance() {
    for poly in polygons() {
        let mesh = StructMesh::build(&poly, 1.0 / 16.0).unwrap();
        for (i, x) in mesh.nodes.iter().enumerate() {
            let d = poly.distance_to_boundary(*x).unwrap();
            assert_eq!(mesh.boundary[i], d == 0.0, "node {i} at {x:?}, δ = {d}");
        }
        assert_eq!(mesh.elements.len() as f64 * mesh.h * mesh.h, poly.area());
        let edge_len: f64 = mesh.boundary_edges.len() as f64 * mesh.h;
        assert_eq!(edge_len, poly.perimeter());
        for e in &mesh.boundary_edges {
            assert_eq!(e.normal[0].hypot(e.normal[1]), 1.0);
        }
    }
}

#[test]
fn family_offsets_cover_the_half_open_range() {
    let f = ParallelFamily::default();
    let t = f.offsets();
    assert_eq!(t.len(), 32);
    assert_eq!(t[0], 0.0);
    assert!(t.iter().all(|&t| t > -f.c && t <= 0.0));
    let q = [0.5, 0.0];
    let pts = f.points(&Polygon::square(), q).unwrap();
    assert_eq!(pts[0], q);
}

#[test]
fn reentrant_corner_moves_into_the_wedge() {
    let l = Polygon::lshape();
    for t in [-0.01, -0.05, -0.12] {
        let p = l.parallel_point([0.5, 0.5], t, 0.125).unwrap();
        assert!(l.contains(p));
        let d = l.distance_to_boundary(p).unwrap();
        assert!(d >= t.abs() / 4.0 && d <= t.abs() + 1e-15, "t = {t}: δ = {d}");
    }
}

proptest! {
    #[test]
    fn parallel_points_are_comparable_to_offset(
        which in 0usize..2, k in 0usize..8, s in 0.0f64..1.0, t in -0.1249f64..0.0, u in -0.1249f64..0.0,
    ) {
        let poly = &polygons()[which];
        let q = boundary_point(poly, k, s);
        let c = 0.125;
        let p = poly.parallel_point(q, t, c).unwrap();
        let d = poly.distance_to_boundary(p).unwrap();
        prop_assert!(d >= t.abs() / 4.0 - 1e-14 && d <= t.abs() + 1e-14, "δ = {} for t = {}", d, t);
        let p2 = poly.parallel_point(q, u, c).unwrap();
        let gap = (p[0] - p2[0]).hypot(p[1] - p2[1]);
        let dt = (t - u).abs();
        prop_assert!(gap <= 4.0 * dt + 1e-14 && gap >= dt / 4.0 - 1e-14, "|Λ_t − Λ_s| = {} for |t − s| = {}", gap, dt);
    }

    #[test]
    fn located_points_lie_in_their_element(which in 0usize..2, x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let poly = &polygons()[which];
        prop_assume!(poly.contains([x, y]));
        let mesh = StructMesh::build(poly, 1.0 / 8.0).unwrap();
        let (e, xi, eta) = mesh.locate([x, y]).unwrap();
        prop_assert!((0.0..=1.0).contains(&xi) && (0.0..=1.0).contains(&eta));
        let c = mesh.element_center(e);
        prop_assert!((c[0] - x).abs() <= 0.5 * mesh.h + 1e-12 && (c[1] - y).abs() <= 0.5 * mesh.h + 1e-12);
    }
}
