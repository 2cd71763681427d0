use std::sync::Arc;

use homocell::coeff::{parse_expr_in, CoefficientField, Expr, Tensor, VarSet};
use homocell::domain::{ParallelFamily, Polygon, StructMesh};
use homocell::solver::{solve, BvpSpec, DiscreteField, Operator};
use homocell::torus::{CorrectorSet, Which};
use homocell::twoscale::{
    build_expansion, conormal_identity_check, norms, phi_weight, radial_max_l2, radial_profile, residual_identity_check,
    tangential_term, weighted_h1, Manufactured,
};
use proptest::prelude::*;

fn ex(s: &str) -> Expr {
    parse_expr_in(s, VarSet::Spatial).unwrap()
}

fn mesh(poly: &Polygon, h: f64) -> Arc<StructMesh> {
    Arc::new(StructMesh::build(poly, h).unwrap())
}

fn trig() -> CoefficientField {
    CoefficientField::isotropic_str("2 + sin(2*pi*y1)*sin(2*pi*y2)").unwrap()
}

#[test]
fn norms_of_zero_and_one() {
    for poly in [Polygon::square(), Polygon::lshape()] {
        let m = mesh(&poly, 1.0 / 16.0);
        let zero = norms(&DiscreteField::interpolate(m.clone(), &[ex("0")]), &[0.0, 2.0]);
        assert_eq!(zero.l2_volume, 0.0);
        assert_eq!(zero.l2_boundary, 0.0);
        assert_eq!(zero.radial_max_l2, 0.0);
        assert_eq!(zero.h1_norm, 0.0);
        assert!(zero.weighted_h1.iter().all(|p| p.1 == 0.0));
        let one = norms(&DiscreteField::interpolate(m, &[ex("1")]), &[0.0, 2.0]);
        assert!((one.l2_volume - poly.area().sqrt()).abs() <= 1e-12);
        assert!((one.l2_boundary - poly.perimeter().sqrt()).abs() <= 1e-12);
        assert!((one.radial_max_l2 - poly.perimeter().sqrt()).abs() <= 1e-12);
        assert!(one.weighted_h1.iter().all(|p| p.1 == 0.0));
    }
}

#[test]
fn weight_ratio_bounds_and_monotonicity() {
    let h = 1.0 / 32.0;
    let m = mesh(&Polygon::lshape(), h);
    let u = DiscreteField::interpolate(m, &[ex("sin(3*x1)*x2 + x1*x1")]);
    let w0 = weighted_h1(&u, 0.0);
    let w05 = weighted_h1(&u, 0.5);
    let w2 = weighted_h1(&u, 2.0);
    assert!(w0 > 0.0 && w0 <= w05 && w05 <= w2);
    // The weighted functional is the square root of the integral, so the
    // pointwise weight bound enters squared.
    let ratio = (w2 / w0).powi(2);
    assert!(ratio >= 1.0 && ratio <= phi_weight(2.0, h / 2.0), "{ratio}");
}

#[test]
fn radial_maximum_dominates_every_offset() {
    let m = mesh(&Polygon::lshape(), 1.0 / 32.0);
    let u = DiscreteField::interpolate(m, &[ex("cos(5*x1)*x2 - x1")]);
    let fam = ParallelFamily::default();
    let max = radial_max_l2(&u, &fam).unwrap();
    let profile = radial_profile(&u, &fam).unwrap();
    assert_eq!(profile.len(), 32);
    assert!(profile.iter().all(|&p| p <= max));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn norms_are_homogeneous(c in -50.0f64..50.0, k in 1.0f64..6.0) {
        let m = mesh(&Polygon::square(), 1.0 / 16.0);
        let u = DiscreteField::interpolate(m, &[ex(&format!("sin({k}*x1) + x2*x2"))]);
        let a = norms(&u, &[0.0, 0.5]);
        let b = norms(&u.scaled(c), &[0.0, 0.5]);
        let close = |x: f64, y: f64| (y - c.abs() * x).abs() <= 1e-12 * (1.0 + c.abs() * x);
        prop_assert!(close(a.l2_volume, b.l2_volume));
        prop_assert!(close(a.l2_boundary, b.l2_boundary));
        prop_assert!(close(a.radial_max_l2, b.radial_max_l2));
        prop_assert!(close(a.h1_norm, b.h1_norm));
        prop_assert!(close(a.h_half_surrogate, b.h_half_surrogate));
        for (p, q) in a.weighted_h1.iter().zip(&b.weighted_h1) {
            prop_assert!(close(p.1, q.1));
        }
    }
}

#[test]
fn constant_tensor_gives_vanishing_expansion_and_identities() {
    let a = Tensor::from_flat(1, vec![2.0, 0.3, 0.3, 1.0]);
    let field = CoefficientField::constant(&a);
    let cs = CorrectorSet::build(&field, 16, 2).unwrap();
    let m = mesh(&Polygon::square(), 1.0 / 64.0);
    let eps = 0.125;
    let f = vec![ex("1")];
    let g = vec![ex("x1")];
    let (ue, _) = solve(&BvpSpec::dirichlet(Operator::Oscillatory { field: field.clone(), eps }, f.clone(), g.clone()), &m, 2).unwrap();
    let (u0, _) = solve(&BvpSpec::dirichlet(Operator::Homogenized(cs.a_hat().unwrap().clone()), f, g), &m, 2).unwrap();
    let w = build_expansion(&ue, &u0, &cs, eps).unwrap();
    assert!(w.w.max_abs() <= 1e-8);
    let v = Manufactured::new(vec![ex("x1*x1*x2")]);
    let (res, u) = residual_identity_check(&v, &cs, eps, &m, 2).unwrap();
    assert!(res.diff_dual <= 1e-8 && res.lhs_dual <= 1e-8, "{res:?}");
    let con = conormal_identity_check(&v, Some(&u), &cs, eps, &m).unwrap();
    assert!(con.max_mismatch <= 1e-8, "{con:?}");
}

#[test]
fn dirichlet_expansion_error_on_the_boundary_is_the_corrector_term() {
    let eps = 0.125;
    let cs = CorrectorSet::build(&trig(), 16, 2).unwrap();
    let m = mesh(&Polygon::square(), eps / 16.0);
    let f = vec![ex("1")];
    let g = vec![ex("x1 + x2*x2")];
    let (ue, _) = solve(&BvpSpec::dirichlet(Operator::Oscillatory { field: trig(), eps }, f.clone(), g.clone()), &m, 2).unwrap();
    let (u0, _) = solve(&BvpSpec::dirichlet(Operator::Homogenized(cs.a_hat().unwrap().clone()), f, g), &m, 2).unwrap();
    let w = build_expansion(&ue, &u0, &cs, eps).unwrap();
    let grads = u0.nodal_gradients();
    for (i, x) in m.nodes.iter().enumerate().filter(|(i, _)| m.boundary[*i]) {
        let chi = cs.sample(*x, eps, Which::Chi);
        let want = -eps * (chi[cs.chi_index(0, 0, 0)] * grads[i * 2] + chi[cs.chi_index(1, 0, 0)] * grads[i * 2 + 1]);
        assert!((w.w.values[i] - want).abs() <= 1e-12, "node {i}");
    }
}

#[test]
fn expansion_error_shrinks_with_the_period() {
    let l2 = |eps: f64| {
        let cs = CorrectorSet::build(&trig(), 16, 2).unwrap();
        let m = mesh(&Polygon::square(), eps / 16.0);
        let spec = |op| BvpSpec::dirichlet(op, vec![ex("1")], vec![ex("0")]);
        let (ue, _) = solve(&spec(Operator::Oscillatory { field: trig(), eps }), &m, 2).unwrap();
        let (u0, _) = solve(&spec(Operator::Homogenized(cs.a_hat().unwrap().clone())), &m, 2).unwrap();
        build_expansion(&ue, &u0, &cs, eps).unwrap().norms(&[]).l2_volume
    };
    let (a, b) = (l2(0.125), l2(0.0625));
    assert!(b <= 0.7 * a, "{a:e} -> {b:e}");
}

#[test]
fn laminate_identity_with_single_hessian_entry() {
    let eps = 0.125;
    let h = 1.0 / 256.0;
    let lam = CoefficientField::isotropic_str("2 + cos(2*pi*y1)").unwrap();
    let cs = CorrectorSet::build(&lam, 32, 2).unwrap();
    let v = Manufactured::new(vec![ex("x2*x2")]);
    let hess = v.hessian([0.3, 0.6]);
    assert_eq!(hess, vec![0.0, 0.0, 0.0, 2.0]);
    let (res, _) = residual_identity_check(&v, &cs, eps, &mesh(&Polygon::square(), h), 2).unwrap();
    assert!(res.relative <= 0.1, "{res:?}");
}

#[test]
fn tangential_term_flips_under_index_swap() {
    let eps = 0.125;
    let cs = CorrectorSet::build(&trig(), 32, 2).unwrap();
    let m = mesh(&Polygon::lshape(), 1.0 / 64.0);
    let v = Manufactured::new(vec![ex("x1*x1*x2 - x2")]);
    for e in (0..m.boundary_edges.len()).step_by(7) {
        let a = tangential_term(&v, &cs, eps, &m, e, false);
        let b = tangential_term(&v, &cs, eps, &m, e, true);
        assert_eq!(a[0], -b[0]);
    }
}

#[test]
fn identity_discrepancies_decrease_under_refinement() {
    let eps = 0.125;
    let v = Manufactured::new(vec![ex("x1*x1*x2")]);
    let run = |h: f64| {
        let cs = CorrectorSet::build(&trig(), (eps / h) as usize, 2).unwrap();
        let m = mesh(&Polygon::square(), h);
        let (res, u) = residual_identity_check(&v, &cs, eps, &m, 2).unwrap();
        let con = conormal_identity_check(&v, Some(&u), &cs, eps, &m).unwrap();
        (res.relative, con.relative)
    };
    let (r1, c1) = run(1.0 / 128.0);
    let (r2, c2) = run(1.0 / 256.0);
    assert!(r2 <= 0.7 * r1 && c2 <= 0.7 * c1, "residual {r1} -> {r2}, conormal {c1} -> {c2}");
}
