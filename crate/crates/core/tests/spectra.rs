use std::f64::consts::PI;

use homocell::coeff::{CoefficientField, Tensor};
use homocell::domain::{Polygon, StructMesh};
use homocell::fem;
use homocell::solver::Operator;
use homocell::spectra::{
    dtn_gap_from, eig_gap_study, eigs, gap_inequality_check, DtnOperator, EigenKind, EigenOptions, SpectrumReport,
};
use homocell::torus::CorrectorSet;

fn iso(c: f64) -> Operator {
    Operator::Homogenized(Tensor::scaled_identity(1, c))
}

fn square(h: f64) -> StructMesh {
    StructMesh::build(&Polygon::square(), h).unwrap()
}

fn trig() -> CoefficientField {
    CoefficientField::isotropic_str("2 + sin(2*pi*y1)*sin(2*pi*y2)").unwrap()
}

fn spectrum(kind: EigenKind, op: &Operator, mesh: &StructMesh, count: usize) -> SpectrumReport {
    eigs(kind, op, mesh, 2, count, &EigenOptions::default()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn laplacian_oracles_on_the_square() {
    let mesh = square(1.0 / 64.0);
    let d = spectrum(EigenKind::Dirichlet, &iso(1.0), &mesh, 3);
    assert!(rel(d.eigenvalues[0], 2.0 * PI * PI) <= 5e-3, "{:?}", d.eigenvalues);
    assert!(rel(d.eigenvalues[1], 5.0 * PI * PI) <= 5e-3 && rel(d.eigenvalues[2], 5.0 * PI * PI) <= 5e-3);
    assert_eq!(d.clusters, vec![vec![2, 3]]);
    let n = spectrum(EigenKind::Neumann, &iso(1.0), &mesh, 3);
    assert!(rel(n.eigenvalues[0], PI * PI) <= 5e-3, "{:?}", n.eigenvalues);
    assert!(d.eigenvalues[0] > n.eigenvalues[0]);
    let mass = fem::assemble_mass(&mesh, 1);
    let ones = vec![1.0; mesh.nodes.len()];
    for v in &n.eigenvectors {
        assert!(mass.form(v, &ones).abs() <= 1e-8);
    }
    for s in [&d, &n] {
        assert!(s.residuals.iter().all(|r| *r <= 1e-8), "{:?}", s.residuals);
        assert!(s.rayleigh_defects.iter().all(|r| *r <= 1e-8));
    }
}

#[test]
fn scaling_the_tensor_scales_every_spectrum() {
    let mesh = square(1.0 / 32.0);
    for kind in [EigenKind::Dirichlet, EigenKind::Neumann, EigenKind::Steklov] {
        let a = spectrum(kind, &iso(1.0), &mesh, 4);
        let b = spectrum(kind, &iso(4.0), &mesh, 4);
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!(rel(*y, 4.0 * x) <= 1e-10, "{kind:?}: {y} vs 4 x {x}");
        }
    }
}

#[test]
fn steklov_first_value_matches_extrapolated_reference() {
    let s: Vec<f64> =
        [32.0, 64.0, 128.0].iter().map(|n| spectrum(EigenKind::Steklov, &iso(1.0), &square(1.0 / n), 1).eigenvalues[0]).collect();
    // Observed order from the three levels, then Richardson on the finest pair.
    let p = ((s[0] - s[1]) / (s[1] - s[2])).log2();
    let reference = s[2] + (s[2] - s[1]) / (2f64.powf(p) - 1.0);
    assert!(rel(s[1], reference) <= 1e-2, "s = {s:?}, reference {reference}");
    assert!(p > 0.5, "observed order {p}");
}

#[test]
fn monotone_in_the_coefficient() {
    let mesh = square(1.0 / 32.0);
    let lo = CoefficientField::isotropic_str("2 + sin(2*pi*y1)*sin(2*pi*y2)").unwrap();
    let hi = CoefficientField::isotropic_str("2.5 + sin(2*pi*y1)*sin(2*pi*y2)").unwrap();
    for kind in [EigenKind::Dirichlet, EigenKind::Neumann, EigenKind::Steklov] {
        let a = spectrum(kind, &Operator::Oscillatory { field: lo.clone(), eps: 0.25 }, &mesh, 4);
        let b = spectrum(kind, &Operator::Oscillatory { field: hi.clone(), eps: 0.25 }, &mesh, 4);
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!(x <= y, "{kind:?}: {x} > {y}");
        }
    }
}

#[test]
fn constant_coefficient_gaps_vanish() {
    let field = CoefficientField::constant(&Tensor::from_flat(1, vec![1.5, 0.2, 0.2, 1.0]));
    let cs = CorrectorSet::build(&field, 8, 2).unwrap();
    let opts = EigenOptions::default();
    for kind in [EigenKind::Dirichlet, EigenKind::Neumann, EigenKind::Steklov] {
        let study = eig_gap_study(&cs, &Polygon::square(), kind, &[0.25, 0.125], 8, 3, 2, &opts).unwrap();
        assert!(study.rows.iter().all(|r| r.gap <= 1e-8), "{kind:?}");
        assert!(study.slopes.iter().all(|s| s.1.is_none()));
        for g in &study.inequalities {
            assert!(g.lhs <= 1e-8 && g.rhs <= 1e-8, "{g:?}");
        }
        for (_, g) in &study.dtn_gaps {
            assert!(*g <= 1e-8);
        }
    }
}

#[test]
fn gap_inequality_holds_and_right_side_shrinks() {
    let cs = CorrectorSet::build(&trig(), 16, 2).unwrap();
    let opts = EigenOptions::default();
    let g1 = gap_inequality_check(&cs, &Polygon::square(), EigenKind::Dirichlet, 0.125, 0.125 / 16.0, 1, 2, &opts).unwrap();
    let g2 = gap_inequality_check(&cs, &Polygon::square(), EigenKind::Dirichlet, 0.0625, 0.0625 / 16.0, 1, 2, &opts).unwrap();
    assert!(g1.holds && g2.holds, "{g1:?} {g2:?}");
    assert!(g2.rhs <= 0.7 * g1.rhs);
    assert!((g1.lhs - (1.0 / g1.lambda_eps - 1.0 / g1.lambda_0).abs()).abs() <= 1e-15);
}

#[test]
fn gaps_are_bounded_by_the_homogenized_value() {
    let cs = CorrectorSet::build(&trig(), 16, 2).unwrap();
    let study = eig_gap_study(&cs, &Polygon::square(), EigenKind::Neumann, &[0.25, 0.125], 16, 3, 2, &EigenOptions::default()).unwrap();
    for r in &study.rows {
        assert!(r.gap > 0.0 && r.gap <= r.lambda_0, "{r:?}");
        assert!(r.matched);
    }
}

#[test]
fn dtn_gap_scales_inversely_with_the_tensor() {
    let mesh = square(1.0 / 32.0);
    let build = |field: CoefficientField, c: f64| {
        let t = CorrectorSet::build(&field, 8, 2).unwrap().a_hat().unwrap().scale(c);
        let scaled = CoefficientField::new(1, field.entries().iter().map(|e| homocell::coeff::Expr::Bin(
            homocell::coeff::BinOp::Mul,
            Box::new(homocell::coeff::Expr::Num(c)),
            Box::new(e.clone()),
        )).collect());
        let de = DtnOperator::build(&Operator::Oscillatory { field: scaled, eps: 0.25 }, &mesh, 2).unwrap();
        let d0 = DtnOperator::build(&Operator::Homogenized(t), &mesh, 2).unwrap();
        dtn_gap_from(&de, &d0).unwrap()
    };
    let g1 = build(trig(), 1.0);
    let g4 = build(trig(), 4.0);
    assert!(g1 > 0.0 && rel(g4, g1 / 4.0) <= 1e-9, "{g1} {g4}");
}

#[test]
fn reports_are_reproducible() {
    let mesh = square(1.0 / 32.0);
    let op = Operator::Oscillatory { field: trig(), eps: 0.25 };
    let a = spectrum(EigenKind::Neumann, &op, &mesh, 3);
    let b = spectrum(EigenKind::Neumann, &op, &mesh, 3);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
