use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use homocell::coeff::{parse_expr_in, CoefficientField, Env, VarSet};
use homocell::domain::{Polygon, StructMesh};
use homocell::solver::{solve, BvpSpec, Operator};
use homocell::spectra::{eigs, EigenKind, EigenOptions};
use homocell::torus::CorrectorSet;
use homocell::twoscale::{build_expansion, norms};

const TRIG: &str = "2 + sin(2*pi*y1)*sin(2*pi*y2)";

fn field() -> CoefficientField {
    CoefficientField::isotropic_str(TRIG).unwrap()
}

fn expression_eval(c: &mut Criterion) {
    let e = parse_expr_in(TRIG, VarSet::Cell).unwrap();
    c.bench_function("expr_eval", |b| {
        let mut t = 0.0;
        b.iter(|| {
            t += 1e-3;
            black_box(e.eval(&Env::at([t, 0.5 * t])))
        })
    });
}

fn cell_problem(c: &mut Criterion) {
    let f = field();
    c.bench_function("cell_problem_n64", |b| b.iter(|| CorrectorSet::build(black_box(&f), 64, 2).unwrap()));
}

fn dirichlet_solve(c: &mut Criterion) {
    let mesh = Arc::new(StructMesh::build(&Polygon::square(), 1.0 / 128.0).unwrap());
    let spec = BvpSpec::dirichlet(
        Operator::Oscillatory { field: field(), eps: 0.125 },
        vec![parse_expr_in("1", VarSet::Spatial).unwrap()],
        vec![parse_expr_in("0", VarSet::Spatial).unwrap()],
    );
    c.bench_function("dirichlet_solve_h128", |b| b.iter(|| solve(black_box(&spec), &mesh, 2).unwrap()));
}

fn expansion_norms(c: &mut Criterion) {
    let eps = 0.125;
    let mesh = Arc::new(StructMesh::build(&Polygon::square(), eps / 16.0).unwrap());
    let cs = CorrectorSet::build(&field(), 16, 2).unwrap();
    let one = vec![parse_expr_in("1", VarSet::Spatial).unwrap()];
    let zero = vec![parse_expr_in("0", VarSet::Spatial).unwrap()];
    let ue = solve(&BvpSpec::dirichlet(Operator::Oscillatory { field: field(), eps }, one.clone(), zero.clone()), &mesh, 2).unwrap().0;
    let u0 = solve(&BvpSpec::dirichlet(Operator::Homogenized(cs.a_hat().unwrap().clone()), one, zero), &mesh, 2).unwrap().0;
    let w = build_expansion(&ue, &u0, &cs, eps).unwrap();
    c.bench_function("expansion_norms_h128", |b| b.iter(|| norms(black_box(&w.w), &[0.0, 0.5])));
}

fn eigen(c: &mut Criterion) {
    let mesh = StructMesh::build(&Polygon::square(), 1.0 / 64.0).unwrap();
    let op = Operator::Oscillatory { field: field(), eps: 0.125 };
    let mut g = c.benchmark_group("eigs_h64_k3");
    g.sample_size(10);
    for kind in [EigenKind::Dirichlet, EigenKind::Neumann, EigenKind::Steklov] {
        g.bench_function(kind.name(), |b| b.iter(|| eigs(kind, black_box(&op), &mesh, 2, 3, &EigenOptions::default()).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, expression_eval, cell_problem, dirichlet_solve, expansion_norms, eigen);
criterion_main!(benches);
