//! ε-ladder rate studies.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BcKind, StudyConfig};
use super::fit::{fit_log_model, fit_slope, LogFit, SlopeFit};
use crate::coeff::{BinOp, Expr, Tensor, Var, DIM};
use crate::domain::StructMesh;
use crate::error::Error;
use crate::solver::{solve, BvpSpec, DiscreteField, Normalization, Operator, SolveReport};
use crate::torus::CorrectorSet;
use crate::twoscale::{build_expansion, NormReport};

/// Version of every JSON document written by the harness.
pub const SCHEMA_VERSION: u32 = 1;

/// Exponents a of the ε|ln ε|^a models fitted to every quantity.
pub const LOG_EXPONENTS: [f64; 3] = [0.0, 0.5, 1.5];

/// Values at or below this are numerical noise and are not fitted.
pub const ERROR_FLOOR: f64 = 1e-8;

pub const DEGENERATE_NOTICE: &str = "degenerate: errors at floor";

/// Identifier of the build that produced a report.
pub fn build_id() -> &'static str {
    env!("HOMOCELL_BUILD_ID")
}

/// Provenance tuple attached to every report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub coefficient_hash: String,
    pub build_id: String,
    pub r: usize,
    pub cell_n: usize,
    pub q: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub eps: f64,
    pub h: f64,
    pub r: usize,
    pub coefficient_hash: String,
    pub build_id: String,
    /// Norms of u_ε − u_0.
    pub diff: NormReport,
    /// Norms of the expansion error w = u_ε − u_0 − εχ(x/ε)∇u_0.
    pub w: NormReport,
    pub solve: SolveReport,
}

/// Fits of one quantity across the ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormFit {
    /// `field.norm`, with `(a=..)` appended for weighted gradients.
    pub quantity: String,
    pub points: Vec<(f64, f64)>,
    pub slope: Option<SlopeFit>,
    pub log_models: Vec<LogFit>,
    pub notice: Option<String>,
}

impl NormFit {
    pub fn slope(&self) -> Option<f64> {
        self.slope.map(|s| s.slope)
    }

    pub fn log_model(&self, a: f64) -> Option<&LogFit> {
        self.log_models.iter().find(|l| l.a == a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub schema_version: u32,
    pub config: StudyConfig,
    pub provenance: Provenance,
    pub rows: Vec<RateRow>,
    pub fits: Vec<NormFit>,
}

impl RateReport {
    pub fn fit(&self, quantity: &str) -> Option<&NormFit> {
        self.fits.iter().find(|f| f.quantity == quantity)
    }

    pub fn slope(&self, quantity: &str) -> Option<f64> {
        self.fit(quantity).and_then(NormFit::slope)
    }
}

/// A study that stopped early: the error carries the failing stage, and the
/// rows that did complete are kept so they can still be written out.
#[derive(Debug)]
pub struct StudyFailure {
    pub error: Error,
    pub partial: RateReport,
}

impl std::fmt::Display for StudyFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for StudyFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Scalar quantities of a report, named `prefix.norm`.
pub fn quantities(prefix: &str, n: &NormReport) -> Vec<(String, f64)> {
    let mut out = vec![(format!("{prefix}.l2_volume"), n.l2_volume), (format!("{prefix}.l2_boundary"), n.l2_boundary)];
    for (a, v) in &n.weighted_h1 {
        out.push((format!("{prefix}.weighted_h1(a={a})"), *v));
    }
    out.push((format!("{prefix}.radial_max_l2"), n.radial_max_l2));
    out.push((format!("{prefix}.h1_norm"), n.h1_norm));
    out.push((format!("{prefix}.h_half_surrogate"), n.h_half_surrogate));
    out
}

/// Whether a quantity name passes the configured norm filter. Filter entries
/// match either the full name or the bare norm name.
fn selected(cfg: &StudyConfig, name: &str) -> bool {
    if cfg.norms.is_empty() {
        return true;
    }
    let bare = name.split_once('.').map_or(name, |p| p.1);
    let stem = bare.split('(').next().unwrap_or(bare);
    cfg.norms.iter().any(|n| n == name || n == bare || n == stem)
}

/// Fits ε ↦ e for one quantity, or explains why it was skipped.
pub fn fit_quantity(quantity: &str, points: Vec<(f64, f64)>) -> NormFit {
    let mut fit = NormFit { quantity: quantity.to_string(), points, slope: None, log_models: vec![], notice: None };
    if fit.points.iter().all(|p| p.1.abs() <= ERROR_FLOOR) {
        fit.notice = Some(DEGENERATE_NOTICE.to_string());
        return fit;
    }
    match fit_slope(&fit.points) {
        Ok(s) => fit.slope = Some(s),
        Err(e) => {
            fit.notice = Some(format!("not fitted: {e}"));
            return fit;
        }
    }
    fit.log_models = LOG_EXPONENTS.iter().filter_map(|&a| fit_log_model(&fit.points, a).ok()).collect();
    fit
}

fn node(e: Expr) -> Box<Expr> {
    Box::new(e)
}

fn mul(a: Expr, b: Expr) -> Expr {
    Expr::Bin(BinOp::Mul, node(a), node(b))
}

fn add(a: Expr, b: Expr) -> Expr {
    Expr::Bin(BinOp::Add, node(a), node(b))
}

/// Conormal trace n_i Â_ij ∂_j v of a field under a constant tensor, as
/// boundary expressions in x and n.
pub fn conormal_trace(v: &[Expr], a_hat: &Tensor) -> Vec<Expr> {
    let m = v.len();
    let normal = [Var::N1, Var::N2];
    (0..m)
        .map(|alpha| {
            let mut g = Expr::Num(0.0);
            for i in 0..DIM {
                for j in 0..DIM {
                    for (beta, vb) in v.iter().enumerate() {
                        let c = a_hat.get(i, j, alpha, beta);
                        if c != 0.0 {
                            let d = vb.derivative(j);
                            if !d.is_zero() {
                                g = add(g, mul(mul(Expr::Num(c), Expr::Var(normal[i])), d));
                            }
                        }
                    }
                }
            }
            g
        })
        .collect()
}

/// Shifts Neumann data by a constant per component so that the discrete
/// load of the problem on `mesh` has zero sum.
pub fn compatible_data(op: &Operator, source: &[Expr], g: &[Expr], mesh: &StructMesh, q: usize) -> Result<Vec<Expr>, Error> {
    let spec = BvpSpec::neumann(op.clone(), source.to_vec(), g.to_vec());
    let sys = crate::solver::assemble(&spec, mesh, q)?;
    let defect = crate::solver::compatibility_defect(&sys, op.m());
    let perimeter = mesh.perimeter();
    Ok(g.iter().zip(defect).map(|(ga, d)| add(ga.clone(), Expr::Num(-d / perimeter))).collect())
}

struct Problem {
    cs: CorrectorSet,
    a_hat: Tensor,
    source: Vec<Expr>,
    f: Vec<Expr>,
    g: Vec<Expr>,
    neumann_shift: bool,
}

impl Problem {
    fn spec(&self, cfg: &StudyConfig, op: Operator, mesh: &StructMesh) -> Result<BvpSpec, Error> {
        let spec = match cfg.bc {
            BcKind::Dirichlet => BvpSpec::dirichlet(op, self.source.clone(), self.f.clone()),
            BcKind::Neumann => {
                let g = if self.neumann_shift {
                    compatible_data(&op, &self.source, &self.g, mesh, cfg.q)?
                } else {
                    self.g.clone()
                };
                BvpSpec::neumann(op, self.source.clone(), g).with_normalization(match cfg.normalization {
                    Normalization::None => Normalization::MeanZeroVolume,
                    n => n,
                })
            }
        };
        Ok(spec.with_backend(cfg.backend))
    }
}

fn empty_report(cfg: &StudyConfig, hash: String) -> RateReport {
    RateReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        provenance: Provenance {
            coefficient_hash: hash,
            build_id: build_id().to_string(),
            r: cfg.r,
            cell_n: cfg.cell_n(),
            q: cfg.q,
            seed: cfg.seed,
        },
        rows: vec![],
        fits: vec![],
    }
}

fn ladder_point(cfg: &StudyConfig, p: &Problem, fine: &(DiscreteField, SolveReport), eps: f64) -> Result<RateRow, Error> {
    let (u0_fine, fine_report) = fine;
    let poly = cfg.polygon()?;
    let h = eps / cfg.r as f64;
    let stage = |s: &str| format!("{s} at eps={eps}");
    let mesh = Arc::new(StructMesh::build(&poly, h).map_err(|e| Error::from(e).in_stage(stage("mesh")))?);
    let op = Operator::Oscillatory { field: p.cs.field.clone(), eps };
    let spec = p.spec(cfg, op, &mesh).map_err(|e| e.in_stage(stage("data")))?;
    let mut u0 = u0_fine.restrict(mesh.clone()).map_err(|e| Error::from(e).in_stage(stage("restriction")))?;
    if cfg.bc == BcKind::Neumann {
        u0.normalize(spec.normalization);
    }
    // A constant coefficient makes the oscillatory problem independent of ε and
    // identical to the homogenized one, so the finest-mesh solve serves for both.
    let (u_eps, report) = if p.cs.field.as_constant().is_some() {
        (u0.clone(), *fine_report)
    } else {
        solve(&spec, &mesh, cfg.q).map_err(|e| Error::from(e).in_stage(stage("oscillatory solve")))?
    };
    let diff = u_eps.sub(&u0).map_err(|e| Error::from(e).in_stage(stage("difference")))?;
    let w = build_expansion(&u_eps, &u0, &p.cs, eps).map_err(|e| Error::from(e).in_stage(stage("expansion")))?;
    let nd = crate::twoscale::norms(&diff, &cfg.weights);
    let nw = w.norms(&cfg.weights);
    Ok(RateRow {
        eps,
        h,
        r: cfg.r,
        coefficient_hash: w.coefficient_hash,
        build_id: build_id().to_string(),
        diff: nd,
        w: nw,
        solve: report,
    })
}

/// Fits every selected quantity over the rows of a report.
pub fn fit_rows(cfg: &StudyConfig, rows: &[RateRow]) -> Vec<NormFit> {
    let Some(first) = rows.first() else { return vec![] };
    let names: Vec<String> = quantities("u_diff", &first.diff)
        .into_iter()
        .chain(quantities("w", &first.w))
        .map(|(n, _)| n)
        .filter(|n| selected(cfg, n))
        .collect();
    names
        .into_iter()
        .map(|name| {
            let points = rows
                .iter()
                .map(|r| {
                    let (prefix, report) = if name.starts_with("w.") { ("w", &r.w) } else { ("u_diff", &r.diff) };
                    let v = quantities(prefix, report).into_iter().find(|(n, _)| *n == name).map_or(f64::NAN, |p| p.1);
                    (r.eps, v)
                })
                .collect();
            fit_quantity(&name, points)
        })
        .collect()
}

/// Solves the oscillatory problem at every ladder ε on h = ε/r, compares it
/// with the homogenized solution (computed once on the finest mesh and
/// restricted), and fits every selected error quantity.
pub fn run_rate_study(cfg: &StudyConfig) -> Result<RateReport, StudyFailure> {
    let fail = |error: Error, partial: RateReport| StudyFailure { error, partial };
    let field = match cfg.validate().and_then(|_| cfg.field()) {
        Ok(f) => f,
        Err(e) => return Err(fail(e.into(), empty_report(cfg, String::new()))),
    };
    let mut report = empty_report(cfg, field.content_hash());
    let setup = || -> Result<(Problem, (DiscreteField, SolveReport)), Error> {
        let cs = CorrectorSet::build(&field, cfg.cell_n(), cfg.q).map_err(|e| Error::from(e).in_stage("cell problems"))?;
        let a_hat = cs.a_hat().map_err(|e| Error::from(e).in_stage("cell problems"))?.clone();
        let source = cfg.source_exprs()?;
        let f = cfg.f_exprs()?;
        let (g, neumann_shift) = match (cfg.bc, cfg.g_from_exprs()?) {
            (BcKind::Neumann, Some(v)) => (conormal_trace(&v, &a_hat), true),
            (BcKind::Neumann, None) => (cfg.g_exprs()?, false),
            (BcKind::Dirichlet, _) => (vec![], false),
        };
        let p = Problem { cs, a_hat, source, f, g, neumann_shift };
        let finest = *cfg.eps_ladder.last().expect("validated ladder");
        let mesh = Arc::new(StructMesh::build(&cfg.polygon()?, finest / cfg.r as f64)?);
        let spec = p.spec(cfg, Operator::Homogenized(p.a_hat.clone()), &mesh)?;
        let fine = solve(&spec, &mesh, cfg.q).map_err(|e| Error::from(e).in_stage("homogenized solve"))?;
        Ok((p, fine))
    };
    let (problem, u0) = match setup() {
        Ok(v) => v,
        Err(e) => return Err(fail(e, report)),
    };
    let results: Vec<Result<RateRow, Error>> =
        cfg.eps_ladder.par_iter().map(|&eps| ladder_point(cfg, &problem, &u0, eps)).collect();
    let mut first_error = None;
    for r in results {
        match r {
            Ok(row) => report.rows.push(row),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(fail(e, report));
    }
    report.fits = fit_rows(cfg, &report.rows);
    Ok(report)
}

/// Checks the configured slope windows; returns one message per violation.
pub fn check_assertions(cfg: &StudyConfig, report: &RateReport) -> Vec<String> {
    cfg.assert
        .iter()
        .filter_map(|a| match report.slope(&a.quantity) {
            Some(s) if s >= a.min && s <= a.max => None,
            Some(s) => Some(format!("slope of {} is {s:.4}, outside [{}, {}]", a.quantity, a.min, a.max)),
            None => Some(format!("no slope available for {}", a.quantity)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::parse_expr_in;
    use crate::coeff::VarSet;

    #[test]
    fn conormal_trace_of_saddle() {
        let v = vec![parse_expr_in("x1*x1 - x2*x2", VarSet::Spatial).unwrap()];
        let g = conormal_trace(&v, &Tensor::scaled_identity(1, 3.0));
        let env = crate::coeff::Env { x: [0.5, 0.25], normal: [0.6, 0.8] };
        assert!((g[0].eval(&env) - 3.0 * (0.6 * 1.0 - 0.8 * 0.5)).abs() <= 1e-14);
    }

    #[test]
    fn filter_matches_bare_and_stem_names() {
        let cfg = StudyConfig { norms: vec!["l2_volume".into(), "weighted_h1".into()], ..Default::default() };
        assert!(selected(&cfg, "w.l2_volume"));
        assert!(selected(&cfg, "u_diff.weighted_h1(a=0.5)"));
        assert!(!selected(&cfg, "w.h1_norm"));
    }

    #[test]
    fn floor_values_are_not_fitted() {
        let f = fit_quantity("x", vec![(0.5, 1e-12), (0.25, 0.0), (0.125, 3e-13)]);
        assert_eq!(f.notice.as_deref(), Some(DEGENERATE_NOTICE));
        assert!(f.slope.is_none());
    }
}
