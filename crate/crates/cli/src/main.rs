//! `homocell`: command-line front end for cell problems, boundary value
//! problems, expansion norms, rate studies, eigenvalue gaps and identity checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use homocell::coeff::{parse_expr_in, validate, CoefficientField, Expr, VarSet};
use homocell::domain::{Polygon, StructMesh};
use homocell::harness::emit::{self, Format, Versioned};
use homocell::harness::{self, BcKind, StudyConfig};
use homocell::linalg::Backend;
use homocell::solver::{solve, BvpSpec, Operator};
use homocell::spectra::{eig_gap_study, EigenKind, EigenOptions, GapStudy};
use homocell::torus::CorrectorSet;
use homocell::twoscale::{build_expansion, conormal_identity_check, norms, residual_identity_check, Manufactured};
use homocell::Error;

/// Prints a line to stdout, ignoring write errors such as a closed pipe.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "homocell", version, about = "Periodic homogenization laboratory")]
struct Cli {
    /// Study configuration (TOML); command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for ladder points and assembly.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every randomized start vector.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Check the command's acceptance conditions and exit with status 4 on failure.
    #[arg(long, global = true)]
    assert: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cell problems and write Â, χ, Φ, Ψ and b.
    Cell(CellArgs),
    /// Solve one oscillatory or homogenized boundary value problem.
    Solve(SolveArgs),
    /// Norms of u_ε − u_0 and of the expansion error at one ε.
    Expand(ExpandArgs),
    /// ε-ladder convergence-rate study.
    Rates(RatesArgs),
    /// Eigenvalue gap study over an ε ladder.
    Eig(EigArgs),
    /// Weak-residual and conormal identity checks for a manufactured field.
    Identity(IdentityArgs),
}

#[derive(Args, Clone)]
struct CoeffArgs {
    /// Coefficient file (TOML).
    #[arg(long)]
    coeff: Option<PathBuf>,
    /// Scalar isotropic coefficient a(y1, y2).
    #[arg(long)]
    coeff_expr: Option<String>,
    /// Sub-cells per element edge in the quadrature.
    #[arg(long)]
    q: Option<usize>,
}

#[derive(Args)]
struct CellArgs {
    #[command(flatten)]
    coeff: CoeffArgs,
    /// Cell grid resolution.
    #[arg(long, default_value_t = 64)]
    n: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bc {
    Dirichlet,
    Neumann,
}

#[derive(Args, Clone)]
struct BvpArgs {
    #[command(flatten)]
    coeff: CoeffArgs,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    domain: Option<String>,
    /// Mesh width; defaults to ε/r.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, value_enum)]
    bc: Option<Bc>,
    /// Dirichlet data, one flag per component.
    #[arg(long)]
    f: Vec<String>,
    /// Neumann data (may use n1, n2), one flag per component.
    #[arg(long)]
    g: Vec<String>,
    /// Volume source, one flag per component.
    #[arg(long = "F")]
    source: Vec<String>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Cholesky,
    Pcg,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    bvp: BvpArgs,
    /// Solve the homogenized problem instead of the oscillatory one.
    #[arg(long)]
    homogenized: bool,
    /// Cell grid used for Â when --homogenized is given.
    #[arg(long, default_value_t = 64)]
    cell_n: usize,
}

#[derive(Args)]
struct ExpandArgs {
    #[command(flatten)]
    bvp: BvpArgs,
    /// Weight exponents, e.g. `a=0,a=2`.
    #[arg(long, default_value = "a=0,a=0.5")]
    norms: String,
    /// Cell grid; defaults to ε/h so cell and mesh nodes coincide.
    #[arg(long)]
    cell_n: Option<usize>,
}

#[derive(Args)]
struct RatesArgs {
    #[arg(long)]
    domain: Option<String>,
    #[arg(long, value_enum)]
    bc: Option<Bc>,
    /// Comma-separated ladder, e.g. `1/8,1/16,1/32`.
    #[arg(long)]
    eps_ladder: Option<String>,
    #[arg(long)]
    r: Option<usize>,
    /// Output formats.
    #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
    formats: Vec<String>,
}

#[derive(Args)]
struct EigArgs {
    #[command(flatten)]
    coeff: CoeffArgs,
    /// Comma-separated list of dirichlet, neumann, steklov.
    #[arg(long, value_delimiter = ',', default_value = "dirichlet")]
    kind: Vec<String>,
    #[arg(long)]
    domain: Option<String>,
    #[arg(long, default_value = "1/8,1/16,1/32")]
    eps_ladder: String,
    /// Number of eigenvalues.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Mesh-to-period ratio, h = ε/r.
    #[arg(long)]
    r: Option<usize>,
}

#[derive(Args)]
struct IdentityArgs {
    #[command(flatten)]
    coeff: CoeffArgs,
    #[arg(long, default_value_t = 0.125)]
    eps: f64,
    #[arg(long, default_value_t = 1.0 / 256.0)]
    h: f64,
    #[arg(long)]
    domain: Option<String>,
    /// Manufactured field, one flag per component.
    #[arg(long, default_value = "x1*x1*x2")]
    v: Vec<String>,
    /// Number of mesh levels (h, h/2, ...).
    #[arg(long, default_value_t = 2)]
    levels: usize,
}

enum CliError {
    Config(String),
    Numerical(String),
    Assert(Vec<String>),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn lift<T, E: Into<Error>>(r: Result<T, E>) -> CliResult<T> {
    r.map_err(|e| CliError::from(e.into()))
}

/// Grid size per axis for the ellipticity and symmetry check of a coefficient.
const VALIDATION_SAMPLES: usize = 64;

struct Ctx {
    cfg: StudyConfig,
    seed: Option<u64>,
    out: PathBuf,
    assert: bool,
}

impl Ctx {
    fn field(&self, c: &CoeffArgs) -> CliResult<CoefficientField> {
        let field = match (&c.coeff, &c.coeff_expr) {
            (Some(p), _) => lift(CoefficientField::from_file(p))?,
            (None, Some(e)) => lift(CoefficientField::isotropic_str(e))?,
            (None, None) => lift(self.cfg.field())?,
        };
        lift(validate(&field, VALIDATION_SAMPLES))?;
        Ok(field)
    }

    fn q(&self, c: &CoeffArgs) -> usize {
        c.q.unwrap_or(self.cfg.q)
    }

    fn polygon(&self, name: &Option<String>) -> CliResult<Polygon> {
        lift(Polygon::by_name(name.as_deref().unwrap_or(&self.cfg.domain)))
    }

    fn eigen_options(&self) -> EigenOptions {
        let mut o = EigenOptions::default();
        if let Some(s) = self.seed {
            o.seed = s;
        }
        o
    }
}

fn parse_eps(s: &str) -> CliResult<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| config_err(format!("bad ε value {s:?}")))?;
            let b: f64 = b.trim().parse().map_err(|_| config_err(format!("bad ε value {s:?}")))?;
            a / b
        }
        None => s.parse().map_err(|_| config_err(format!("bad ε value {s:?}")))?,
    };
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(config_err(format!("ε must be positive, got {s:?}")))
    }
}

fn parse_ladder(s: &str) -> CliResult<Vec<f64>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(parse_eps).collect()
}

fn parse_weights(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let v = p.trim().trim_start_matches("a=");
            v.parse::<f64>().ok().filter(|a| *a >= 0.0).ok_or_else(|| config_err(format!("bad weight exponent {p:?}")))
        })
        .collect()
}

fn exprs(src: &[String], vars: VarSet, what: &str) -> CliResult<Vec<Expr>> {
    src.iter()
        .map(|s| parse_expr_in(s, vars).map_err(|e| config_err(format!("{what} {s:?}: {e}"))))
        .collect()
}

fn or_config(v: &[String], fallback: &[String]) -> Vec<String> {
    if v.is_empty() {
        fallback.to_vec()
    } else {
        v.to_vec()
    }
}

fn backend(b: Option<BackendArg>, cfg: &StudyConfig) -> Backend {
    match b {
        Some(BackendArg::Cholesky) => Backend::Cholesky,
        Some(BackendArg::Pcg) => Backend::Pcg,
        None => cfg.backend,
    }
}

fn bc_kind(b: Option<Bc>, cfg: &StudyConfig) -> BcKind {
    match b {
        Some(Bc::Dirichlet) => BcKind::Dirichlet,
        Some(Bc::Neumann) => BcKind::Neumann,
        None => cfg.bc,
    }
}

/// The boundary value problem described by the flags, with the config as fallback.
fn bvp_spec(ctx: &Ctx, a: &BvpArgs, op: Operator) -> CliResult<BvpSpec> {
    let m = op.m();
    let source = exprs(&or_config(&a.source, &ctx.cfg.source), VarSet::Spatial, "source")?;
    let spec = match bc_kind(a.bc, &ctx.cfg) {
        BcKind::Dirichlet => BvpSpec::dirichlet(op, source, exprs(&or_config(&a.f, &ctx.cfg.f), VarSet::Spatial, "f")?),
        BcKind::Neumann => {
            let g = exprs(&or_config(&a.g, &ctx.cfg.g), VarSet::Boundary, "g")?;
            BvpSpec::neumann(op, source, g).with_normalization(ctx.cfg.normalization)
        }
    };
    if spec.source.len() != m {
        return Err(config_err(format!("{} source expressions for m = {m}", spec.source.len())));
    }
    Ok(spec.with_backend(backend(a.backend, &ctx.cfg)))
}

fn mesh_width(ctx: &Ctx, a: &BvpArgs) -> f64 {
    a.h.unwrap_or(a.eps / ctx.cfg.r as f64)
}

fn cmd_cell(ctx: &Ctx, a: &CellArgs) -> CliResult<()> {
    let field = ctx.field(&a.coeff)?;
    let cs = lift(CorrectorSet::build(&field, a.n, ctx.q(&a.coeff)))?;
    let files = lift(emit::write_cell(&cs, &ctx.out))?;
    let t = lift(cs.a_hat())?;
    say!("A_hat = {:?}", t.as_slice());
    report_files(&files);
    Ok(())
}

fn cmd_solve(ctx: &Ctx, a: &SolveArgs) -> CliResult<()> {
    let field = ctx.field(&a.bvp.coeff)?;
    let q = ctx.q(&a.bvp.coeff);
    let op = if a.homogenized {
        let cs = lift(CorrectorSet::build(&field, a.cell_n, q))?;
        Operator::Homogenized(lift(cs.a_hat())?.clone())
    } else {
        Operator::Oscillatory { field: field.clone(), eps: a.bvp.eps }
    };
    let spec = bvp_spec(ctx, &a.bvp, op)?;
    let h = mesh_width(ctx, &a.bvp);
    let mesh = Arc::new(lift(StructMesh::build(&ctx.polygon(&a.bvp.domain)?, h))?);
    let (u, rep) = lift(solve(&spec, &mesh, q))?;
    let meta = json!({
        "eps": a.bvp.eps,
        "h": h,
        "operator": if a.homogenized { "homogenized" } else { "oscillatory" },
        "coefficient_hash": field.content_hash(),
        "build_id": harness::build_id(),
        "residual": rep.residual,
        "iterations": rep.iterations,
        "energy": rep.energy,
        "backend": rep.backend,
    });
    let files = lift(emit::write_solution(&u, &meta, &ctx.out))?;
    say!("residual {:e}, iterations {}, energy {}", rep.residual, rep.iterations, rep.energy);
    report_files(&files);
    Ok(())
}

fn cmd_expand(ctx: &Ctx, a: &ExpandArgs) -> CliResult<()> {
    let field = ctx.field(&a.bvp.coeff)?;
    let q = ctx.q(&a.bvp.coeff);
    let eps = a.bvp.eps;
    let h = mesh_width(ctx, &a.bvp);
    let weights = parse_weights(&a.norms)?;
    let cell_n = a.cell_n.unwrap_or_else(|| ((eps / h).round() as usize).max(8));
    let cs = lift(CorrectorSet::build(&field, cell_n, q))?;
    let a_hat = lift(cs.a_hat())?.clone();
    let mesh = Arc::new(lift(StructMesh::build(&ctx.polygon(&a.bvp.domain)?, h))?);
    let spec_e = bvp_spec(ctx, &a.bvp, Operator::Oscillatory { field: field.clone(), eps })?;
    let spec_0 = bvp_spec(ctx, &a.bvp, Operator::Homogenized(a_hat))?;
    let (ue, _) = lift(solve(&spec_e, &mesh, q))?;
    let (u0, _) = lift(solve(&spec_0, &mesh, q))?;
    let diff = lift(ue.sub(&u0))?;
    let w = lift(build_expansion(&ue, &u0, &cs, eps))?;
    let doc = Versioned::new(json!({
        "eps": eps,
        "h": h,
        "r": eps / h,
        "cell_n": cell_n,
        "coefficient_hash": w.coefficient_hash,
        "build_id": harness::build_id(),
        "u_diff": norms(&diff, &weights),
        "w": w.norms(&weights),
    }));
    let path = lift(emit::write_json(&ctx.out.join("norms.json"), &doc))?;
    report_files(&[path]);
    Ok(())
}

fn cmd_rates(ctx: &Ctx, a: &RatesArgs) -> CliResult<()> {
    let mut cfg = ctx.cfg.clone();
    if let Some(d) = &a.domain {
        cfg.domain = d.clone();
    }
    if a.bc.is_some() {
        cfg.bc = bc_kind(a.bc, &cfg);
    }
    if let Some(l) = &a.eps_ladder {
        cfg.eps_ladder = parse_ladder(l)?;
    }
    if let Some(r) = a.r {
        cfg.r = r;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let formats: Vec<Format> = a
        .formats
        .iter()
        .map(|f| match f.trim() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(config_err(format!("unknown format {other:?}"))),
        })
        .collect::<CliResult<_>>()?;
    let report = match harness::run_rate_study(&cfg) {
        Ok(r) => r,
        Err(failure) => {
            // Whatever completed is still written before reporting the error.
            if !failure.partial.rows.is_empty() {
                let _ = emit::emit(&failure.partial, &ctx.out, &[Format::Csv]);
            }
            return Err(failure.error.into());
        }
    };
    let files = lift(emit::emit(&report, &ctx.out, &formats))?;
    for f in &report.fits {
        match (&f.slope, &f.notice) {
            (Some(s), _) => say!("{:32} slope {:.4}  (R² {:.4})", f.quantity, s.slope, s.r2),
            (None, Some(n)) => say!("{:32} {n}", f.quantity),
            (None, None) => {}
        }
    }
    report_files(&files);
    if ctx.assert {
        let failures = harness::check_assertions(&cfg, &report);
        if !failures.is_empty() {
            return Err(CliError::Assert(failures));
        }
    }
    Ok(())
}

fn cmd_eig(ctx: &Ctx, a: &EigArgs) -> CliResult<()> {
    let kinds: Vec<EigenKind> = a.kind.iter().map(|k| k.trim().parse().map_err(config_err)).collect::<CliResult<_>>()?;
    let ladder = parse_ladder(&a.eps_ladder)?;
    let r = a.r.unwrap_or(ctx.cfg.r);
    if r < 8 {
        return Err(config_err(format!("r = {r} is below the minimum 8")));
    }
    let field = ctx.field(&a.coeff)?;
    let q = ctx.q(&a.coeff);
    let poly = ctx.polygon(&a.domain)?;
    let cs = lift(CorrectorSet::build(&field, r, q))?;
    let opts = ctx.eigen_options();
    let studies: Vec<GapStudy> = kinds
        .par_iter()
        .map(|&kind| lift(eig_gap_study(&cs, &poly, kind, &ladder, r, a.k, q, &opts)))
        .collect::<CliResult<_>>()?;
    let summary: Vec<_> = studies
        .iter()
        .map(|s| {
            json!({
                "kind": s.kind,
                "r": s.r,
                "coefficient_hash": field.content_hash(),
                "build_id": harness::build_id(),
                "slopes": s.slopes,
                "cluster_slopes": s.cluster_slopes,
                "inequalities": s.inequalities,
                "dtn_gaps": s.dtn_gaps,
            })
        })
        .collect();
    let files = lift(emit::write_spectra(&studies, &json!({ "studies": summary }), &ctx.out))?;
    let mut failures = vec![];
    for s in &studies {
        for (k, fit) in &s.slopes {
            match fit {
                Some(f) => {
                    say!("{} k={k}: slope {:.4}", s.kind.name(), f.slope);
                    if !(0.8..=1.3).contains(&f.slope) {
                        failures.push(format!("{} k={k}: slope {:.4} outside [0.8, 1.3]", s.kind.name(), f.slope));
                    }
                }
                None => say!("{} k={k}: gaps at floor, not fitted", s.kind.name()),
            }
        }
        for g in &s.inequalities {
            say!("{} eps={}: gap inequality {:.3e} <= {:.3e}: {}", s.kind.name(), g.eps, g.lhs, g.rhs, g.holds);
            if !g.holds {
                failures.push(format!("{} eps={}: gap inequality fails", s.kind.name(), g.eps));
            }
        }
        for (eps, gap) in &s.dtn_gaps {
            say!("{} eps={eps}: DtN gap {gap:.4e}", s.kind.name());
        }
        if s.dtn_gaps.windows(2).any(|w| w[1].1 >= w[0].1) {
            failures.push(format!("{}: DtN gap not strictly decreasing", s.kind.name()));
        }
    }
    report_files(&files);
    if ctx.assert && !failures.is_empty() {
        return Err(CliError::Assert(failures));
    }
    Ok(())
}

fn cmd_identity(ctx: &Ctx, a: &IdentityArgs) -> CliResult<()> {
    let field = ctx.field(&a.coeff)?;
    let q = ctx.q(&a.coeff);
    let poly = ctx.polygon(&a.domain)?;
    let v = Manufactured::new(exprs(&a.v, VarSet::Spatial, "v")?);
    if a.levels == 0 {
        return Err(config_err("at least one mesh level is needed"));
    }
    let mut levels = vec![];
    for l in 0..a.levels {
        let h = a.h / f64::from(1u32 << l);
        let cell_n = (a.eps / h).round() as usize;
        let cs = lift(CorrectorSet::build(&field, cell_n.max(8), q))?;
        let mesh = Arc::new(lift(StructMesh::build(&poly, h))?);
        let (res, u) = lift(residual_identity_check(&v, &cs, a.eps, &mesh, q))?;
        let con = lift(conormal_identity_check(&v, Some(&u), &cs, a.eps, &mesh))?;
        say!("h={h}: residual {:.4e} relative, conormal {:.4e} relative", res.relative, con.relative);
        levels.push(json!({ "h": h, "cell_n": cell_n, "residual": res, "conormal": con }));
    }
    let rel = |i: usize, key: &str| levels[i][key]["relative"].as_f64().unwrap_or(f64::NAN);
    let mut failures = vec![];
    for key in ["residual", "conormal"] {
        if rel(0, key) > 0.1 {
            failures.push(format!("{key} discrepancy {:.4} exceeds 10%", rel(0, key)));
        }
        for i in 1..levels.len() {
            if rel(i, key) > 0.7 * rel(i - 1, key) {
                failures.push(format!("{key} discrepancy does not halve at level {i}"));
            }
        }
    }
    let doc = Versioned::new(json!({
        "eps": a.eps,
        "v": a.v,
        "coefficient_hash": field.content_hash(),
        "build_id": harness::build_id(),
        "levels": levels,
    }));
    let path = lift(emit::write_json(&ctx.out.join("identity.json"), &doc))?;
    report_files(&[path]);
    if ctx.assert && !failures.is_empty() {
        return Err(CliError::Assert(failures));
    }
    Ok(())
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        say!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_err(format!("cannot start {n} threads: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(p) => lift(StudyConfig::from_file(p))?,
        None => StudyConfig::default(),
    };
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| Path::new("homocell-out").to_path_buf());
    let ctx = Ctx { cfg, seed: cli.seed, out, assert: cli.assert };
    match &cli.command {
        Command::Cell(a) => cmd_cell(&ctx, a),
        Command::Solve(a) => cmd_solve(&ctx, a),
        Command::Expand(a) => cmd_expand(&ctx, a),
        Command::Rates(a) => cmd_rates(&ctx, a),
        Command::Eig(a) => cmd_eig(&ctx, a),
        Command::Identity(a) => cmd_identity(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
        Err(CliError::Assert(fails)) => {
            for f in fails {
                eprintln!("assertion failed: {f}");
            }
            ExitCode::from(4)
        }
    }
}
