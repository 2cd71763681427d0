//! Report writers: RFC-4180 CSV, pretty JSON and SVG log-log plots.
//!
//! Every CSV has a fixed header, listed in the `*_HEADER` constants. Floats
//! are written in their shortest round-trip form, so identical inputs give
//! byte-identical files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::study::{quantities, RateReport, SCHEMA_VERSION};
use crate::coeff::DIM;
use crate::error::Error;
use crate::solver::DiscreteField;
use crate::spectra::GapStudy;
use crate::torus::CorrectorSet;

pub const RATE_HEADER: [&str; 10] = ["eps", "h", "r", "cell_n", "coefficient_hash", "build_id", "field", "norm", "a", "value"];
pub const SPECTRUM_HEADER: [&str; 5] = ["kind", "eps", "k", "lambda", "residual"];
pub const GAPS_HEADER: [&str; 10] =
    ["kind", "eps", "h", "k", "lambda_eps", "lambda_0", "gap", "overlap", "matched", "slope"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Csv, Format::Json, Format::Svg];
}

/// A JSON document with the schema version stamped at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(body: T) -> Self {
        Versioned { schema_version: SCHEMA_VERSION, body }
    }
}

/// Shortest round-trip decimal form, switching to exponent notation for very
/// small or large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e7).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serialize(e.to_string())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<PathBuf, Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}

fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(vec![]);
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serialize(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, Error> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, Error> {
    write_file(path, to_json(value)?.as_bytes())
}

/// Splits `field.norm(a=..)` into its parts.
fn split_quantity(name: &str) -> (&str, &str, Option<&str>) {
    let (field, rest) = name.split_once('.').unwrap_or(("", name));
    match rest.split_once("(a=") {
        Some((norm, a)) => (field, norm, Some(a.trim_end_matches(')'))),
        None => (field, rest, None),
    }
}

/// Long-format CSV: one line per (ladder point, field, norm).
pub fn rate_csv(report: &RateReport) -> Result<String, Error> {
    let cell_n = report.provenance.cell_n.to_string();
    let mut lines = Vec::new();
    for row in &report.rows {
        for (prefix, n) in [("u_diff", &row.diff), ("w", &row.w)] {
            for (name, value) in quantities(prefix, n) {
                let (field, norm, a) = split_quantity(&name);
                lines.push(vec![
                    fmt_f64(row.eps),
                    fmt_f64(row.h),
                    row.r.to_string(),
                    cell_n.clone(),
                    row.coefficient_hash.clone(),
                    row.build_id.clone(),
                    field.to_string(),
                    norm.to_string(),
                    a.unwrap_or("").to_string(),
                    fmt_f64(value),
                ]);
            }
        }
    }
    to_csv(&RATE_HEADER, lines)
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

/// One plotted series: points in (ε, e) and an optional fitted power law
/// given by (slope, intercept) in log space.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub line: Option<(f64, f64)>,
}

/// Log-log scatter of every series, with its fitted line when present.
pub fn loglog_svg(title: &str, xlabel: &str, series: &[Series]) -> String {
    let (w, h, left, right, top, bottom) = (720.0, 480.0, 70.0, 230.0, 40.0, 50.0);
    let pts: Vec<(f64, f64)> =
        series.iter().flat_map(|s| s.points.iter().copied()).filter(|p| p.0 > 0.0 && p.1 > 0.0).collect();
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!("<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"));
    svg.push_str(&format!("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n", w / 2.0, xml(title)));
    if pts.is_empty() {
        svg.push_str("<text x=\"40\" y=\"80\">no positive data</text>\n</svg>\n");
        return svg;
    }
    let lx = |v: f64| v.log10();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(lx(x));
        x1 = x1.max(lx(x));
        y0 = y0.min(lx(y));
        y1 = y1.max(lx(y));
    }
    let (x0, x1) = (x0.floor().min(x0 - 0.1), x1.ceil().max(x1 + 0.1));
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let pw = w - left - right;
    let ph = h - top - bottom;
    let px = |lv: f64| left + (lv - x0) / (x1 - x0) * pw;
    let py = |lv: f64| top + (y1 - lv) / (y1 - y0) * ph;
    svg.push_str(&format!(
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>\n"
    ));
    let mut d = x0.ceil() as i32;
    while d as f64 <= x1 {
        let x = px(d as f64);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#ddd\"/><text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">1e{d}</text>\n",
            top,
            top + ph,
            top + ph + 18.0
        ));
        d += 1;
    }
    for d in y0 as i32..=y1 as i32 {
        let y = py(d as f64);
        svg.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"#ddd\"/><text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">1e{d}</text>\n",
            left + pw,
            left - 6.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        left + pw / 2.0,
        h - 10.0,
        xml(xlabel)
    ));
    for (i, s) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let good: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.0 > 0.0 && p.1 > 0.0).collect();
        for &(x, y) in &good {
            svg.push_str(&format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"{c}\"/>\n", px(lx(x)), py(lx(y))));
        }
        if let (Some((slope, intercept)), Some(lo), Some(hi)) = (
            s.line,
            good.iter().map(|p| p.0).reduce(f64::min),
            good.iter().map(|p| p.0).reduce(f64::max),
        ) {
            let f = |x: f64| (slope * x.ln() + intercept).exp();
            svg.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{c}\" stroke-width=\"1.5\"/>\n",
                px(lx(lo)),
                py(lx(f(lo))),
                px(lx(hi)),
                py(lx(f(hi)))
            ));
        }
        let ly = top + 14.0 + 16.0 * i as f64;
        let label = match s.line {
            Some((slope, _)) => format!("{} (slope {slope:.3})", s.label),
            None => s.label.clone(),
        };
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{c}\"/><text x=\"{}\" y=\"{:.2}\">{}</text>\n",
            left + pw + 12.0,
            ly - 9.0,
            left + pw + 26.0,
            ly,
            xml(&label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn rate_svg(report: &RateReport) -> String {
    let series: Vec<Series> = report
        .fits
        .iter()
        .map(|f| Series {
            label: f.quantity.clone(),
            points: f.points.clone(),
            line: f.slope.map(|s| (s.slope, s.intercept)),
        })
        .collect();
    loglog_svg("error versus period", "eps", &series)
}

/// Writes `rates.{csv,json,svg}` for the requested formats.
pub fn emit(report: &RateReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>, Error> {
    let mut out = vec![];
    for f in formats {
        out.push(match f {
            Format::Csv => write_file(&dir.join("rates.csv"), rate_csv(report)?.as_bytes())?,
            Format::Json => write_json(&dir.join("rates.json"), report)?,
            Format::Svg => write_file(&dir.join("rates.svg"), rate_svg(report).as_bytes())?,
        });
    }
    Ok(out)
}

/// Row-major homogenized tensor with its index legend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDoc {
    pub m: usize,
    pub n: usize,
    pub q: usize,
    pub coefficient_hash: String,
    /// Meaning of the flat index.
    pub legend: String,
    pub a_hat: Vec<f64>,
    pub flux_identity_residual: Option<f64>,
}

fn cell_csv(cs: &CorrectorSet, names: &[String], fields: &[Vec<f64>]) -> Result<String, Error> {
    let mut header = vec!["node", "y1", "y2"];
    header.extend(names.iter().map(String::as_str));
    let n = cs.grid.n * cs.grid.n;
    to_csv(
        &header,
        (0..n).map(|node| {
            let y = cs.grid.node_coords(node);
            let mut r = vec![node.to_string(), fmt_f64(y[0]), fmt_f64(y[1])];
            r.extend(fields.iter().map(|f| fmt_f64(f[node])));
            r
        }),
    )
}

/// `A_hat.json`, `chi.csv`, `phi.csv`, `psi.csv` and `b.csv`. Column names
/// use 1-based indices: `chi_j1_a1_b2` is χ_1^{12}.
pub fn write_cell(cs: &CorrectorSet, dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let m = cs.m();
    let a = cs.a_hat()?;
    let doc = Versioned::new(TensorDoc {
        m,
        n: cs.grid.n,
        q: cs.q,
        coefficient_hash: cs.field.content_hash(),
        legend: format!("a_hat[((i*{DIM} + j)*{m} + alpha)*{m} + beta] = A_hat_ij^(alpha beta), 0-based"),
        a_hat: a.as_slice().to_vec(),
        flux_identity_residual: cs.flux_identity_residual().ok(),
    });
    let mut out = vec![write_json(&dir.join("A_hat.json"), &doc)?];
    let r = 0..m;
    let (mut chi, mut phi, mut psi, mut b) = (vec![], vec![], vec![], vec![]);
    for j in 0..DIM {
        for g in r.clone() {
            for be in r.clone() {
                chi.push((format!("chi_j{}_a{}_b{}", j + 1, g + 1, be + 1), cs.chi_index(j, g, be)));
            }
        }
    }
    for i in 0..DIM {
        for j in 0..DIM {
            for al in r.clone() {
                for be in r.clone() {
                    phi.push((format!("phi_{}{}_a{}_b{}", i + 1, j + 1, al + 1, be + 1), cs.phi_index(i, j, al, be)));
                    for k in 0..DIM {
                        psi.push((
                            format!("psi_{}{}{}_a{}_b{}", k + 1, i + 1, j + 1, al + 1, be + 1),
                            cs.psi_index(k, i, j, al, be),
                        ));
                        b.push((
                            format!("b_{}{}{}_a{}_g{}", i + 1, j + 1, k + 1, al + 1, be + 1),
                            cs.b_index(i, j, k, al, be),
                        ));
                    }
                }
            }
        }
    }
    for (file, cols, store) in
        [("chi.csv", chi, &cs.chi), ("phi.csv", phi, &cs.phi), ("psi.csv", psi, &cs.psi), ("b.csv", b, &cs.b)]
    {
        let names: Vec<String> = cols.iter().map(|c| c.0.clone()).collect();
        let fields: Vec<Vec<f64>> = cols.iter().map(|c| store[c.1].clone()).collect();
        out.push(write_file(&dir.join(file), cell_csv(cs, &names, &fields)?.as_bytes())?);
    }
    Ok(out)
}

/// `solution.csv` (node, x1, x2, u1..um) and `meta.json`.
pub fn write_solution<M: Serialize>(u: &DiscreteField, meta: &M, dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut header = vec!["node".to_string(), "x1".into(), "x2".into()];
    header.extend((1..=u.m).map(|a| format!("u{a}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let csv = to_csv(
        &header,
        u.mesh.nodes.iter().enumerate().map(|(i, x)| {
            let mut r = vec![i.to_string(), fmt_f64(x[0]), fmt_f64(x[1])];
            r.extend(u.values[i * u.m..(i + 1) * u.m].iter().map(|&v| fmt_f64(v)));
            r
        }),
    )?;
    Ok(vec![write_file(&dir.join("solution.csv"), csv.as_bytes())?, write_json(&dir.join("meta.json"), &Versioned::new(meta))?])
}

pub fn spectrum_csv(studies: &[GapStudy]) -> Result<String, Error> {
    let mut rows = vec![];
    for s in studies {
        for sp in &s.spectra {
            for (k, (l, r)) in sp.eigenvalues.iter().zip(&sp.residuals).enumerate() {
                rows.push(vec![sp.kind.name().to_string(), fmt_f64(sp.eps), (k + 1).to_string(), fmt_f64(*l), fmt_f64(*r)]);
            }
        }
    }
    to_csv(&SPECTRUM_HEADER, rows)
}

pub fn gaps_csv(studies: &[GapStudy]) -> Result<String, Error> {
    let mut rows = vec![];
    for s in studies {
        for g in &s.rows {
            let slope = s.slopes.iter().find(|(k, _)| *k == g.k).and_then(|p| p.1).map_or(String::new(), |f| fmt_f64(f.slope));
            rows.push(vec![
                g.kind.name().to_string(),
                fmt_f64(g.eps),
                fmt_f64(g.h),
                g.k.to_string(),
                fmt_f64(g.lambda_eps),
                fmt_f64(g.lambda_0),
                fmt_f64(g.gap),
                fmt_f64(g.overlap),
                g.matched.to_string(),
                slope,
            ]);
        }
    }
    to_csv(&GAPS_HEADER, rows)
}

/// `spectrum.csv`, `gaps.csv`, `gap_inequality.json` and a gap plot.
/// Homogenized spectra appear in `spectrum.csv` with eps = 0.
pub fn write_spectra<M: Serialize>(studies: &[GapStudy], summary: &M, dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let series: Vec<Series> = studies
        .iter()
        .flat_map(|s| {
            s.slopes.iter().map(move |(k, fit)| Series {
                label: format!("{} k={k}", s.kind.name()),
                points: s.rows.iter().filter(|r| r.k == *k).map(|r| (r.eps, r.gap)).collect(),
                line: fit.map(|f| (f.slope, f.intercept)),
            })
        })
        .collect();
    Ok(vec![
        write_file(&dir.join("spectrum.csv"), spectrum_csv(studies)?.as_bytes())?,
        write_file(&dir.join("gaps.csv"), gaps_csv(studies)?.as_bytes())?,
        write_json(&dir.join("gap_inequality.json"), &Versioned::new(summary))?,
        write_file(&dir.join("gaps.svg"), loglog_svg("eigenvalue gaps", "eps", &series).as_bytes())?,
    ])
}
