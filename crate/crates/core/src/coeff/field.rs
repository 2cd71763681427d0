use std::path::Path;

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::expr::{parse_expr, Env, Expr, ExprError, Var};

/// Spatial dimension. Index arithmetic below keeps it symbolic.
pub const DIM: usize = 2;

#[derive(Debug, Error)]
pub enum CoeffError {
    #[error("entry a.{i}.{j}.{alpha}.{beta}: {source}")]
    Parse {
        i: usize,
        j: usize,
        alpha: usize,
        beta: usize,
        #[source]
        source: ExprError,
    },
    #[error("coefficient file: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite coefficient value at y = ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("ellipticity violated: smallest sampled eigenvalue {mu_low:e}")]
    Ellipticity { mu_low: f64 },
    #[error("symmetry requested but a_ij^ab != a_ji^ba (max deviation {deviation:e})")]
    Symmetry { deviation: f64 },
    #[error("denominator {denominator} changes sign or vanishes on the sample grid")]
    DenominatorSign { denominator: String },
    #[error("validation grid too coarse: {0} < 16")]
    TooFewSamples(usize),
}

/// A dm x dm tensor with entries a_ij^{alpha beta}, stored row-major with row
/// index `i*m + alpha` and column index `j*m + beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    m: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(m: usize) -> Self {
        let n = DIM * m;
        Tensor { m, data: vec![0.0; n * n] }
    }

    pub fn scaled_identity(m: usize, c: f64) -> Self {
        let mut t = Tensor::zeros(m);
        for p in 0..DIM * m {
            t.data[p * DIM * m + p] = c;
        }
        t
    }

    pub fn from_flat(m: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), (DIM * m) * (DIM * m));
        Tensor { m, data }
    }

    #[inline]
    pub fn index(m: usize, i: usize, j: usize, alpha: usize, beta: usize) -> usize {
        (i * m + alpha) * (DIM * m) + (j * m + beta)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, alpha: usize, beta: usize) -> f64 {
        self.data[Self::index(self.m, i, j, alpha, beta)]
    }

    pub fn set(&mut self, i: usize, j: usize, alpha: usize, beta: usize, v: f64) {
        let k = Self::index(self.m, i, j, alpha, beta);
        self.data[k] = v;
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Side length dm of the matrix representation.
    pub fn dim(&self) -> usize {
        DIM * self.m
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scale(&self, c: f64) -> Tensor {
        Tensor { m: self.m, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// max |A - A^T| over matrix entries.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut dev: f64 = 0.0;
        for p in 0..n {
            for q in 0..p {
                dev = dev.max((self.data[p * n + q] - self.data[q * n + p]).abs());
            }
        }
        dev
    }

    /// Extreme eigenvalues of the symmetric part, i.e. the sharp constants in
    /// `low |xi|^2 <= a_ij^ab xi_i^a xi_j^b <= high |xi|^2`.
    pub fn ellipticity_bounds(&self) -> (f64, f64) {
        let n = self.dim();
        let sym = Mat::<f64>::from_fn(n, n, |p, q| 0.5 * (self.data[p * n + q] + self.data[q * n + p]));
        let eig = sym
            .self_adjoint_eigenvalues(Side::Lower)
            .expect("eigenvalues of a small symmetric matrix");
        (eig[0], eig[n - 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Holder {
    pub lambda: f64,
    pub tau: Option<f64>,
}

impl Default for Holder {
    fn default() -> Self {
        Holder { lambda: 0.5, tau: None }
    }
}

/// A Z^2-periodic coefficient tensor A(y) given entrywise by expressions.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    m: usize,
    entries: Vec<Expr>,
    pub mu: Option<f64>,
    pub holder: Holder,
    pub symmetric: bool,
    pub name: Option<String>,
}

impl CoefficientField {
    /// `entries` is indexed like [`Tensor`] storage.
    pub fn new(m: usize, entries: Vec<Expr>) -> Self {
        assert!(m >= 1);
        assert_eq!(entries.len(), (DIM * m) * (DIM * m));
        CoefficientField { m, entries, mu: None, holder: Holder::default(), symmetric: true, name: None }
    }

    /// Scalar (m = 1) isotropic field a(y) I.
    pub fn isotropic(a: Expr) -> Self {
        let zero = Expr::Num(0.0);
        CoefficientField::new(1, vec![a.clone(), zero.clone(), zero, a])
    }

    pub fn isotropic_str(src: &str) -> Result<Self, CoeffError> {
        let e = parse_expr(src).map_err(|source| CoeffError::Parse { i: 1, j: 1, alpha: 1, beta: 1, source })?;
        Ok(Self::isotropic(e))
    }

    pub fn constant(t: &Tensor) -> Self {
        CoefficientField::new(t.m, t.data.iter().map(|&v| Expr::Num(v)).collect())
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn entry(&self, i: usize, j: usize, alpha: usize, beta: usize) -> &Expr {
        &self.entries[Tensor::index(self.m, i, j, alpha, beta)]
    }

    pub fn entries(&self) -> &[Expr] {
        &self.entries
    }

    /// Constant tensor if every entry is a literal.
    pub fn as_constant(&self) -> Option<Tensor> {
        let data: Option<Vec<f64>> = self.entries.iter().map(Expr::as_constant).collect();
        data.map(|d| Tensor::from_flat(self.m, d))
    }

    /// Evaluates A at the periodic representative of `y` into `out`.
    #[inline]
    pub fn eval_into(&self, y: [f64; 2], out: &mut [f64]) {
        let env = Env::at([y[0] - y[0].floor(), y[1] - y[1].floor()]);
        for (o, e) in out.iter_mut().zip(&self.entries) {
            *o = e.eval(&env);
        }
    }

    pub fn eval_tensor(&self, y: [f64; 2]) -> Result<Tensor, CoeffError> {
        let mut t = Tensor::zeros(self.m);
        self.eval_into(y, &mut t.data);
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(CoeffError::NonFinite(y[0], y[1]));
        }
        Ok(t)
    }

    /// Short content hash of the canonical printed entries.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("m={};", self.m));
        for e in &self.entries {
            h.update(e.to_string());
            h.update(";");
        }
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Parses the TOML coefficient format: `m = <int>` plus string entries
    /// `a.i.j.alpha.beta = "<expr>"` (1-based). Missing entries are zero.
    pub fn from_toml_str(src: &str) -> Result<Self, CoeffError> {
        let doc: toml::Table = src.parse().map_err(|e: toml::de::Error| CoeffError::Format(e.to_string()))?;
        let m = match doc.get("m") {
            Some(toml::Value::Integer(m)) if *m >= 1 => *m as usize,
            Some(_) => return Err(CoeffError::Format("`m` must be a positive integer".into())),
            None => return Err(CoeffError::Format("missing key `m`".into())),
        };
        let mut entries = vec![Expr::Num(0.0); (DIM * m) * (DIM * m)];
        let table = match doc.get("a") {
            Some(toml::Value::Table(t)) => t,
            Some(_) => return Err(CoeffError::Format("`a` must be a table of entries".into())),
            None => return Err(CoeffError::Format("no entries under `a`".into())),
        };
        let mut path = Vec::new();
        collect_entries(table, &mut path, m, &mut entries)?;

        let mut field = CoefficientField::new(m, entries);
        for (key, value) in &doc {
            match (key.as_str(), value) {
                ("m", _) | ("a", _) => {}
                ("symmetric", toml::Value::Boolean(b)) => field.symmetric = *b,
                ("name", toml::Value::String(s)) => field.name = Some(s.clone()),
                ("mu", v) => field.mu = Some(as_float(v, "mu")?),
                ("holder_lambda", v) => {
                    let l = as_float(v, "holder_lambda")?;
                    if !(l > 0.0 && l < 1.0) {
                        return Err(CoeffError::Format("holder_lambda must lie in (0, 1)".into()));
                    }
                    field.holder.lambda = l;
                }
                ("holder_tau", v) => field.holder.tau = Some(as_float(v, "holder_tau")?),
                (other, _) => return Err(CoeffError::Format(format!("unknown key `{other}`"))),
            }
        }
        Ok(field)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, CoeffError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path)
            .map_err(|source| CoeffError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&src)
    }

    /// Inverse of [`Self::from_toml_str`] (zero entries omitted).
    pub fn to_toml_string(&self) -> String {
        let mut s = format!("m = {}\nsymmetric = {}\n", self.m, self.symmetric);
        if let Some(name) = &self.name {
            s.push_str(&format!("name = {name:?}\n"));
        }
        for i in 0..DIM {
            for j in 0..DIM {
                for a in 0..self.m {
                    for b in 0..self.m {
                        let e = self.entry(i, j, a, b);
                        if !e.is_zero() {
                            s.push_str(&format!("a.{}.{}.{}.{} = \"{}\"\n", i + 1, j + 1, a + 1, b + 1, e));
                        }
                    }
                }
            }
        }
        s
    }
}

fn as_float(v: &toml::Value, key: &str) -> Result<f64, CoeffError> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(CoeffError::Format(format!("`{key}` must be a number"))),
    }
}

fn collect_entries(
    table: &toml::Table,
    path: &mut Vec<usize>,
    m: usize,
    entries: &mut [Expr],
) -> Result<(), CoeffError> {
    for (key, value) in table {
        let idx: usize = key
            .parse()
            .map_err(|_| CoeffError::Format(format!("entry index `{key}` is not an integer")))?;
        let limit = if path.len() < 2 { DIM } else { m };
        if idx == 0 || idx > limit {
            return Err(CoeffError::Format(format!("entry index {idx} out of range 1..={limit}")));
        }
        path.push(idx - 1);
        match value {
            toml::Value::Table(t) if path.len() < 4 => collect_entries(t, path, m, entries)?,
            toml::Value::String(src) if path.len() == 4 => {
                let (i, j, alpha, beta) = (path[0], path[1], path[2], path[3]);
                let e = parse_expr(src).map_err(|source| CoeffError::Parse {
                    i: i + 1,
                    j: j + 1,
                    alpha: alpha + 1,
                    beta: beta + 1,
                    source,
                })?;
                entries[Tensor::index(m, i, j, alpha, beta)] = e;
            }
            toml::Value::Float(f) if path.len() == 4 => {
                entries[Tensor::index(m, path[0], path[1], path[2], path[3])] = Expr::Num(*f);
            }
            toml::Value::Integer(k) if path.len() == 4 => {
                entries[Tensor::index(m, path[0], path[1], path[2], path[3])] = Expr::Num(*k as f64);
            }
            _ => return Err(CoeffError::Format("entries must be `a.i.j.alpha.beta = \"expr\"`".into())),
        }
        path.pop();
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mu_low: f64,
    pub mu_high: f64,
    pub symmetric: bool,
    pub max_asymmetry: f64,
    pub holder_estimate: f64,
    pub n_samples: usize,
}

impl ValidationReport {
    /// Ellipticity constant mu with mu <= lambda_min and lambda_max <= 1/mu.
    pub fn mu(&self) -> f64 {
        self.mu_low.min(1.0 / self.mu_high)
    }
}

/// Samples A on an n x n grid of the unit cell and checks the standing
/// hypotheses: ellipticity of the symmetric part, the index-swap symmetry, a
/// Hölder quotient for the configured exponent, and denominator signs.
pub fn validate(field: &CoefficientField, n_samples: usize) -> Result<ValidationReport, CoeffError> {
    if n_samples < 16 {
        return Err(CoeffError::TooFewSamples(n_samples));
    }
    let n = n_samples;
    let at = |i: usize, j: usize| [i as f64 / n as f64, j as f64 / n as f64];

    for entry in field.entries() {
        for den in entry.denominators() {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for j in 0..n {
                for i in 0..n {
                    let v = den.eval(&Env::at(at(i, j)));
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if !(lo > 0.0 || hi < 0.0) {
                return Err(CoeffError::DenominatorSign { denominator: den.to_string() });
            }
        }
        if entry.references(Var::X1) || entry.references(Var::X2) {
            return Err(CoeffError::Format("coefficient entries may only use y1, y2".into()));
        }
    }

    let mut samples = Vec::with_capacity(n * n);
    let (mut mu_low, mut mu_high) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut asym: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            let y = at(i, j);
            let t = field.eval_tensor(y)?;
            let (lo, hi) = t.ellipticity_bounds();
            mu_low = mu_low.min(lo);
            mu_high = mu_high.max(hi);
            asym = asym.max(t.asymmetry());
            samples.push(t);
        }
    }

    let lambda = field.holder.lambda;
    let mut holder: f64 = 0.0;
    let mut step = 1;
    while step <= n / 2 {
        for j in 0..n {
            for i in 0..n {
                let a = &samples[j * n + i];
                for (di, dj) in [(step, 0), (0, step), (step, step)] {
                    let b = &samples[((j + dj) % n) * n + (i + di) % n];
                    let dist = ((di * di + dj * dj) as f64).sqrt() / n as f64;
                    let diff = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    holder = holder.max(diff / dist.powf(lambda));
                }
            }
        }
        step *= 2;
    }

    let symmetric = asym <= 1e-12;
    if mu_low <= 0.0 {
        return Err(CoeffError::Ellipticity { mu_low });
    }
    if field.symmetric && !symmetric {
        return Err(CoeffError::Symmetry { deviation: asym });
    }
    Ok(ValidationReport { mu_low, mu_high, symmetric, max_asymmetry: asym, holder_estimate: holder, n_samples: n })
}
