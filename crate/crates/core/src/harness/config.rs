//! Study configuration (TOML) and its validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeff::{parse_expr_in, validate, CoefficientField, Expr, VarSet};
use crate::domain::Polygon;
use crate::linalg::Backend;
use crate::solver::Normalization;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed configuration: {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BcKind {
    #[default]
    Dirichlet,
    Neumann,
}

/// A slope window checked in `--assert` mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlopeAssertion {
    /// Quantity name as it appears in the report, e.g. `u_diff.l2_volume`.
    pub quantity: String,
    pub min: f64,
    #[serde(default = "unbounded")]
    pub max: f64,
}

fn unbounded() -> f64 {
    f64::MAX
}

/// Everything an ε-ladder rate study needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Coefficient TOML file; takes precedence over `coefficient_expr`.
    pub coefficient: Option<PathBuf>,
    /// Scalar isotropic coefficient a(y) for m = 1.
    pub coefficient_expr: Option<String>,
    pub domain: String,
    pub bc: BcKind,
    /// Volume source F, one expression per component.
    pub source: Vec<String>,
    /// Dirichlet data f.
    pub f: Vec<String>,
    /// Neumann data g (may use n1, n2).
    pub g: Vec<String>,
    /// Alternative Neumann data: the conormal trace of this field under the
    /// homogenized tensor, shifted by a constant so the data are compatible.
    pub g_from: Option<Vec<String>>,
    pub normalization: Normalization,
    pub eps_ladder: Vec<f64>,
    /// Mesh-to-period ratio, h = ε / r.
    pub r: usize,
    /// Sub-cells per element edge in the quadrature.
    pub q: usize,
    /// Cell grid resolution; defaults to r so that cell and mesh nodes coincide.
    pub cell_n: Option<usize>,
    /// Exponents a of the weights φ_a in the weighted gradient functional.
    pub weights: Vec<f64>,
    /// Quantities to fit and emit; empty means all.
    pub norms: Vec<String>,
    pub backend: Backend,
    /// Refuse studies whose finest mesh exceeds this many degrees of freedom.
    pub max_dofs: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub assert: Vec<SlopeAssertion>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            coefficient: None,
            coefficient_expr: Some("2 + sin(2*pi*y1)*sin(2*pi*y2)".into()),
            domain: "square".into(),
            bc: BcKind::Dirichlet,
            source: vec!["1".into()],
            f: vec!["0".into()],
            g: vec![],
            g_from: None,
            normalization: Normalization::MeanZeroVolume,
            eps_ladder: vec![0.125, 0.0625, 0.03125],
            r: 16,
            q: 2,
            cell_n: None,
            weights: vec![0.0, 0.5],
            norms: vec![],
            backend: Backend::Cholesky,
            max_dofs: 4_000_000,
            seed: 0,
            out: None,
            assert: vec![],
        }
    }
}

fn parse_list(exprs: &[String], vars: VarSet, what: &str) -> Result<Vec<Expr>, ConfigError> {
    exprs
        .iter()
        .map(|s| parse_expr_in(s, vars).map_err(|e| ConfigError::Invalid(format!("{what} {s:?}: {e}"))))
        .collect()
}

/// Whether x is 1/2^j for some j >= 0.
fn is_dyadic(x: f64) -> bool {
    if !(x > 0.0 && x <= 1.0) {
        return false;
    }
    let inv = 1.0 / x;
    let j = inv.log2().round();
    (inv - 2f64.powf(j)).abs() <= 1e-9 * inv
}

impl StudyConfig {
    pub fn from_toml_str(src: &str) -> Result<Self, ConfigError> {
        toml::from_str(src).map_err(|e| ConfigError::Format(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut cfg = Self::from_toml_str(&src)?;
        // Relative coefficient paths are resolved against the config file.
        if let (Some(c), Some(dir)) = (&cfg.coefficient, path.parent()) {
            if c.is_relative() {
                cfg.coefficient = Some(dir.join(c));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn cell_n(&self) -> usize {
        self.cell_n.unwrap_or(self.r)
    }

    pub fn polygon(&self) -> Result<Polygon, ConfigError> {
        Polygon::by_name(&self.domain).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn field(&self) -> Result<CoefficientField, ConfigError> {
        match (&self.coefficient, &self.coefficient_expr) {
            (Some(p), _) => CoefficientField::from_file(p).map_err(|e| ConfigError::Invalid(e.to_string())),
            (None, Some(e)) => CoefficientField::isotropic_str(e).map_err(|e| ConfigError::Invalid(e.to_string())),
            (None, None) => Err(ConfigError::Invalid("no coefficient given".into())),
        }
    }

    pub fn source_exprs(&self) -> Result<Vec<Expr>, ConfigError> {
        parse_list(&self.source, VarSet::Spatial, "source")
    }

    pub fn f_exprs(&self) -> Result<Vec<Expr>, ConfigError> {
        parse_list(&self.f, VarSet::Spatial, "Dirichlet data")
    }

    pub fn g_exprs(&self) -> Result<Vec<Expr>, ConfigError> {
        parse_list(&self.g, VarSet::Boundary, "Neumann data")
    }

    pub fn g_from_exprs(&self) -> Result<Option<Vec<Expr>>, ConfigError> {
        self.g_from.as_ref().map(|g| parse_list(g, VarSet::Spatial, "g_from")).transpose()
    }

    /// The sorted list of ladder points, finest last.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.eps_ladder.is_empty() {
            return bad("empty ε ladder".into());
        }
        for w in self.eps_ladder.windows(2) {
            if !(w[1] < w[0]) {
                return bad(format!("ε ladder must be strictly decreasing, found {} then {}", w[0], w[1]));
            }
        }
        for &e in &self.eps_ladder {
            if !is_dyadic(e) {
                return bad(format!("ε = {e} is not a power 1/2^j"));
            }
        }
        if self.r < 8 {
            return bad(format!("r = {} is below the minimum 8", self.r));
        }
        if self.q == 0 {
            return bad("q must be at least 1".into());
        }
        if self.cell_n() < 8 {
            return bad(format!("cell grid n = {} is below the minimum 8", self.cell_n()));
        }
        let poly = self.polygon()?;
        let field = self.field()?;
        validate(&field, 64).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let m = field.m();
        let finest = self.eps_ladder.last().copied().unwrap_or(1.0) / self.r as f64;
        let inv = 1.0 / finest;
        if (inv - inv.round()).abs() > 1e-9 * inv {
            return bad(format!("1/h = {inv} is not an integer"));
        }
        let dofs = (poly.area() * inv * inv) as usize * m;
        if dofs > self.max_dofs {
            return bad(format!("finest mesh needs about {dofs} dofs, above the cap {}", self.max_dofs));
        }
        let check_len = |v: usize, what: &str| {
            if v != m {
                Err(ConfigError::Invalid(format!("{what} has {v} expressions, the coefficient has m = {m}")))
            } else {
                Ok(())
            }
        };
        check_len(self.source.len(), "source")?;
        self.source_exprs()?;
        match self.bc {
            BcKind::Dirichlet => {
                check_len(self.f.len(), "f")?;
                self.f_exprs()?;
            }
            BcKind::Neumann => match self.g_from_exprs()? {
                Some(g) => check_len(g.len(), "g_from")?,
                None => {
                    check_len(self.g.len(), "g")?;
                    self.g_exprs()?;
                }
            },
        }
        for a in &self.weights {
            if !(*a >= 0.0 && a.is_finite()) {
                return bad(format!("weight exponent {a} must be a finite non-negative number"));
            }
        }
        Ok(())
    }
}
