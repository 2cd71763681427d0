use thiserror::Error;

use crate::coeff::{CoeffError, ExprError};
use crate::domain::DomainError;
use crate::harness::{ConfigError, FitError};
use crate::linalg::SolveError;
use crate::solver::SolverError;
use crate::spectra::SpectraError;
use crate::torus::CellError;
use crate::twoscale::TwoScaleError;

/// Any failure of the library, grouped by the stage that raised it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("expression: {0}")]
    Expr(#[from] ExprError),
    #[error("coefficient: {0}")]
    Coeff(#[from] CoeffError),
    #[error("domain: {0}")]
    Domain(#[from] DomainError),
    #[error("cell problem: {0}")]
    Cell(#[from] CellError),
    #[error("linear solve: {0}")]
    Solve(#[from] SolveError),
    #[error("boundary value problem: {0}")]
    Solver(#[from] SolverError),
    #[error("two-scale expansion: {0}")]
    TwoScale(#[from] TwoScaleError),
    #[error("eigenproblem: {0}")]
    Spectra(#[from] SpectraError),
    #[error("rate fit: {0}")]
    Fit(#[from] FitError),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Serialize(String),
}

impl Error {
    /// True for mistakes in user input (as opposed to numerical failures).
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Expr(_) => true,
            Error::Coeff(_) => true,
            Error::Domain(_) => true,
            Error::Spectra(SpectraError::TooMany(_)) => true,
            Error::Solver(SolverError::Unresolved { .. } | SolverError::ComponentCount { .. } | SolverError::Incompatible { .. }) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Error {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }
}
