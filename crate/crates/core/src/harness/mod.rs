//! ε-ladder studies: configuration, execution, rate fits and report output.

pub mod config;
pub mod emit;
pub mod fit;
pub mod study;

pub use config::{BcKind, ConfigError, SlopeAssertion, StudyConfig};
pub use emit::{emit, rate_csv, Format, RATE_HEADER};
pub use fit::{fit_log_model, fit_slope, FitError, LogFit, SlopeFit};
pub use study::{
    build_id, check_assertions, fit_quantity, run_rate_study, NormFit, Provenance, RateReport, RateRow, StudyFailure,
    DEGENERATE_NOTICE, SCHEMA_VERSION,
};
