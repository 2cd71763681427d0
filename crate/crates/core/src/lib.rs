//! Numerical laboratory for periodic elliptic homogenization.
//!
//! The crate computes the constructive objects of the theory (cell
//! correctors, the homogenized tensor, flux correctors and the two-scale
//! expansion error) with bilinear finite elements, and measures how fast
//! oscillatory solutions and spectra approach their homogenized limits as the
//! period shrinks.
//!
//! Module map:
//! - [`coeff`]: coefficient expressions, periodic tensors, validation
//! - [`torus`]: cell problems on the periodic unit cell
//! - [`domain`]: polygons, structured meshes, boundary distance, parallel family
//! - [`solver`]: Dirichlet/Neumann problems for the oscillatory and homogenized operators
//! - [`twoscale`]: two-scale expansion, error functionals, identity checks
//! - [`spectra`]: Dirichlet, Neumann and Steklov eigenvalues and their gaps
//! - [`harness`]: epsilon-ladder studies, rate fits, report emission

pub mod coeff;
pub mod domain;
pub mod fem;
pub mod harness;
pub mod linalg;
pub mod solver;
pub mod spectra;
pub mod torus;
pub mod twoscale;

mod error;

pub use coeff::{CoefficientField, Expr, Tensor};
pub use domain::{Polygon, StructMesh};
pub use error::Error;
pub use solver::{BvpSpec, DiscreteField, Operator};
pub use torus::CorrectorSet;

pub type Result<T, E = Error> = std::result::Result<T, E>;
