//! The ghost operator `D = Σ C_i ∂_{x_i^(e_i)}`, classification of the real
//! projective solution set of its iterates, linearity tests, the ruled
//! normal form and the parametrization-side tangent checks.

mod checks;
mod classify;
mod ghost;
mod ruled;

pub use checks::{rouchon_checks, ChartChecks, CheckResidual, ChecksOptions, RouchonReport};
pub use classify::{
    classify_generic, projective_solution_set, ClassKind, Classification, GenericClassification,
    MAX_GHOSTS,
};
pub use ghost::{GhostOperator, HomogeneousSystem};
pub use ruled::{
    linearity_test, ruled_rewrite, system_ghost_forms, verify_ruled, LinearForm, LinearRow,
    Linearity, RuledForm, V2Rule, GHOST_KMAX,
};

use thiserror::Error;

use crate::diffiety::DiffietyError;
use crate::expr::ExprError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouchonError {
    #[error("relation is not polynomial in the targeted derivatives: {0}")]
    NonPolynomialTarget(String),
    #[error("ghost degree {degree} exceeds the limit {limit}")]
    DegreeExceedsLimit { degree: u32, limit: u32 },
    #[error("form is not ghost-homogeneous: {0}")]
    NotHomogeneous(String),
    #[error("{0} ghosts exceed the supported scope")]
    ScopeExceeded(usize),
    #[error("not ruled: {0}")]
    NotRuled(String),
    #[error("ray {requested} requested but {available} available")]
    AmbiguousRay { requested: usize, available: usize },
    #[error(transparent)]
    Diffiety(#[from] DiffietyError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}
