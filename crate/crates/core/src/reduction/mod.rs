//! First integrals by characteristics and the `(r, n)` descent producing
//! flat-output candidates for systems with one or two free variables.

mod driver;
mod integrals;
mod step;

pub use driver::{compute_flat_outputs, ReductionOptions, ReductionOutcome, ReductionTrace, TraceStatus, MAX_STEPS};
pub use integrals::{first_integrals, first_integrals_with_pivot, verify as verify_integrals, FirstIntegrals, VectorField};
pub(crate) use step::compose as compose_defs;
pub use step::{reduce_once, BranchInput, Measure, ReductionStep, StepBranch, StepResult};

use thiserror::Error;

use crate::diffiety::DiffietyError;
use crate::expr::ExprError;
use crate::rouchon::RouchonError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error("vector field outside the triangular-quadrature class: {0}")]
    UnsupportedClass(String),
    #[error("no nonzero pivot coefficient")]
    PivotVanishes,
    #[error("cannot re-express derivatives in the new coordinates: {0}")]
    ReexpressionFailed(String),
    #[error("invariant dynamics do not involve the pivot: {0}")]
    Autonomous(String),
    #[error("first-integral check failed: {0}")]
    IntegralCheck(String),
    #[error(transparent)]
    Rouchon(#[from] RouchonError),
    #[error(transparent)]
    Diffiety(#[from] DiffietyError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}
