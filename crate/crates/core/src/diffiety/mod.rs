//! Explicit order-one systems, the total derivation, parametrizations and
//! their pullbacks, jet sampling and morphism residual checks.

mod chart;
mod system;

pub use chart::{
    sample_jet_where,
    check_morphism, sample_jet, Chart, ChartResidual, CheckOptions, JetPoint, MorphismReport,
    Parametrization, Pullback, CHART_GUARD,
};
pub use system::{SystemContext, SystemDef};

use std::collections::HashMap;

use thiserror::Error;

use crate::expr::{depends_on, Expr, ExprError, VarKind, Variable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffietyError {
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("duplicate declaration of {0}")]
    DuplicateDeclaration(String),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("chart {chart} does not map {var}")]
    ChartIncomplete { chart: String, var: String },
    #[error("chart {0} has singular maps but no exclusion guard")]
    MissingExclusion(String),
    #[error("no admissible jet in chart {chart} after {attempts} draws")]
    SamplingExhausted { chart: String, attempts: usize },
    #[error("jet order {needed} required but truncation is {available}")]
    TruncationTooSmall { needed: u32, available: u32 },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Source of `δv` for each jet coordinate.
pub trait Derivation {
    fn derivative_of(&self, v: &Variable) -> Result<Expr, DiffietyError>;

    /// Rewrite an expression into the coordinates this derivation acts on.
    fn prepare(&self, e: &Expr) -> Result<Expr, DiffietyError> {
        Ok(e.clone())
    }
}

/// The trivial diffiety: every non-exogenous coordinate shifts
/// `w^(k) ↦ w^(k+1)`, exogenous coordinates follow their declared derivative
/// and ghosts are constant.
#[derive(Clone, Debug, Default)]
pub struct TrivialContext {
    exo: HashMap<String, Expr>,
}

impl TrivialContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_exo(exo: impl IntoIterator<Item = (String, Expr)>) -> Self {
        TrivialContext {
            exo: exo.into_iter().collect(),
        }
    }

    pub fn exo_names(&self) -> impl Iterator<Item = &String> {
        self.exo.keys()
    }

    pub fn is_exo(&self, name: &str) -> bool {
        self.exo.contains_key(name)
    }

    /// `δ^k` of an exogenous coordinate at level 0.
    pub fn exo_jet(&self, name: &str, k: u32) -> Result<Expr, DiffietyError> {
        let mut e = Expr::var(Variable::exogenous(name));
        for _ in 0..k {
            e = total_derivative(&e, self)?;
        }
        Ok(e)
    }
}

impl Derivation for TrivialContext {
    fn derivative_of(&self, v: &Variable) -> Result<Expr, DiffietyError> {
        if v.is_ghost() {
            return Ok(Expr::zero());
        }
        if let Some(der) = self.exo.get(v.name()) {
            if v.order() == 0 {
                return Ok(der.clone());
            }
            return self.exo_jet(v.name(), v.order() + 1);
        }
        Ok(Expr::var(v.shifted(1)))
    }
}

/// `δe = Σ_v ∂e/∂v · δv` in the given context.
pub fn total_derivative(e: &Expr, ctx: &impl Derivation) -> Result<Expr, DiffietyError> {
    let e = ctx.prepare(e)?;
    let mut terms = Vec::new();
    for v in e.variables() {
        let dv = ctx.derivative_of(&v)?;
        if dv.is_zero() {
            continue;
        }
        terms.push(e.partial(&v) * dv);
    }
    Ok(Expr::sum(terms))
}

/// `δ^k e`.
pub fn nth_derivative(e: &Expr, k: u32, ctx: &impl Derivation) -> Result<Expr, DiffietyError> {
    let mut out = ctx.prepare(e)?;
    for _ in 0..k {
        out = total_derivative(&out, ctx)?;
    }
    Ok(out)
}

/// Highest `k` with `e` depending on `z^(k)`; `None` stands for `−∞`.
pub fn ord(e: &Expr, base: &str) -> Option<u32> {
    let mut candidates: Vec<Variable> = e
        .variables()
        .into_iter()
        .filter(|v| v.name() == base)
        .collect();
    candidates.sort_by_key(|v| std::cmp::Reverse(v.order()));
    candidates
        .into_iter()
        .find(|v| depends_on(e, v))
        .map(|v| v.order())
}

/// Shorthand for jet variables in tests and fixtures.
pub fn jet(name: &str, kind: VarKind, order: u32) -> Expr {
    Expr::var(Variable::new(name, kind, order))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(n: &str, k: u32) -> Expr {
        jet(n, VarKind::Arbitrary, k)
    }

    #[test]
    fn trivial_shift() {
        let ctx = TrivialContext::new();
        assert_eq!(total_derivative(&z("z1", 0), &ctx).unwrap(), z("z1", 1));
    }

    #[test]
    fn exogenous_follow_declaration() {
        let ctx = TrivialContext::with_exo([("t".to_string(), Expr::one()), ("d".to_string(), Expr::zero())]);
        let t = jet("t", VarKind::Exogenous, 0);
        let d = jet("d", VarKind::Exogenous, 0);
        let e = &t * &z("z1", 0) + d;
        assert_eq!(total_derivative(&e, &ctx).unwrap(), z("z1", 0) + &t * z("z1", 1));
        assert_eq!(ctx.exo_jet("t", 2).unwrap(), Expr::zero());
    }

    #[test]
    fn order_convention() {
        assert_eq!(ord(&(z("z1", 2) + z("z2", 0)), "z1"), Some(2));
        assert_eq!(ord(&z("z2", 5), "z1"), None);
        // structural occurrence without dependence
        let fake = z("z1", 3) - z("z1", 3) + z("z1", 1);
        assert_eq!(ord(&fake, "z1"), Some(1));
    }

    #[test]
    fn order_shift_in_trivial_context() {
        let ctx = TrivialContext::new();
        let e = Expr::sin(z("z1", 1)) * z("z2", 0);
        assert_eq!(ord(&e, "z1"), Some(1));
        assert_eq!(ord(&total_derivative(&e, &ctx).unwrap(), "z1"), Some(2));
    }
}
