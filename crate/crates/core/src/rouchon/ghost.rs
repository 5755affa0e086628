use crate::expr::{Expr, Poly, Variable};

use super::RouchonError;

/// `D = Σ C_i ∂_{t_i}` over target jet coordinates `t_i = x_i^(e_i)`, with
/// ghost coefficients `C_1, C_2, …` named by position.
#[derive(Clone, Debug, PartialEq)]
pub struct GhostOperator {
    targets: Vec<Variable>,
    ghosts: Vec<Variable>,
}

impl GhostOperator {
    pub fn new(targets: Vec<Variable>) -> Self {
        let ghosts = (1..=targets.len())
            .map(|k| Variable::ghost(&format!("C{k}")))
            .collect();
        GhostOperator { targets, ghosts }
    }

    /// Ghosts named explicitly (one per target).
    pub fn with_ghosts(targets: Vec<Variable>, ghosts: Vec<Variable>) -> Self {
        assert_eq!(targets.len(), ghosts.len());
        GhostOperator { targets, ghosts }
    }

    pub fn targets(&self) -> &[Variable] {
        &self.targets
    }

    pub fn ghosts(&self) -> &[Variable] {
        &self.ghosts
    }

    /// Ghost attached to a target coordinate.
    pub fn ghost_of(&self, target: &Variable) -> Option<&Variable> {
        self.targets
            .iter()
            .position(|t| t == target)
            .map(|i| &self.ghosts[i])
    }

    pub fn apply(&self, e: &Expr) -> Expr {
        Expr::sum(
            self.targets
                .iter()
                .zip(&self.ghosts)
                .map(|(t, c)| Expr::var(c.clone()) * e.partial(t)),
        )
        .expand()
    }

    /// `[P, DP, D²P, …]` up to and excluding the first zero iterate.
    pub fn iterate(&self, p: &Expr, kmax: u32) -> Result<Vec<Expr>, RouchonError> {
        let poly = Poly::from_expr(p, &self.targets)
            .ok_or_else(|| RouchonError::NonPolynomialTarget(p.to_string()))?;
        let d = poly.degree();
        if d > kmax {
            return Err(RouchonError::DegreeExceedsLimit { degree: d, limit: kmax });
        }
        let mut out = vec![p.clone()];
        let mut cur = p.expand();
        for _ in 0..=d {
            cur = self.apply(&cur);
            if cur.is_zero() {
                return Ok(out);
            }
            out.push(cur.clone());
        }
        // A polynomial of degree d is killed by D^(d+1); reaching this means
        // the normal form failed to expose a zero.
        Err(RouchonError::NonPolynomialTarget(p.to_string()))
    }
}

/// Ghost-homogeneous forms `D^k P`, `k ≥ 1`, with coefficients in the
/// system coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct HomogeneousSystem {
    pub ghosts: Vec<Variable>,
    pub forms: Vec<Expr>,
    pub degrees: Vec<u32>,
}

impl HomogeneousSystem {
    pub fn new(ghosts: Vec<Variable>, forms: Vec<Expr>) -> Result<Self, RouchonError> {
        let mut kept = Vec::new();
        let mut degrees = Vec::new();
        for f in forms {
            let f = f.expand();
            if f.is_zero() {
                continue;
            }
            let p = Poly::from_expr(&f, &ghosts)
                .ok_or_else(|| RouchonError::NotHomogeneous(f.to_string()))?;
            let d = p
                .homogeneous_degree()
                .ok_or_else(|| RouchonError::NotHomogeneous(f.to_string()))?;
            if d == 0 {
                return Err(RouchonError::NotHomogeneous(f.to_string()));
            }
            kept.push(f);
            degrees.push(d);
        }
        Ok(HomogeneousSystem {
            ghosts,
            forms: kept,
            degrees,
        })
    }

    /// Forms `D^k P_j`, `k ≥ 1`, for every relation `P_j`.
    pub fn from_relations(op: &GhostOperator, relations: &[Expr], kmax: u32) -> Result<Self, RouchonError> {
        let mut forms = Vec::new();
        for p in relations {
            let it = op.iterate(p, kmax)?;
            forms.extend(it.into_iter().skip(1));
        }
        HomogeneousSystem::new(op.ghosts().to_vec(), forms)
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{equivalent, EquivOptions};

    fn d1(n: &str) -> Variable {
        Variable::free(n).shifted(1)
    }

    fn v(x: &Variable) -> Expr {
        Expr::var(x.clone())
    }

    fn c(k: usize) -> Expr {
        Expr::var(Variable::ghost(&format!("C{k}")))
    }

    #[test]
    fn non_ruled_iterates() {
        let (x1, x2, x3) = (d1("x1"), d1("x2"), Variable::state("x3").shifted(1));
        let p = v(&x3) - Expr::powi(v(&x1), 2) - Expr::powi(v(&x2), 2);
        let op = GhostOperator::new(vec![x1.clone(), x2.clone(), x3]);
        let it = op.iterate(&p, 4).unwrap();
        assert_eq!(it.len(), 3);
        let dp = c(3) - Expr::int(2) * c(1) * v(&x1) - Expr::int(2) * c(2) * v(&x2);
        assert_eq!(it[1], dp.expand());
        let d2 = Expr::int(-2) * (Expr::powi(c(1), 2) + Expr::powi(c(2), 2));
        assert_eq!(it[2], d2.expand());
        assert!(op.apply(&it[2]).is_zero());
    }

    #[test]
    fn chained_iterates() {
        let (x1, x2, x3) = (d1("x1"), d1("x2"), Variable::state("x3").shifted(1));
        let p = v(&x3) - Expr::var(Variable::free("x2")) * v(&x1);
        let op = GhostOperator::new(vec![x1, x2, x3]);
        let it = op.iterate(&p, 4).unwrap();
        assert_eq!(it.len(), 2);
        assert!(equivalent(&it[1], &(c(3) - Expr::var(Variable::free("x2")) * c(1)), &EquivOptions::default()).unwrap());
    }

    #[test]
    fn rejects_non_polynomial() {
        let x1 = d1("x1");
        let op = GhostOperator::new(vec![x1.clone()]);
        assert!(matches!(
            op.iterate(&Expr::sin(v(&x1)), 4),
            Err(RouchonError::NonPolynomialTarget(_))
        ));
        assert!(matches!(
            op.iterate(&Expr::powi(v(&x1), 5), 4),
            Err(RouchonError::DegreeExceedsLimit { .. })
        ));
    }
}
