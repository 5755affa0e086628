use std::collections::BTreeMap;

use num_traits::{Signed, ToPrimitive};

use super::{Expr, ExprError, Node, Point, Variable};

/// Exponent vector over a fixed variable list.
pub type Monomial = Vec<u32>;

/// Polynomial in a chosen set of variables with symbolic coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    pub vars: Vec<Variable>,
    pub terms: BTreeMap<Monomial, Expr>,
}

impl Poly {
    pub fn zero(vars: &[Variable]) -> Poly {
        Poly {
            vars: vars.to_vec(),
            terms: BTreeMap::new(),
        }
    }

    fn constant(vars: &[Variable], c: Expr) -> Poly {
        let mut p = Poly::zero(vars);
        if !c.is_zero() {
            p.terms.insert(vec![0; vars.len()], c);
        }
        p
    }

    /// Read `e` as a polynomial in `vars`; `None` when some variable of
    /// `vars` sits inside a function, a negative or fractional power.
    pub fn from_expr(e: &Expr, vars: &[Variable]) -> Option<Poly> {
        if !e.contains_any(vars) {
            return Some(Poly::constant(vars, e.clone()));
        }
        match e.node() {
            Node::Var(v) => {
                let i = vars.iter().position(|w| w == v)?;
                let mut mono = vec![0; vars.len()];
                mono[i] = 1;
                let mut p = Poly::zero(vars);
                p.terms.insert(mono, Expr::one());
                Some(p)
            }
            Node::Sum(xs) => {
                let mut acc = Poly::zero(vars);
                for x in xs {
                    acc = acc.add(&Poly::from_expr(x, vars)?);
                }
                Some(acc)
            }
            Node::Product(xs) => {
                let mut acc = Poly::constant(vars, Expr::one());
                for x in xs {
                    acc = acc.mul(&Poly::from_expr(x, vars)?);
                }
                Some(acc)
            }
            Node::Power(b, q) => {
                if !q.is_integer() || q.is_negative() {
                    return None;
                }
                let n = q.to_integer().to_u32()?;
                let pb = Poly::from_expr(b, vars)?;
                let mut acc = Poly::constant(vars, Expr::one());
                for _ in 0..n {
                    acc = acc.mul(&pb);
                }
                Some(acc)
            }
            _ => None,
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            let entry = out.terms.entry(m.clone()).or_insert_with(Expr::zero);
            *entry = &*entry + c;
        }
        out.terms.retain(|_, c| !c.is_zero());
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero(&self.vars);
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                let m: Monomial = m1.iter().zip(m2).map(|(a, b)| a + b).collect();
                let entry = out.terms.entry(m).or_insert_with(Expr::zero);
                *entry = &*entry + (c1 * c2);
            }
        }
        out.terms.retain(|_, c| !c.is_zero());
        out
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|m| m.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Degree shared by every monomial, if the polynomial is homogeneous.
    pub fn homogeneous_degree(&self) -> Option<u32> {
        let mut degs = self.terms.keys().map(|m| m.iter().sum::<u32>());
        let first = degs.next()?;
        degs.all(|d| d == first).then_some(first)
    }

    pub fn to_expr(&self) -> Expr {
        Expr::sum(self.terms.iter().map(|(m, c)| {
            let mut factors = vec![c.clone()];
            for (v, k) in self.vars.iter().zip(m) {
                if *k > 0 {
                    factors.push(Expr::powi(Expr::var(v.clone()), *k as i64));
                }
            }
            Expr::product(factors)
        }))
    }

    /// Coefficients evaluated at a base point.
    pub fn at(&self, point: &Point) -> Result<NumericPoly, ExprError> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for (m, c) in &self.terms {
            terms.push((m.clone(), c.evaluate(point)?));
        }
        Ok(NumericPoly {
            nvars: self.vars.len(),
            terms,
        })
    }
}

/// Polynomial with floating coefficients.
#[derive(Clone, Debug)]
pub struct NumericPoly {
    pub nvars: usize,
    pub terms: Vec<(Monomial, f64)>,
}

impl NumericPoly {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| c * m.iter().zip(x).map(|(k, xi)| xi.powi(*k as i32)).product::<f64>())
            .sum()
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.nvars];
        for (m, c) in &self.terms {
            for i in 0..self.nvars {
                if m[i] == 0 {
                    continue;
                }
                let mut t = c * m[i] as f64;
                for (j, (k, xj)) in m.iter().zip(x).enumerate() {
                    let e = if j == i { k - 1 } else { *k };
                    t *= xj.powi(e as i32);
                }
                g[i] += t;
            }
        }
        g
    }

    pub fn max_coeff(&self) -> f64 {
        self.terms.iter().map(|(_, c)| c.abs()).fold(0.0, f64::max)
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|(m, _)| m.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_coefficients() {
        let c1 = Variable::ghost("C1");
        let c2 = Variable::ghost("C2");
        let x = Expr::var(Variable::free("x"));
        let e = (Expr::var(c1.clone()) + &x * Expr::var(c2.clone())) * Expr::var(c1.clone());
        let p = Poly::from_expr(&e, &[c1.clone(), c2.clone()]).unwrap();
        assert_eq!(p.homogeneous_degree(), Some(2));
        assert_eq!(p.terms[&vec![2, 0]], Expr::one());
        assert_eq!(p.terms[&vec![1, 1]], x);
        assert_eq!(p.to_expr(), e.expand());
    }

    #[test]
    fn rejects_transcendental_occurrence() {
        let c1 = Variable::ghost("C1");
        assert!(Poly::from_expr(&Expr::sin(Expr::var(c1.clone())), &[c1.clone()]).is_none());
        assert!(Poly::from_expr(&Expr::recip(Expr::var(c1.clone())), &[c1]).is_none());
    }
}
