use std::collections::HashMap;

use num_rational::BigRational;
use num_traits::One;

use super::{Expr, Func, Node, Variable};

impl Expr {
    /// Exact partial derivative with respect to one jet coordinate.
    pub fn partial(&self, v: &Variable) -> Expr {
        let mut memo = HashMap::new();
        self.partial_rec(v, &mut memo)
    }

    fn partial_rec(&self, v: &Variable, memo: &mut HashMap<usize, Expr>) -> Expr {
        if !self.contains(v) {
            return Expr::zero();
        }
        if let Some(d) = memo.get(&self.ptr_id()) {
            return d.clone();
        }
        let d = match self.node() {
            Node::Const(_) | Node::Pi => Expr::zero(),
            Node::Var(w) => {
                if w == v {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Sum(xs) => Expr::sum(xs.iter().map(|x| x.partial_rec(v, memo)).collect::<Vec<_>>()),
            Node::Product(xs) => {
                let mut terms = Vec::new();
                for (i, xi) in xs.iter().enumerate() {
                    let di = xi.partial_rec(v, memo);
                    if di.is_zero() {
                        continue;
                    }
                    let mut factors: Vec<Expr> = Vec::with_capacity(xs.len());
                    factors.push(di);
                    factors.extend(xs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| x.clone()));
                    terms.push(Expr::product(factors));
                }
                Expr::sum(terms)
            }
            Node::Power(b, q) => {
                let db = b.partial_rec(v, memo);
                Expr::product([
                    Expr::constant(q.clone()),
                    Expr::pow(b.clone(), q - BigRational::one()),
                    db,
                ])
            }
            Node::Apply(f, args) => {
                let a = &args[0];
                match f {
                    Func::Sin => Expr::cos(a.clone()) * a.partial_rec(v, memo),
                    Func::Cos => -(Expr::sin(a.clone()) * a.partial_rec(v, memo)),
                    Func::Tan => {
                        (Expr::one() + Expr::powi(Expr::tan(a.clone()), 2)) * a.partial_rec(v, memo)
                    }
                    Func::Atan => {
                        a.partial_rec(v, memo) / (Expr::one() + Expr::powi(a.clone(), 2))
                    }
                    Func::Atan2 => {
                        let (y, x) = (&args[0], &args[1]);
                        let num = x * y.partial_rec(v, memo) - y * x.partial_rec(v, memo);
                        num / (Expr::powi(x.clone(), 2) + Expr::powi(y.clone(), 2))
                    }
                    Func::Sqrt => {
                        // never stored (normalized to a power), kept for completeness
                        a.partial_rec(v, memo) / (Expr::int(2) * Expr::sqrt(a.clone()))
                    }
                    Func::Exp => self * a.partial_rec(v, memo),
                    Func::Ln => a.partial_rec(v, memo) / a,
                }
            }
        };
        memo.insert(self.ptr_id(), d.clone());
        d
    }

    /// Gradient with respect to a list of coordinates.
    pub fn gradient(&self, vars: &[Variable]) -> Vec<Expr> {
        vars.iter().map(|v| self.partial(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let z1p = Variable::arbitrary("z1").shifted(1);
        let z2 = Variable::arbitrary("z2");
        let e = Expr::var(z1p.clone()) * Expr::var(z2.clone());
        assert_eq!(e.partial(&z1p), Expr::var(z2));
    }

    #[test]
    fn tangent_derivative_shape() {
        let th = Variable::free("theta");
        let d = Expr::tan(Expr::var(th.clone())).partial(&th);
        assert_eq!(d, Expr::one() + Expr::powi(Expr::tan(Expr::var(th)), 2));
    }

    #[test]
    fn partials_of_quadratic() {
        let x1 = Variable::free("x1").shifted(1);
        let x2 = Variable::free("x2").shifted(1);
        let x3 = Variable::state("x3").shifted(1);
        let e = Expr::var(x3) - Expr::powi(Expr::var(x1.clone()), 2) - Expr::powi(Expr::var(x2), 2);
        assert_eq!(e.partial(&x1), Expr::int(-2) * Expr::var(x1));
    }
}
