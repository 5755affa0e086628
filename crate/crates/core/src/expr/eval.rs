use std::collections::HashMap;

use num_traits::{Signed, ToPrimitive};

use super::{Expr, ExprError, Func, Node, Variable};

/// Numeric values for jet coordinates.
pub type Point = HashMap<Variable, f64>;

/// Denominator / pole guard used by plain [`Expr::evaluate`].
pub const DEFAULT_EVAL_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    /// Magnitudes below this count as a pole for quotients, `tan` and `atan2`.
    pub guard: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            guard: DEFAULT_EVAL_GUARD,
        }
    }
}

impl Expr {
    pub fn evaluate(&self, point: &Point) -> Result<f64, ExprError> {
        self.evaluate_with(point, EvalOptions::default())
    }

    /// Value together with the sum of absolute values of its top-level
    /// terms, the natural scale for cancellation residuals.
    pub fn evaluate_scaled(&self, point: &Point) -> Result<(f64, f64), ExprError> {
        let v = self.evaluate(point)?;
        let mut scale = 0.0;
        for t in self.terms() {
            scale += t.evaluate(point)?.abs();
        }
        Ok((v, scale))
    }

    pub fn evaluate_with(&self, point: &Point, opts: EvalOptions) -> Result<f64, ExprError> {
        let mut memo = HashMap::new();
        self.eval_rec(point, opts.guard, &mut memo)
    }

    fn eval_rec(
        &self,
        point: &Point,
        guard: f64,
        memo: &mut HashMap<usize, f64>,
    ) -> Result<f64, ExprError> {
        let key = self.ptr_id();
        if let Some(v) = memo.get(&key) {
            return Ok(*v);
        }
        let value = match self.node() {
            Node::Const(c) => c.to_f64().unwrap_or(f64::NAN),
            Node::Pi => std::f64::consts::PI,
            Node::Var(v) => *point
                .get(v)
                .ok_or_else(|| ExprError::UnboundVariable(v.clone()))?,
            Node::Sum(xs) => {
                let mut s = 0.0;
                for x in xs {
                    s += x.eval_rec(point, guard, memo)?;
                }
                s
            }
            Node::Product(xs) => {
                let mut p = 1.0;
                for x in xs {
                    p *= x.eval_rec(point, guard, memo)?;
                }
                p
            }
            Node::Power(b, q) => {
                let base = b.eval_rec(point, guard, memo)?;
                if q.is_negative() && base.abs() < guard {
                    return Err(ExprError::Domain(format!("division by {base:e}")));
                }
                if q.is_integer() {
                    let n = q
                        .to_integer()
                        .to_i32()
                        .ok_or_else(|| ExprError::Domain("exponent overflow".into()))?;
                    base.powi(n)
                } else {
                    if base < 0.0 {
                        return Err(ExprError::Domain(format!(
                            "fractional power of negative number {base:e}"
                        )));
                    }
                    base.powf(q.to_f64().unwrap_or(f64::NAN))
                }
            }
            Node::Apply(f, args) => {
                let a = args[0].eval_rec(point, guard, memo)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tan => {
                        if a.cos().abs() < guard {
                            return Err(ExprError::Domain(format!("tan pole at {a:e}")));
                        }
                        a.tan()
                    }
                    Func::Atan => a.atan(),
                    Func::Atan2 => {
                        let x = args[1].eval_rec(point, guard, memo)?;
                        if a.abs() < guard && x.abs() < guard {
                            return Err(ExprError::Domain("atan2 at the origin".into()));
                        }
                        a.atan2(x)
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(ExprError::Domain(format!("sqrt of {a:e}")));
                        }
                        a.sqrt()
                    }
                    Func::Exp => a.exp(),
                    Func::Ln => {
                        if a < guard {
                            return Err(ExprError::Domain(format!("ln of {a:e}")));
                        }
                        a.ln()
                    }
                }
            }
        };
        if !value.is_finite() {
            return Err(ExprError::Domain(format!("non-finite value in {self}")));
        }
        memo.insert(key, value);
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sin_of_zero() {
        let z = Variable::arbitrary("z1").shifted(1);
        let mut p = Point::new();
        p.insert(z.clone(), 0.0);
        assert_eq!(Expr::sin(Expr::var(z)).evaluate(&p).unwrap(), 0.0);
    }

    #[test]
    fn sqrt_of_negative_is_domain_error() {
        let z = Variable::arbitrary("z1");
        let mut p = Point::new();
        p.insert(z.clone(), -1.0);
        assert!(matches!(
            Expr::sqrt(Expr::var(z)).evaluate(&p),
            Err(ExprError::Domain(_))
        ));
    }

    #[test]
    fn unbound_is_reported() {
        let z = Variable::arbitrary("z1");
        assert_eq!(
            Expr::var(z.clone()).evaluate(&Point::new()),
            Err(ExprError::UnboundVariable(z))
        );
    }

    #[test]
    fn quotient_guard() {
        let z = Variable::arbitrary("z1");
        let mut p = Point::new();
        p.insert(z.clone(), 1e-14);
        assert!(Expr::recip(Expr::var(z)).evaluate(&p).is_err());
    }
}
