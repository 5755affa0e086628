//! Immutable symbolic expressions over jet variables.
//!
//! Every [`Expr`] is kept in a syntactic normal form by its constructors:
//! sums and products are flattened and sorted, numeric constants are folded,
//! identical terms are collected (`2·a + 3·a → 5·a`, `a·a^2 → a^3`), and
//! `sqrt` is stored as a rational power. No trigonometric or algebraic
//! rewriting happens beyond that; semantic equality is the job of
//! [`equivalent`].

mod diff;
mod display;
mod equiv;
mod eval;
mod poly;
mod variable;

pub use equiv::{depends_on, equivalent, EquivOptions, Sampler};
pub use eval::{EvalOptions, Point, DEFAULT_EVAL_GUARD};
pub use poly::{Monomial, NumericPoly, Poly};
pub use variable::{VarKind, Variable};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{DefaultHasher, Hash, Hasher};
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unbound variable {0}")]
    UnboundVariable(Variable),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no valid sample point found after {0} draws")]
    NoValidSample(usize),
    #[error("cyclic bindings through {0}")]
    CyclicBindings(Variable),
}

/// Elementary functions available in expressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Atan,
    Atan2,
    Sqrt,
    Exp,
    Ln,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Atan => "atan",
            Func::Atan2 => "atan2",
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Ln => "ln",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "atan" | "arctan" => Func::Atan,
            "atan2" => Func::Atan2,
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            _ => return None,
        })
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Atan2 => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Const(BigRational),
    Pi,
    Var(Variable),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Power(Expr, BigRational),
    Apply(Func, Vec<Expr>),
}

#[derive(Debug)]
struct Inner {
    node: Node,
    hash: u64,
    /// One bit per variable hash bucket; a clear bit proves absence.
    bloom: u64,
}

/// A shared, normalized expression tree.
#[derive(Clone, Debug)]
pub struct Expr(Arc<Inner>);

fn var_bit(v: &Variable) -> u64 {
    let mut h = DefaultHasher::new();
    v.hash(&mut h);
    1u64 << (h.finish() % 64)
}

impl Expr {
    fn raw(node: Node) -> Expr {
        let mut h = DefaultHasher::new();
        node.hash(&mut h);
        let bloom = match &node {
            Node::Const(_) | Node::Pi => 0,
            Node::Var(v) => var_bit(v),
            Node::Sum(xs) | Node::Product(xs) | Node::Apply(_, xs) => {
                xs.iter().fold(0, |acc, x| acc | x.0.bloom)
            }
            Node::Power(b, _) => b.0.bloom,
        };
        Expr(Arc::new(Inner {
            node,
            hash: h.finish(),
            bloom,
        }))
    }

    pub fn node(&self) -> &Node {
        &self.0.node
    }

    pub fn ptr_id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    // ---- leaves -------------------------------------------------------

    pub fn constant(r: BigRational) -> Expr {
        Expr::raw(Node::Const(r))
    }

    pub fn int(i: i64) -> Expr {
        Expr::constant(BigRational::from_integer(BigInt::from(i)))
    }

    pub fn ratio(n: i64, d: i64) -> Expr {
        Expr::constant(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }

    /// Exact rational value of a finite float (used for numeric rays).
    pub fn from_f64(x: f64) -> Expr {
        match BigRational::from_float(x) {
            Some(r) => Expr::constant(r),
            None => Expr::zero(),
        }
    }

    pub fn zero() -> Expr {
        Expr::int(0)
    }

    pub fn one() -> Expr {
        Expr::int(1)
    }

    pub fn pi() -> Expr {
        Expr::raw(Node::Pi)
    }

    pub fn var(v: Variable) -> Expr {
        Expr::raw(Node::Var(v))
    }

    // ---- queries -------------------------------------------------------

    pub fn as_const(&self) -> Option<&BigRational> {
        match self.node() {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<&Variable> {
        match self.node() {
            Node::Var(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const().is_some_and(|c| c.is_zero())
    }

    pub fn is_one(&self) -> bool {
        self.as_const().is_some_and(|c| c.is_one())
    }

    /// True if the expression contains no variables.
    pub fn is_numeric(&self) -> bool {
        self.0.bloom == 0
    }

    pub fn contains(&self, v: &Variable) -> bool {
        if self.0.bloom & var_bit(v) == 0 {
            return false;
        }
        match self.node() {
            Node::Const(_) | Node::Pi => false,
            Node::Var(w) => w == v,
            Node::Sum(xs) | Node::Product(xs) | Node::Apply(_, xs) => {
                xs.iter().any(|x| x.contains(v))
            }
            Node::Power(b, _) => b.contains(v),
        }
    }

    pub fn contains_any<'a>(&self, vs: impl IntoIterator<Item = &'a Variable>) -> bool {
        vs.into_iter().any(|v| self.contains(v))
    }

    /// All variables occurring in the expression, sorted.
    pub fn variables(&self) -> BTreeSet<Variable> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Variable>) {
        match self.node() {
            Node::Const(_) | Node::Pi => {}
            Node::Var(v) => {
                out.insert(v.clone());
            }
            Node::Sum(xs) | Node::Product(xs) | Node::Apply(_, xs) => {
                for x in xs {
                    x.collect_vars(out);
                }
            }
            Node::Power(b, _) => b.collect_vars(out),
        }
    }

    /// Highest jet level of the named base variable, if present.
    pub fn max_order_of(&self, name: &str) -> Option<u32> {
        self.variables()
            .iter()
            .filter(|v| v.name() == name)
            .map(Variable::order)
            .max()
    }

    /// Number of nodes (shared subtrees counted once per occurrence).
    pub fn size(&self) -> usize {
        match self.node() {
            Node::Const(_) | Node::Pi | Node::Var(_) => 1,
            Node::Sum(xs) | Node::Product(xs) | Node::Apply(_, xs) => {
                1 + xs.iter().map(Expr::size).sum::<usize>()
            }
            Node::Power(b, _) => 1 + b.size(),
        }
    }

    /// True when the tree has a quotient, a fractional power or an `atan2`.
    pub fn has_singular_points(&self) -> bool {
        match self.node() {
            Node::Const(_) | Node::Pi | Node::Var(_) => false,
            Node::Power(b, q) => {
                !q.is_integer() || q.is_negative() && !b.is_numeric() || b.has_singular_points()
            }
            Node::Apply(Func::Atan2, _) | Node::Apply(Func::Ln, _) | Node::Apply(Func::Tan, _) => {
                true
            }
            Node::Sum(xs) | Node::Product(xs) | Node::Apply(_, xs) => {
                xs.iter().any(Expr::has_singular_points)
            }
        }
    }

    // ---- normalizing constructors ---------------------------------------

    /// Flattened, constant-folded sum with like terms collected.
    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
        let mut constant = BigRational::zero();
        let mut collected: BTreeMap<Expr, BigRational> = BTreeMap::new();
        let mut push = |t: Expr, constant: &mut BigRational| {
            if let Some(c) = t.as_const() {
                *constant += c;
                return;
            }
            let (coeff, rest) = t.split_coefficient();
            *collected.entry(rest).or_insert_with(BigRational::zero) += coeff;
        };
        for t in terms {
            if let Node::Sum(xs) = t.node() {
                for x in xs {
                    push(x.clone(), &mut constant);
                }
            } else {
                push(t, &mut constant);
            }
        }
        let mut out: Vec<Expr> = Vec::with_capacity(collected.len() + 1);
        for (rest, coeff) in collected {
            if coeff.is_zero() {
                continue;
            }
            if coeff.is_one() {
                out.push(rest);
            } else {
                out.push(Expr::product([Expr::constant(coeff), rest]));
            }
        }
        out.sort();
        if !constant.is_zero() {
            out.push(Expr::constant(constant));
        }
        match out.len() {
            0 => Expr::zero(),
            1 => out.pop().unwrap(),
            _ => Expr::raw(Node::Sum(out)),
        }
    }

    /// `c · rest` split of a term, with `c` rational.
    fn split_coefficient(&self) -> (BigRational, Expr) {
        if let Node::Product(fs) = self.node() {
            if let Some(c) = fs[0].as_const() {
                let rest: Vec<Expr> = fs[1..].to_vec();
                let rest = if rest.len() == 1 {
                    rest.into_iter().next().unwrap()
                } else {
                    Expr::raw(Node::Product(rest))
                };
                return (c.clone(), rest);
            }
        }
        (BigRational::one(), self.clone())
    }

    /// Flattened, constant-folded product with equal bases merged.
    pub fn product(factors: impl IntoIterator<Item = Expr>) -> Expr {
        let mut constant = BigRational::one();
        let mut bases: BTreeMap<Expr, BigRational> = BTreeMap::new();
        fn push(
            f: &Expr,
            constant: &mut BigRational,
            bases: &mut BTreeMap<Expr, BigRational>,
        ) {
            match f.node() {
                Node::Const(c) => *constant *= c,
                Node::Product(xs) => {
                    for x in xs {
                        push(x, constant, bases);
                    }
                }
                Node::Power(b, q) => {
                    *bases.entry(b.clone()).or_insert_with(BigRational::zero) += q;
                }
                _ => {
                    *bases.entry(f.clone()).or_insert_with(BigRational::zero) +=
                        BigRational::one();
                }
            }
        }
        for f in factors {
            push(&f, &mut constant, &mut bases);
            if constant.is_zero() {
                return Expr::zero();
            }
        }
        let mut out: Vec<Expr> = Vec::with_capacity(bases.len() + 1);
        for (base, q) in bases {
            let p = Expr::pow(base, q);
            match p.node() {
                Node::Const(c) => constant *= c,
                Node::Product(xs) => {
                    // only reachable for numeric bases with fractional leftovers
                    for x in xs {
                        if let Some(c) = x.as_const() {
                            constant *= c;
                        } else {
                            out.push(x.clone());
                        }
                    }
                }
                _ => out.push(p),
            }
        }
        if constant.is_zero() {
            return Expr::zero();
        }
        if out.is_empty() {
            return Expr::constant(constant);
        }
        out.sort();
        if !constant.is_one() {
            out.insert(0, Expr::constant(constant));
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            Expr::raw(Node::Product(out))
        }
    }

    /// `base^q` with the integer-exponent simplifications that are valid
    /// wherever the left side is defined.
    pub fn pow(base: Expr, q: BigRational) -> Expr {
        if q.is_zero() {
            return Expr::one();
        }
        if q.is_one() {
            return base;
        }
        match base.node() {
            Node::Const(c) => {
                if c.is_one() {
                    return Expr::one();
                }
                if c.is_zero() {
                    if q.is_positive() {
                        return Expr::zero();
                    }
                    return Expr::raw(Node::Power(base, q));
                }
                if q.is_integer() {
                    if let Some(n) = q.to_integer().to_i32() {
                        return Expr::constant(pow_rational(c, n));
                    }
                }
                Expr::raw(Node::Power(base, q))
            }
            Node::Power(b, p) if q.is_integer() => Expr::pow(b.clone(), p * &q),
            Node::Product(fs) if q.is_integer() => {
                Expr::product(fs.iter().map(|f| Expr::pow(f.clone(), q.clone())))
            }
            _ => Expr::raw(Node::Power(base, q)),
        }
    }

    pub fn powi(base: Expr, n: i64) -> Expr {
        Expr::pow(base, BigRational::from_integer(BigInt::from(n)))
    }

    pub fn sqrt(a: Expr) -> Expr {
        Expr::pow(a, BigRational::new(BigInt::from(1), BigInt::from(2)))
    }

    pub fn recip(a: Expr) -> Expr {
        Expr::powi(a, -1)
    }

    pub fn apply(f: Func, args: Vec<Expr>) -> Expr {
        debug_assert_eq!(args.len(), f.arity());
        let a = &args[0];
        match f {
            Func::Sqrt => return Expr::sqrt(a.clone()),
            Func::Sin | Func::Tan | Func::Atan if a.is_zero() => return Expr::zero(),
            Func::Cos | Func::Exp if a.is_zero() => return Expr::one(),
            Func::Ln if a.is_one() => return Expr::zero(),
            Func::Atan2 if args[0].is_zero() && args[1].as_const().is_some_and(|c| c.is_positive()) => {
                return Expr::zero()
            }
            _ => {}
        }
        Expr::raw(Node::Apply(f, args))
    }

    pub fn sin(a: Expr) -> Expr {
        Expr::apply(Func::Sin, vec![a])
    }
    pub fn cos(a: Expr) -> Expr {
        Expr::apply(Func::Cos, vec![a])
    }
    pub fn tan(a: Expr) -> Expr {
        Expr::apply(Func::Tan, vec![a])
    }
    pub fn atan(a: Expr) -> Expr {
        Expr::apply(Func::Atan, vec![a])
    }
    pub fn atan2(y: Expr, x: Expr) -> Expr {
        Expr::apply(Func::Atan2, vec![y, x])
    }
    pub fn exp(a: Expr) -> Expr {
        Expr::apply(Func::Exp, vec![a])
    }
    pub fn ln(a: Expr) -> Expr {
        Expr::apply(Func::Ln, vec![a])
    }

    /// Rebuild bottom-up through the normalizing constructors.
    pub fn normalize(&self) -> Expr {
        self.map_children(&mut |c| c.normalize())
    }

    /// Rebuild this node from transformed children.
    pub fn map_children(&self, f: &mut impl FnMut(&Expr) -> Expr) -> Expr {
        match self.node() {
            Node::Const(c) => Expr::constant(c.clone()),
            Node::Pi => Expr::pi(),
            Node::Var(v) => Expr::var(v.clone()),
            Node::Sum(xs) => Expr::sum(xs.iter().map(&mut *f).collect::<Vec<_>>()),
            Node::Product(xs) => Expr::product(xs.iter().map(&mut *f).collect::<Vec<_>>()),
            Node::Power(b, q) => Expr::pow(f(b), q.clone()),
            Node::Apply(g, xs) => Expr::apply(*g, xs.iter().map(&mut *f).collect()),
        }
    }

    // ---- substitution ---------------------------------------------------

    /// Simultaneous substitution without cycle checks.
    pub fn subs(&self, bindings: &HashMap<Variable, Expr>) -> Expr {
        if bindings.is_empty() {
            return self.clone();
        }
        let mask = bindings.keys().fold(0u64, |acc, v| acc | var_bit(v));
        let mut memo: HashMap<usize, Expr> = HashMap::new();
        self.subs_rec(bindings, mask, &mut memo)
    }

    fn subs_rec(
        &self,
        bindings: &HashMap<Variable, Expr>,
        mask: u64,
        memo: &mut HashMap<usize, Expr>,
    ) -> Expr {
        if self.0.bloom & mask == 0 {
            return self.clone();
        }
        if let Node::Var(v) = self.node() {
            return bindings.get(v).cloned().unwrap_or_else(|| self.clone());
        }
        if let Some(e) = memo.get(&self.ptr_id()) {
            return e.clone();
        }
        let out = self.map_children(&mut |c| c.subs_rec(bindings, mask, memo));
        memo.insert(self.ptr_id(), out.clone());
        out
    }

    /// Simultaneous substitution; rejects bindings whose dependency graph
    /// has a cycle. Identity bindings `v ↦ v` are ignored.
    pub fn substitute(&self, bindings: &HashMap<Variable, Expr>) -> Result<Expr, ExprError> {
        check_acyclic(bindings)?;
        Ok(self.subs(bindings))
    }

    pub fn subs1(&self, v: &Variable, value: Expr) -> Expr {
        let mut m = HashMap::new();
        m.insert(v.clone(), value);
        self.subs(&m)
    }

    /// Replace every occurrence of a base name by the same-order variable of
    /// another name (used when renaming arbitrary functions).
    pub fn rename(&self, from: &str, to: &Variable) -> Expr {
        let map: HashMap<Variable, Expr> = self
            .variables()
            .into_iter()
            .filter(|v| v.name() == from)
            .map(|v| {
                let target = to.with_order(v.order());
                (v, Expr::var(target))
            })
            .collect();
        self.subs(&map)
    }

    /// Coefficient-wise expansion of products over sums (and positive integer
    /// powers of sums). Used to expose polynomial structure.
    pub fn expand(&self) -> Expr {
        match self.node() {
            Node::Const(_) | Node::Pi | Node::Var(_) => self.clone(),
            Node::Sum(xs) => Expr::sum(xs.iter().map(Expr::expand).collect::<Vec<_>>()),
            Node::Product(xs) => {
                let mut acc: Vec<Expr> = vec![Expr::one()];
                for x in xs {
                    let ex = x.expand();
                    let terms: Vec<Expr> = match ex.node() {
                        Node::Sum(ts) => ts.clone(),
                        _ => vec![ex.clone()],
                    };
                    let mut next = Vec::with_capacity(acc.len() * terms.len());
                    for a in &acc {
                        for t in &terms {
                            next.push(Expr::product([a.clone(), t.clone()]));
                        }
                    }
                    acc = next;
                }
                Expr::sum(acc)
            }
            Node::Power(b, q) => {
                let eb = b.expand();
                if q.is_integer() && q.is_positive() && matches!(eb.node(), Node::Sum(_)) {
                    let n = q.to_integer().to_usize().unwrap_or(0);
                    if n <= 8 {
                        let factors = vec![eb; n];
                        return Expr::product_unmerged_expand(&factors);
                    }
                }
                Expr::pow(eb, q.clone())
            }
            Node::Apply(f, xs) => Expr::apply(*f, xs.iter().map(Expr::expand).collect()),
        }
    }

    fn product_unmerged_expand(factors: &[Expr]) -> Expr {
        let mut acc: Vec<Expr> = vec![Expr::one()];
        for f in factors {
            let terms: Vec<Expr> = match f.node() {
                Node::Sum(ts) => ts.clone(),
                _ => vec![f.clone()],
            };
            let mut next = Vec::with_capacity(acc.len() * terms.len());
            for a in &acc {
                for t in &terms {
                    next.push(Expr::product([a.clone(), t.clone()]));
                }
            }
            acc = next;
        }
        Expr::sum(acc)
    }

    /// Terms of a sum (the expression itself otherwise).
    pub fn terms(&self) -> Vec<Expr> {
        match self.node() {
            Node::Sum(xs) => xs.clone(),
            _ => vec![self.clone()],
        }
    }
}

fn pow_rational(c: &BigRational, n: i32) -> BigRational {
    if n >= 0 {
        num_traits::pow(c.clone(), n as usize)
    } else {
        num_traits::pow(c.recip(), (-n) as usize)
    }
}

fn check_acyclic(bindings: &HashMap<Variable, Expr>) -> Result<(), ExprError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Visiting,
        Done,
    }
    let edges: HashMap<&Variable, Vec<Variable>> = bindings
        .iter()
        .filter(|(k, e)| e.as_var() != Some(*k))
        .map(|(k, e)| {
            let deps = e
                .variables()
                .into_iter()
                .filter(|v| bindings.contains_key(v))
                .collect();
            (k, deps)
        })
        .collect();
    let mut marks: HashMap<Variable, Mark> = HashMap::new();
    fn visit(
        v: &Variable,
        edges: &HashMap<&Variable, Vec<Variable>>,
        marks: &mut HashMap<Variable, Mark>,
    ) -> Result<(), ExprError> {
        match marks.get(v) {
            Some(Mark::Done) => return Ok(()),
            Some(Mark::Visiting) => return Err(ExprError::CyclicBindings(v.clone())),
            None => {}
        }
        marks.insert(v.clone(), Mark::Visiting);
        if let Some(ds) = edges.get(v) {
            for d in ds {
                visit(d, edges, marks)?;
            }
        }
        marks.insert(v.clone(), Mark::Done);
        Ok(())
    }
    for k in edges.keys() {
        visit(k, &edges, &mut marks)?;
    }
    Ok(())
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || (self.0.hash == other.0.hash && self.0.node == other.0.node)
    }
}

impl Eq for Expr {}

impl Hash for Expr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

impl PartialOrd for Expr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Expr {
    fn cmp(&self, other: &Self) -> Ordering {
        if Arc::ptr_eq(&self.0, &other.0) {
            return Ordering::Equal;
        }
        self.0.node.cmp(&other.0.node)
    }
}

impl From<Variable> for Expr {
    fn from(v: Variable) -> Self {
        Expr::var(v)
    }
}

impl From<i64> for Expr {
    fn from(i: i64) -> Self {
        Expr::int(i)
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $body:expr) => {
        impl $tr<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(self, rhs)
            }
        }
        impl $tr<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(self.clone(), rhs.clone())
            }
        }
        impl $tr<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(self, rhs.clone())
            }
        }
        impl $tr<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(self.clone(), rhs)
            }
        }
    };
}

binop!(Add, add, |a, b| Expr::sum([a, b]));
binop!(Sub, sub, |a, b| Expr::sum([a, Expr::product([Expr::int(-1), b])]));
binop!(Mul, mul, |a, b| Expr::product([a, b]));
binop!(Div, div, |a, b| Expr::product([a, Expr::recip(b)]));

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::product([Expr::int(-1), self])
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::product([Expr::int(-1), self.clone()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::var(Variable::free("x"))
    }
    fn y() -> Expr {
        Expr::var(Variable::free("y"))
    }

    #[test]
    fn sums_collect_and_fold() {
        let e = Expr::sum([x(), Expr::int(2), x(), Expr::int(-2)]);
        assert_eq!(e, Expr::int(2) * x());
        assert!((x() - x()).is_zero());
    }

    #[test]
    fn products_merge_powers() {
        let e = x() * Expr::powi(x(), 2) * Expr::recip(x());
        assert_eq!(e, Expr::powi(x(), 2));
        assert_eq!(Expr::int(0) * y(), Expr::zero());
    }

    #[test]
    fn sqrt_squared_collapses() {
        let s = Expr::sqrt(x() + y());
        assert_eq!(&s * &s, x() + y());
    }

    #[test]
    fn normalize_is_idempotent_on_mixed_tree() {
        let e = Expr::sin(x() * y() + x()) * (x() - Expr::ratio(1, 3)) / Expr::cos(y());
        assert_eq!(e.normalize(), e);
        assert_eq!(e.normalize().normalize(), e.normalize());
    }

    #[test]
    fn substitute_rejects_cycles() {
        let mut b = HashMap::new();
        b.insert(Variable::free("x"), y());
        b.insert(Variable::free("y"), x());
        assert!(matches!(
            (x() + y()).substitute(&b),
            Err(ExprError::CyclicBindings(_))
        ));
    }

    #[test]
    fn expand_distributes() {
        let e = (x() + y()) * (x() - y());
        assert_eq!(e.expand(), Expr::powi(x(), 2) - Expr::powi(y(), 2));
        let sq = Expr::powi(x() + Expr::one(), 2).expand();
        assert_eq!(sq, Expr::powi(x(), 2) + Expr::int(2) * x() + Expr::one());
    }
}
