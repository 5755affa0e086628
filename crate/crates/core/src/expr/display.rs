//! Infix printing in the model-file expression syntax, so that printed
//! expressions parse back to the same normal form.

use std::fmt::{self, Write};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use super::{Expr, Node};

const PREC_SUM: u8 = 0;
const PREC_PRODUCT: u8 = 1;
const PREC_POWER: u8 = 3;

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self, PREC_SUM)
    }
}

/// Sign-stripped view of a term: `(negative, magnitude)`.
fn split_sign(e: &Expr) -> (bool, Expr) {
    match e.node() {
        Node::Const(c) if c.is_negative() => (true, Expr::constant(-c)),
        Node::Product(fs) => match fs[0].as_const() {
            Some(c) if c.is_negative() => {
                let mut rest = fs.clone();
                rest[0] = Expr::constant(-c);
                (true, Expr::product(rest))
            }
            _ => (false, e.clone()),
        },
        _ => (false, e.clone()),
    }
}

fn write_expr<W: Write>(f: &mut W, e: &Expr, prec: u8) -> fmt::Result {
    match e.node() {
        Node::Const(c) => write_const(f, c, prec),
        Node::Pi => f.write_str("pi"),
        Node::Var(v) => write!(f, "{v}"),
        Node::Sum(ts) => {
            if prec > PREC_SUM {
                f.write_char('(')?;
            }
            for (i, t) in ts.iter().enumerate() {
                let (neg, mag) = split_sign(t);
                match (i, neg) {
                    (0, true) => f.write_char('-')?,
                    (0, false) => {}
                    (_, true) => f.write_str(" - ")?,
                    (_, false) => f.write_str(" + ")?,
                }
                write_expr(f, &mag, PREC_PRODUCT)?;
            }
            if prec > PREC_SUM {
                f.write_char(')')?;
            }
            Ok(())
        }
        Node::Product(_) | Node::Power(..) => write_product(f, e, prec),
        Node::Apply(func, args) => {
            write!(f, "{}(", func.name())?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write_expr(f, a, PREC_SUM)?;
            }
            f.write_char(')')
        }
    }
}

fn write_const<W: Write>(f: &mut W, c: &BigRational, prec: u8) -> fmt::Result {
    let simple = c.is_integer() && !c.is_negative();
    if simple {
        return write!(f, "{}", c.numer());
    }
    let wrap = prec > PREC_SUM;
    if wrap {
        f.write_char('(')?;
    }
    if c.is_integer() {
        write!(f, "{}", c.numer())?;
    } else {
        write!(f, "{}/{}", c.numer(), c.denom())?;
    }
    if wrap {
        f.write_char(')')?;
    }
    Ok(())
}

/// Factor with its exponent as seen inside a product.
fn as_power(e: &Expr) -> (Expr, BigRational) {
    match e.node() {
        Node::Power(b, q) => (b.clone(), q.clone()),
        _ => (e.clone(), BigRational::one()),
    }
}

fn write_power<W: Write>(f: &mut W, base: &Expr, q: &BigRational) -> fmt::Result {
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    if q.is_one() {
        return write_expr(f, base, PREC_POWER);
    }
    if *q == half {
        f.write_str("sqrt(")?;
        write_expr(f, base, PREC_SUM)?;
        return f.write_char(')');
    }
    write_expr(f, base, PREC_POWER + 1)?;
    if q.is_integer() && q.is_positive() {
        write!(f, "^{}", q.numer())
    } else if q.is_integer() {
        write!(f, "^({})", q.numer())
    } else {
        write!(f, "^({}/{})", q.numer(), q.denom())
    }
}

fn write_product<W: Write>(f: &mut W, e: &Expr, prec: u8) -> fmt::Result {
    let factors: Vec<Expr> = match e.node() {
        Node::Product(fs) => fs.clone(),
        _ => vec![e.clone()],
    };
    let mut coeff = BigRational::one();
    let mut num: Vec<(Expr, BigRational)> = Vec::new();
    let mut den: Vec<(Expr, BigRational)> = Vec::new();
    for x in &factors {
        if let Some(c) = x.as_const() {
            coeff *= c;
            continue;
        }
        let (b, q) = as_power(x);
        if q.is_negative() {
            den.push((b, -q));
        } else {
            num.push((b, q));
        }
    }
    let negative = coeff.is_negative();
    let coeff = coeff.abs();
    let wrap = prec > PREC_PRODUCT || (negative && prec > PREC_SUM);
    if wrap {
        f.write_char('(')?;
    }
    if negative {
        f.write_char('-')?;
    }
    let mut first = true;
    if !coeff.numer().is_one() || num.is_empty() {
        write!(f, "{}", coeff.numer())?;
        first = false;
    }
    for (b, q) in &num {
        if !first {
            f.write_char('*')?;
        }
        write_power(f, b, q)?;
        first = false;
    }
    let den_count = den.len() + usize::from(!coeff.denom().is_one());
    if den_count > 0 {
        f.write_char('/')?;
        if den_count > 1 {
            f.write_char('(')?;
        }
        let mut first = true;
        if !coeff.denom().is_one() {
            write!(f, "{}", coeff.denom())?;
            first = false;
        }
        for (b, q) in &den {
            if !first {
                f.write_char('*')?;
            }
            write_power(f, b, q)?;
            first = false;
        }
        if den_count > 1 {
            f.write_char(')')?;
        }
    }
    if coeff.is_zero() {
        // unreachable for normalized products
    }
    if wrap {
        f.write_char(')')?;
    }
    Ok(())
}
