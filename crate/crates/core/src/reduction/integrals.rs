//! First integrals of vector fields in the triangular-quadrature class.

use std::collections::{BTreeSet, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::expr::{depends_on, equivalent, EquivOptions, Expr, ExprError, Poly, Sampler, VarKind, Variable};
use crate::numeric;

use super::ReductionError;

const RANK_SAMPLES: usize = 10;

/// `Σ a_i ∂_{x_i}` over a list of coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub coords: Vec<Variable>,
    pub coeffs: Vec<Expr>,
}

impl VectorField {
    pub fn new(coords: Vec<Variable>, coeffs: Vec<Expr>) -> Result<Self, ReductionError> {
        assert_eq!(coords.len(), coeffs.len());
        if coeffs.iter().all(Expr::is_zero) {
            return Err(ReductionError::PivotVanishes);
        }
        Ok(VectorField { coords, coeffs })
    }

    pub fn apply(&self, y: &Expr) -> Expr {
        Expr::sum(self.coords.iter().zip(&self.coeffs).map(|(x, a)| a * y.partial(x)))
    }

    pub fn coefficient(&self, x: &Variable) -> Option<&Expr> {
        self.coords.iter().position(|c| c == x).map(|i| &self.coeffs[i])
    }
}

/// `n − 1` invariants of a field together with the inverse change of
/// coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct FirstIntegrals {
    pub pivot: Variable,
    /// Coefficient of the pivot before normalization (must not vanish).
    pub pivot_coefficient: Expr,
    /// `(coordinate straightened, invariant)` in coordinate order.
    pub integrals: Vec<(Variable, Expr)>,
    /// Non-pivot coordinate ↦ expression in placeholders and the pivot.
    inverse: Vec<(Variable, Expr)>,
    placeholders: Vec<Variable>,
}

impl FirstIntegrals {
    pub fn exprs(&self) -> Vec<Expr> {
        self.integrals.iter().map(|(_, e)| e.clone()).collect()
    }

    /// Coordinates expressed through the invariant values `symbols` (one per
    /// integral, same order) and the pivot.
    pub fn inverse(&self, symbols: &[Expr]) -> HashMap<Variable, Expr> {
        assert_eq!(symbols.len(), self.placeholders.len());
        let map: HashMap<Variable, Expr> = self
            .placeholders
            .iter()
            .cloned()
            .zip(symbols.iter().cloned())
            .collect();
        self.inverse
            .iter()
            .map(|(x, e)| (x.clone(), e.subs(&map)))
            .collect()
    }
}

fn placeholder(k: usize) -> Variable {
    Variable::new(format!("__w{k}"), VarKind::Arbitrary, 0)
}

/// First integrals with the pivot chosen automatically: the first coordinate
/// with a constant nonzero coefficient, else the first nonzero one.
pub fn first_integrals(vf: &VectorField) -> Result<FirstIntegrals, ReductionError> {
    let pivot = vf
        .coeffs
        .iter()
        .position(|a| a.is_numeric() && !a.is_zero())
        .or_else(|| vf.coeffs.iter().position(|a| !a.is_zero()))
        .ok_or(ReductionError::PivotVanishes)?;
    first_integrals_with_pivot(vf, pivot)
}

/// Triangular quadrature: after dividing by the pivot coefficient, every
/// other coefficient must be a polynomial in the pivot whose coefficients
/// only involve coordinates already straightened (or parameters).
pub fn first_integrals_with_pivot(vf: &VectorField, pivot: usize) -> Result<FirstIntegrals, ReductionError> {
    let n = vf.coords.len();
    let a_p = vf.coeffs[pivot].clone();
    if a_p.is_zero() {
        return Err(ReductionError::PivotVanishes);
    }
    let xp = vf.coords[pivot].clone();
    let normalized: Vec<Expr> = vf.coeffs.iter().map(|a| (a / &a_p).expand()).collect();
    if depends_on(&a_p, &xp) && normalized.iter().enumerate().any(|(i, a)| i != pivot && !a.is_zero()) {
        // dividing by a pivot-dependent coefficient is fine as long as the
        // class condition below holds; nothing extra to do here
    }

    let mut ph_of: Vec<Option<Variable>> = vec![None; n];
    let mut antideriv: Vec<Option<Expr>> = vec![None; n];
    let mut back: HashMap<Variable, Expr> = HashMap::new();
    let mut order: Vec<usize> = Vec::new();
    let mut next_ph = 0;
    for i in 0..n {
        if i != pivot && normalized[i].is_zero() {
            let w = placeholder(next_ph);
            next_ph += 1;
            back.insert(vf.coords[i].clone(), Expr::var(w.clone()));
            ph_of[i] = Some(w);
            antideriv[i] = Some(Expr::zero());
            order.push(i);
        }
    }
    let coord_set: BTreeSet<Variable> = vf.coords.iter().cloned().collect();
    loop {
        let mut progress = false;
        for i in 0..n {
            if i == pivot || ph_of[i].is_some() {
                continue;
            }
            let a = normalized[i].subs(&back).expand();
            let unresolved = a
                .variables()
                .into_iter()
                .any(|v| v != xp && coord_set.contains(&v));
            if unresolved {
                continue;
            }
            let Some(poly) = Poly::from_expr(&a, std::slice::from_ref(&xp)) else { continue };
            let mut terms = Vec::new();
            for (m, c) in &poly.terms {
                let k = m[0] as i64;
                let q = BigRational::new(BigInt::from(1), BigInt::from(k + 1));
                terms.push(Expr::constant(q) * c * Expr::powi(Expr::var(xp.clone()), k + 1));
            }
            let big_a = Expr::sum(terms).expand();
            let w = placeholder(next_ph);
            next_ph += 1;
            back.insert(vf.coords[i].clone(), (Expr::var(w.clone()) + &big_a).expand());
            ph_of[i] = Some(w);
            antideriv[i] = Some(big_a);
            order.push(i);
            progress = true;
        }
        if !progress {
            break;
        }
    }
    if let Some(i) = (0..n).find(|i| *i != pivot && ph_of[*i].is_none()) {
        return Err(ReductionError::UnsupportedClass(format!(
            "coefficient of ∂_{} is {}",
            vf.coords[i], normalized[i]
        )));
    }

    // placeholders back to coordinates, in resolution order
    let mut forward: HashMap<Variable, Expr> = HashMap::new();
    for &i in &order {
        let w = ph_of[i].clone().expect("resolved");
        let a = antideriv[i].clone().expect("resolved").subs(&forward);
        forward.insert(w, (Expr::var(vf.coords[i].clone()) - a).expand());
    }
    let mut integrals = Vec::new();
    let mut placeholders = Vec::new();
    let mut inverse = Vec::new();
    for i in 0..n {
        if i == pivot {
            continue;
        }
        let w = ph_of[i].clone().expect("resolved");
        integrals.push((vf.coords[i].clone(), forward[&w].clone()));
        placeholders.push(w);
        inverse.push((vf.coords[i].clone(), back[&vf.coords[i]].clone()));
    }
    let fi = FirstIntegrals {
        pivot: xp,
        pivot_coefficient: a_p,
        integrals,
        inverse,
        placeholders,
    };
    verify(vf, &fi)?;
    Ok(fi)
}

/// Annihilation by `equivalent` and numeric Jacobian rank `n − 1`.
pub fn verify(vf: &VectorField, fi: &FirstIntegrals) -> Result<(), ReductionError> {
    for (x, y) in &fi.integrals {
        let xy = vf.apply(y);
        if !xy.is_zero() {
            let ok = match equivalent(&xy, &Expr::zero(), &EquivOptions::default()) {
                Ok(b) => b,
                Err(ExprError::NoValidSample(_)) => true,
                Err(e) => return Err(e.into()),
            };
            if !ok {
                return Err(ReductionError::IntegralCheck(format!("field does not annihilate the invariant for {x}: {y}")));
            }
        }
    }
    let n = vf.coords.len();
    let grads: Vec<Vec<Expr>> = fi.integrals.iter().map(|(_, y)| y.gradient(&vf.coords)).collect();
    let vars: BTreeSet<Variable> = grads
        .iter()
        .flatten()
        .flat_map(|e| e.variables())
        .chain(vf.coords.iter().cloned())
        .collect();
    let sampler = Sampler::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut done = 0;
    for _ in 0..RANK_SAMPLES * 50 {
        if done == RANK_SAMPLES {
            break;
        }
        let p = sampler.draw(&vars, &mut rng);
        let rows: Result<Vec<Vec<f64>>, ExprError> = grads
            .iter()
            .map(|row| row.iter().map(|e| e.evaluate(&p)).collect())
            .collect();
        let Ok(rows) = rows else { continue };
        match numeric::rank(&rows).rank() {
            Some(r) if r == n - 1 => done += 1,
            Some(r) => {
                return Err(ReductionError::IntegralCheck(format!("invariants have Jacobian rank {r}, expected {}", n - 1)))
            }
            None => continue,
        }
    }
    Ok(())
}
