//! Real projective solution sets of small ghost-homogeneous systems.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::expr::{Expr, ExprError, NumericPoly, Point, Poly, Sampler, Variable};
use crate::numeric;

use super::{HomogeneousSystem, RouchonError};

/// Largest ghost count handled.
pub const MAX_GHOSTS: usize = 4;

const ZERO_REL: f64 = 1e-10;
const NUMERIC_STARTS: usize = 200;
const GENERIC_BASE_POINTS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub enum Classification {
    /// Only the zero tuple solves the forms over the reals.
    EmptyOverReals { witness: Option<Expr>, note: String },
    /// Finitely many real projective points, listed as rays.
    Dim0 { rays: Vec<Vec<Expr>> },
    DimAtLeast1 { witness: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ClassKind {
    EmptyOverReals,
    Dim0,
    DimAtLeast1,
}

impl Classification {
    pub fn kind(&self) -> ClassKind {
        match self {
            Classification::EmptyOverReals { .. } => ClassKind::EmptyOverReals,
            Classification::Dim0 { .. } => ClassKind::Dim0,
            Classification::DimAtLeast1 { .. } => ClassKind::DimAtLeast1,
        }
    }

    fn signature(&self) -> (ClassKind, usize) {
        match self {
            Classification::Dim0 { rays } => (ClassKind::Dim0, rays.len()),
            c => (c.kind(), 0),
        }
    }
}

fn near_zero(x: f64, scale: f64) -> bool {
    x.abs() <= ZERO_REL * (1.0 + scale)
}

/// Coefficient values of a form at the base point.
fn numeric_form(p: &Poly, base: &Point) -> Result<NumericPoly, RouchonError> {
    Ok(p.at(base)?)
}

fn form_is_zero(p: &Poly, base: &Point) -> Result<bool, RouchonError> {
    let np = numeric_form(p, base)?;
    let scale = np.max_coeff();
    Ok(np.terms.iter().all(|(_, c)| near_zero(*c, 0.0)) || scale == 0.0)
}

/// Classification at one base point. Forms of degree ≤ 2 are solved
/// symbolically (rays come back as expressions over the system coordinates);
/// anything else goes through numeric continuation.
pub fn projective_solution_set(hs: &HomogeneousSystem, base: &Point) -> Result<Classification, RouchonError> {
    if hs.ghosts.len() > MAX_GHOSTS {
        return Err(RouchonError::ScopeExceeded(hs.ghosts.len()));
    }
    if hs.forms.is_empty() {
        return Ok(trivial_classification(hs.ghosts.len()));
    }
    if hs.degrees.iter().all(|d| *d <= 2) {
        if let Some(c) = symbolic(hs, base)? {
            return Ok(c);
        }
    }
    numeric_classification(hs, base)
}

fn trivial_classification(k: usize) -> Classification {
    match k {
        0 => Classification::EmptyOverReals {
            witness: None,
            note: "no ghosts".into(),
        },
        1 => Classification::Dim0 {
            rays: vec![vec![Expr::one()]],
        },
        _ => Classification::DimAtLeast1 {
            witness: format!("no forms; all {k} ghosts free"),
        },
    }
}

fn symbolic(hs: &HomogeneousSystem, base: &Point) -> Result<Option<Classification>, RouchonError> {
    let ghosts = &hs.ghosts;
    let mut free: Vec<Variable> = ghosts.clone();
    let mut solved: Vec<(Variable, Expr)> = Vec::new();
    let mut forms: Vec<Expr> = hs.forms.clone();

    loop {
        let mut pick = None;
        for (idx, f) in forms.iter().enumerate() {
            let p = Poly::from_expr(f, &free).ok_or_else(|| RouchonError::NotHomogeneous(f.to_string()))?;
            if p.is_zero() || form_is_zero(&p, base)? {
                continue;
            }
            if p.homogeneous_degree() == Some(1) {
                pick = Some((idx, p));
                break;
            }
        }
        let Some((idx, p)) = pick else { break };
        // coefficient of each free ghost
        let coeffs: Vec<Expr> = (0..free.len())
            .map(|i| {
                let mut m = vec![0; free.len()];
                m[i] = 1;
                p.terms.get(&m).cloned().unwrap_or_else(Expr::zero)
            })
            .collect();
        let mut best: Option<(usize, bool)> = None;
        for (i, c) in coeffs.iter().enumerate() {
            if c.is_zero() || near_zero(c.evaluate(base)?, 0.0) {
                continue;
            }
            let is_const = c.is_numeric();
            match best {
                Some((_, true)) if !is_const => {}
                _ => best = Some((i, is_const)),
            }
        }
        let Some((pi, _)) = best else {
            forms.remove(idx);
            continue;
        };
        let pivot = free[pi].clone();
        let rest = Expr::sum(
            coeffs
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != pi)
                .map(|(i, c)| c * Expr::var(free[i].clone())),
        );
        let value = (-rest / &coeffs[pi]).expand();
        forms.remove(idx);
        forms = forms.iter().map(|f| f.subs1(&pivot, value.clone()).expand()).collect();
        for (_, e) in solved.iter_mut() {
            *e = e.subs1(&pivot, value.clone()).expand();
        }
        solved.push((pivot.clone(), value));
        free.remove(pi);
    }

    let mut quads: Vec<Poly> = Vec::new();
    for f in &forms {
        let p = Poly::from_expr(f, &free).ok_or_else(|| RouchonError::NotHomogeneous(f.to_string()))?;
        if p.is_zero() || form_is_zero(&p, base)? {
            continue;
        }
        match p.homogeneous_degree() {
            Some(2) => quads.push(p),
            _ => return Ok(None),
        }
    }

    let free_rays: Vec<Vec<Expr>> = if quads.is_empty() {
        match free.len() {
            0 => {
                return Ok(Some(Classification::EmptyOverReals {
                    witness: None,
                    note: "linear forms force every ghost to zero".into(),
                }))
            }
            1 => vec![vec![Expr::one()]],
            k => {
                return Ok(Some(Classification::DimAtLeast1 {
                    witness: format!(
                        "{} ghosts free after linear elimination: {}",
                        k,
                        free.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(", ")
                    ),
                }))
            }
        }
    } else {
        match free.len() {
            0 => unreachable!("quadratic form in no variables"),
            1 => {
                return Ok(Some(Classification::EmptyOverReals {
                    witness: Some(monic(&quads[0], base)?),
                    note: "nonzero multiple of a square".into(),
                }))
            }
            2 => {
                let q = &quads[0];
                let coef = |m: [u32; 2]| q.terms.get(&m.to_vec()).cloned().unwrap_or_else(Expr::zero);
                let (a, b, c) = (coef([2, 0]), coef([1, 1]), coef([0, 2]));
                let (av, bv, cv) = (a.evaluate(base)?, b.evaluate(base)?, c.evaluate(base)?);
                let scale = av.abs().max(bv.abs()).max(cv.abs());
                let disc = bv * bv - 4.0 * av * cv;
                if disc < -ZERO_REL * (1.0 + scale * scale) {
                    return Ok(Some(Classification::EmptyOverReals {
                        witness: Some(monic(q, base)?),
                        note: "definite binary quadratic form".into(),
                    }));
                }
                let candidates: Vec<Vec<Expr>> = if near_zero(av, scale) {
                    vec![vec![Expr::one(), Expr::zero()], vec![c.clone(), -b.clone()]]
                } else if near_zero(disc, scale * scale) {
                    vec![vec![-b.clone(), Expr::int(2) * &a]]
                } else {
                    let root = Expr::sqrt(&b * &b - Expr::int(4) * &a * &c);
                    vec![
                        vec![-b.clone() + root.clone(), Expr::int(2) * &a],
                        vec![-b.clone() - root, Expr::int(2) * &a],
                    ]
                };
                let mut kept = Vec::new();
                'ray: for r in candidates {
                    let vals: Vec<f64> = r.iter().map(|e| e.evaluate(base)).collect::<Result<_, _>>()?;
                    if vals.iter().all(|v| near_zero(*v, 0.0)) {
                        continue;
                    }
                    for q in &quads[1..] {
                        let nq = numeric_form(q, base)?;
                        if !near_zero(nq.eval(&vals), nq.max_coeff() * norm2(&vals)) {
                            continue 'ray;
                        }
                    }
                    kept.push(r);
                }
                if kept.is_empty() {
                    return Ok(Some(Classification::EmptyOverReals {
                        witness: None,
                        note: "binary quadratics without a common real root".into(),
                    }));
                }
                kept
            }
            _ => return Ok(None),
        }
    };

    let mut rays = Vec::new();
    for fr in free_rays {
        let mut full: Vec<Expr> = Vec::with_capacity(ghosts.len());
        for g in ghosts {
            if let Some(i) = free.iter().position(|f| f == g) {
                full.push(fr[i].clone());
            } else {
                let (_, e) = solved.iter().find(|(s, _)| s == g).expect("every ghost solved or free");
                let map = free
                    .iter()
                    .cloned()
                    .zip(fr.iter().cloned())
                    .collect();
                full.push(e.subs(&map).expand());
            }
        }
        rays.push(normalize_ray(full, base)?);
    }
    rays.sort_by_key(|r| leading_index(r, base));
    dedup_rays(&mut rays, base)?;
    Ok(Some(Classification::Dim0 { rays }))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn leading_index(r: &[Expr], base: &Point) -> usize {
    r.iter()
        .position(|e| e.evaluate(base).map(|v| !near_zero(v, 0.0)).unwrap_or(true))
        .unwrap_or(r.len())
}

fn normalize_ray(r: Vec<Expr>, base: &Point) -> Result<Vec<Expr>, RouchonError> {
    let lead = leading_index(&r, base);
    let pivot = r[lead].clone();
    Ok(r
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            if i < lead {
                Expr::zero()
            } else if i == lead {
                Expr::one()
            } else {
                (e / &pivot).expand()
            }
        })
        .collect())
}

fn dedup_rays(rays: &mut Vec<Vec<Expr>>, base: &Point) -> Result<(), RouchonError> {
    let mut out: Vec<(Vec<Expr>, Vec<f64>)> = Vec::new();
    for r in rays.drain(..) {
        let vals: Vec<f64> = r.iter().map(|e| e.evaluate(base)).collect::<Result<_, ExprError>>()?;
        let dup = out
            .iter()
            .any(|(_, w)| w.iter().zip(&vals).all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs())));
        if !dup {
            out.push((r, vals));
        }
    }
    rays.extend(out.into_iter().map(|(r, _)| r));
    Ok(())
}

/// Form scaled so that its leading coefficient is one (when that
/// coefficient is a number).
fn monic(p: &Poly, base: &Point) -> Result<Expr, RouchonError> {
    let _ = base;
    let lead = p.terms.iter().next_back().map(|(_, c)| c.clone());
    Ok(match lead {
        Some(c) if c.is_numeric() && !c.is_zero() => (p.to_expr() / c).expand(),
        _ => p.to_expr(),
    })
}

// ---- numeric path -------------------------------------------------------

fn numeric_classification(hs: &HomogeneousSystem, base: &Point) -> Result<Classification, RouchonError> {
    let k = hs.ghosts.len();
    let polys: Vec<NumericPoly> = hs
        .forms
        .iter()
        .map(|f| {
            let p = Poly::from_expr(f, &hs.ghosts).ok_or_else(|| RouchonError::NotHomogeneous(f.to_string()))?;
            numeric_form(&p, base)
        })
        .collect::<Result<_, _>>()?;
    for (f, p) in hs.forms.iter().zip(&polys) {
        if let Some(w) = definite_witness(p) {
            let _ = w;
            let poly = Poly::from_expr(f, &hs.ghosts).expect("checked above");
            return Ok(Classification::EmptyOverReals {
                witness: Some(monic(&poly, base)?),
                note: "definite form".into(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut sols: Vec<Vec<f64>> = Vec::new();
    let mut positive_dim = false;
    for _ in 0..NUMERIC_STARTS {
        let start: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let Some(x) = newton_on_sphere(&polys, start) else { continue };
        if sols.iter().any(|s| same_projective_point(s, &x)) {
            continue;
        }
        let rows: Vec<Vec<f64>> = polys.iter().map(|p| p.grad(&x)).chain([x.clone()]).collect();
        match numeric::rank(&rows).rank() {
            Some(r) if r >= k => {}
            _ => positive_dim = true,
        }
        sols.push(x);
    }
    if positive_dim {
        return Ok(Classification::DimAtLeast1 {
            witness: "numeric: singular Jacobian at a real solution".into(),
        });
    }
    if sols.is_empty() {
        return Ok(Classification::EmptyOverReals {
            witness: None,
            note: format!("numeric: no real solution from {NUMERIC_STARTS} starts"),
        });
    }
    let mut rays: Vec<Vec<Expr>> = sols
        .into_iter()
        .map(|s| {
            let lead = s.iter().position(|v| v.abs() > 1e-9).unwrap_or(0);
            s.iter().map(|v| Expr::from_f64(v / s[lead])).collect()
        })
        .collect();
    rays.sort_by_key(|r| r.iter().position(|e| !e.is_zero()).unwrap_or(k));
    Ok(Classification::Dim0 { rays })
}

fn same_projective_point(a: &[f64], b: &[f64]) -> bool {
    let plus = a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6);
    let minus = a.iter().zip(b).all(|(x, y)| (x + y).abs() < 1e-6);
    plus || minus
}

/// Levenberg-Marquardt on `{forms = 0, |x|² = 1}`.
fn newton_on_sphere(polys: &[NumericPoly], mut x: Vec<f64>) -> Option<Vec<f64>> {
    let k = x.len();
    let scale = polys.iter().map(NumericPoly::max_coeff).fold(0.0, f64::max).max(1.0);
    let residual = |x: &[f64]| -> Vec<f64> {
        let mut r: Vec<f64> = polys.iter().map(|p| p.eval(x) / scale).collect();
        r.push(norm2(x) - 1.0);
        r
    };
    let mut lambda = 1e-3;
    let mut r = residual(&x);
    for _ in 0..200 {
        let rn = norm2(&r);
        if rn < 1e-26 {
            return Some(x);
        }
        let mut jrows: Vec<Vec<f64>> = polys.iter().map(|p| p.grad(&x).iter().map(|g| g / scale).collect()).collect();
        jrows.push(x.iter().map(|v| 2.0 * v).collect());
        let j = DMatrix::from_fn(jrows.len(), k, |i, c| jrows[i][c]);
        let rv = DVector::from_column_slice(&r);
        let jt = j.transpose();
        let a = &jt * &j + DMatrix::identity(k, k) * lambda;
        let g = &jt * rv;
        let step = a.lu().solve(&g)?;
        let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a - b).collect();
        let rc = residual(&cand);
        if norm2(&rc) < rn {
            x = cand;
            r = rc;
            lambda = (lambda * 0.3).max(1e-12);
        } else {
            lambda *= 10.0;
            if lambda > 1e8 {
                break;
            }
        }
    }
    (norm2(&r) < 1e-24).then_some(x)
}

/// Definiteness certificate: a quadratic form with a definite Gram matrix,
/// or a form whose monomials are all even pure powers of one sign that
/// cover every ghost.
fn definite_witness(p: &NumericPoly) -> Option<()> {
    let k = p.nvars;
    let deg = p.degree();
    if deg == 2 {
        let mut g = DMatrix::<f64>::zeros(k, k);
        for (m, c) in &p.terms {
            let idx: Vec<usize> = m
                .iter()
                .enumerate()
                .flat_map(|(i, e)| std::iter::repeat(i).take(*e as usize))
                .collect();
            if idx.len() != 2 {
                return None;
            }
            if idx[0] == idx[1] {
                g[(idx[0], idx[0])] += c;
            } else {
                g[(idx[0], idx[1])] += c / 2.0;
                g[(idx[1], idx[0])] += c / 2.0;
            }
        }
        let eig = g.symmetric_eigen().eigenvalues;
        let max = eig.iter().map(|e| e.abs()).fold(0.0, f64::max);
        let tol = 1e-10 * max.max(1.0);
        if eig.iter().all(|e| *e > tol) || eig.iter().all(|e| *e < -tol) {
            return Some(());
        }
        return None;
    }
    let mut sign = 0.0;
    let mut covered = BTreeSet::new();
    for (m, c) in &p.terms {
        let nz: Vec<usize> = (0..k).filter(|i| m[*i] > 0).collect();
        if nz.len() != 1 || m[nz[0]] % 2 != 0 {
            return None;
        }
        if sign == 0.0 {
            sign = c.signum();
        } else if c.signum() != sign {
            return None;
        }
        covered.insert(nz[0]);
    }
    (covered.len() == k).then_some(())
}

// ---- generic classification ---------------------------------------------

/// Classification repeated at several random base points.
#[derive(Clone, Debug)]
pub struct GenericClassification {
    pub classification: Classification,
    pub base_point: Point,
    /// True if every base point produced the same kind (and ray count).
    pub agreed: bool,
    pub base_points: usize,
}

/// Runs [`projective_solution_set`] at `GENERIC_BASE_POINTS` seeded base
/// points over the non-ghost coordinates of the forms and reports the first
/// result together with whether all agree.
pub fn classify_generic(hs: &HomogeneousSystem, sampler: &Sampler, seed: u64) -> Result<GenericClassification, RouchonError> {
    if hs.ghosts.len() > MAX_GHOSTS {
        return Err(RouchonError::ScopeExceeded(hs.ghosts.len()));
    }
    let coords: BTreeSet<Variable> = hs
        .forms
        .iter()
        .flat_map(|f| f.variables())
        .filter(|v| !v.is_ghost())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first: Option<(Classification, Point)> = None;
    let mut agreed = true;
    let mut done = 0;
    let mut attempts = 0;
    while done < GENERIC_BASE_POINTS {
        attempts += 1;
        if attempts > 100 * GENERIC_BASE_POINTS {
            return Err(RouchonError::Expr(ExprError::NoValidSample(attempts)));
        }
        let base = sampler.draw(&coords, &mut rng);
        let c = match projective_solution_set(hs, &base) {
            Ok(c) => c,
            Err(RouchonError::Expr(ExprError::Domain(_))) => continue,
            Err(e) => return Err(e),
        };
        match &first {
            None => first = Some((c, base)),
            Some((f, _)) => {
                if f.signature() != c.signature() {
                    agreed = false;
                }
            }
        }
        done += 1;
    }
    let (classification, base_point) = first.expect("at least one base point");
    Ok(GenericClassification {
        classification,
        base_point,
        agreed,
        base_points: done,
    })
}
