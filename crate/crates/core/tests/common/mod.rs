#![allow(dead_code)]

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use flatcheck::diffiety::{sample_jet, total_derivative, Parametrization, Pullback, SystemDef};
use flatcheck::expr::{Expr, Func, Poly, VarKind, Variable};
use flatcheck::frontend::{corpus, parse_model, ModelFile};
use flatcheck::numeric;
use flatcheck::reduction::{first_integrals, verify_integrals, VectorField};
use flatcheck::rouchon::{GhostOperator, GHOST_KMAX};

pub fn model(name: &str) -> ModelFile {
    parse_model(corpus::fixture(name).expect("bundled fixture")).expect("fixture parses")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random smooth expression over `leaves`, defined everywhere.
pub fn random_expr(leaves: &[Variable], depth: u32, rng: &mut ChaCha8Rng) -> Expr {
    if depth == 0 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.8) {
            Expr::var(leaves[rng.gen_range(0..leaves.len())].clone())
        } else {
            Expr::int(rng.gen_range(-3..=3))
        };
    }
    let op = rng.gen_range(0..7);
    let mut sub = || random_expr(leaves, depth - 1, rng);
    match op {
        0 => sub() + sub(),
        1 => sub() - sub(),
        2 => sub() * sub(),
        3 => Expr::apply(Func::Sin, vec![sub()]),
        4 => Expr::apply(Func::Atan, vec![sub()]),
        5 => Expr::powi(sub(), 2),
        _ => Expr::recip(Expr::int(1) + Expr::powi(sub(), 2)),
    }
}

pub fn all_charts(m: &ModelFile) -> Vec<(&SystemDef, &Parametrization, usize)> {
    let mut out = Vec::new();
    for p in &m.parametrizations {
        let sys = m.system(&p.system).expect("resolved");
        for i in 0..p.charts().len() {
            out.push((sys, p, i));
        }
    }
    out
}

pub fn fixtures_with_params() -> Vec<ModelFile> {
    corpus::FIXTURES.iter().map(|f| model(f.name)).filter(|m| !m.parametrizations.is_empty()).collect()
}

/// Largest relative mismatch of `φ*(δe)` against `δ(φ*e)` over random
/// expressions on one chart.
pub fn commutation(sys: &SystemDef, p: &Parametrization, chart: usize, exprs: usize, seed: u64) -> f64 {
    let ch = &p.charts()[chart];
    let pb = Pullback::new(sys, ch);
    let mut leaves: Vec<Variable> = sys.vars();
    for f in sys.free_names() {
        leaves.push(Variable::free(f).shifted(1));
    }
    for (u, _) in sys.exo() {
        leaves.push(Variable::exogenous(u));
    }
    let mut g = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..exprs {
        let e = random_expr(&leaves, 3, &mut g);
        let lhs = pb.pull(&total_derivative(&e, &sys.context()).unwrap()).unwrap();
        let rhs = total_derivative(&pb.pull(&e).unwrap(), pb.trivial()).unwrap();
        for _ in 0..3 {
            let jp = sample_jet(p, sys, ch, 8, &mut g).unwrap();
            let (a, sa) = lhs.evaluate_scaled(&jp.values).unwrap();
            let (b, sb) = rhs.evaluate_scaled(&jp.values).unwrap();
            worst = worst.max((a - b).abs() / (1.0 + sa.max(sb)));
        }
    }
    worst
}

/// Random polynomial of degree `d` in the targets with coefficients in `coeffs`.
pub fn random_poly(targets: &[Variable], coeffs: &[Variable], d: u32, rng: &mut ChaCha8Rng) -> Expr {
    let mut terms = Vec::new();
    // a guaranteed top-degree monomial
    let mut top = Expr::int(rng.gen_range(1..=3));
    for _ in 0..d {
        top = top * Expr::var(targets[rng.gen_range(0..targets.len())].clone());
    }
    terms.push(top);
    for _ in 0..4 {
        let deg = rng.gen_range(0..=d);
        let mut t = if rng.gen_bool(0.5) {
            Expr::var(coeffs[rng.gen_range(0..coeffs.len())].clone())
        } else {
            Expr::int(rng.gen_range(-3..=3))
        };
        for _ in 0..deg {
            t = t * Expr::var(targets[rng.gen_range(0..targets.len())].clone());
        }
        terms.push(t);
    }
    Expr::sum(terms)
}

/// Generated polynomials whose ghost iterates stop exactly after their degree.
pub fn nilpotency(count: usize, seed: u64) -> Result<(), String> {
    let targets = vec![
        Variable::free("x1").shifted(1),
        Variable::free("x2").shifted(1),
        Variable::state("x3").shifted(1),
    ];
    let coeffs = vec![Variable::free("x1"), Variable::free("x2"), Variable::state("x3")];
    let op = GhostOperator::new(targets.clone());
    let mut g = rng(seed);
    for k in 0..count {
        let d = g.gen_range(1..=GHOST_KMAX);
        let p = random_poly(&targets, &coeffs, d, &mut g);
        let degree = Poly::from_expr(&p.expand(), &targets).ok_or("not polynomial")?.degree();
        let it = op.iterate(&p, GHOST_KMAX).map_err(|e| format!("poly {k}: {e}"))?;
        if it.len() != degree as usize + 1 {
            return Err(format!("poly {k} of degree {degree}: {} iterates", it.len()));
        }
        if !op.apply(it.last().unwrap()).is_zero() {
            return Err(format!("poly {k}: last iterate not annihilated"));
        }
    }
    Ok(())
}

/// First integrals of random fields in the straightenable class: annihilated
/// and of rank `n − 1`, checked numerically apart from the library's check.
pub fn integrals(count: usize, seed: u64) -> Result<(), String> {
    let x: Vec<Variable> = (1..=4).map(|i| Variable::free(&format!("x{i}"))).collect();
    let mut g = rng(seed);
    for k in 0..count {
        let pivot = Expr::int(*[1, -2, 3].get(g.gen_range(0..3)).unwrap());
        let p = Expr::var(x[0].clone());
        let c3 = Expr::var(x[1].clone()) * Expr::powi(p.clone(), g.gen_range(0..3)) + Expr::int(g.gen_range(-2..=2));
        let c4 = Expr::apply(Func::Sin, vec![Expr::var(x[1].clone())]) * p.clone() + Expr::var(x[2].clone());
        let vf = VectorField::new(x.clone(), vec![pivot, Expr::zero(), c3, c4]).map_err(|e| e.to_string())?;
        let fi = first_integrals(&vf).map_err(|e| format!("field {k}: {e}"))?;
        verify_integrals(&vf, &fi).map_err(|e| e.to_string())?;
        check_integrals(&vf, &fi.exprs(), &x, &mut g).map_err(|e| format!("field {k}: {e}"))?;
    }
    Ok(())
}

fn check_integrals(vf: &VectorField, ys: &[Expr], x: &[Variable], g: &mut ChaCha8Rng) -> Result<(), String> {
    if ys.len() != x.len() - 1 {
        return Err(format!("{} integrals", ys.len()));
    }
    for _ in 0..5 {
        let pt: flatcheck::expr::Point = x.iter().map(|v| (v.clone(), g.gen_range(-1.0..1.0))).collect();
        let mut rows = Vec::new();
        for y in ys {
            let grad: Vec<f64> = x.iter().map(|v| y.partial(v).evaluate(&pt).unwrap()).collect();
            let lie: f64 = x
                .iter()
                .zip(&grad)
                .map(|(v, d)| vf.coefficient(v).unwrap().evaluate(&pt).unwrap() * d)
                .sum();
            if lie.abs() > 1e-9 {
                return Err(format!("L_X {y} = {lie}"));
            }
            rows.push(grad);
        }
        if numeric::rank(&rows).rank() != Some(x.len() - 1) {
            return Err("integrals are dependent".into());
        }
    }
    Ok(())
}

/// `∂²φ*(x_i')/∂(z1^(r+1))²` on every chart where `z1` occurs.
pub fn second_derivative_identity(m: &ModelFile, samples: usize) -> Result<usize, String> {
    let mut checked = 0;
    for (sys, p, i) in all_charts(m) {
        let ch = &p.charts()[i];
        let pb = Pullback::new(sys, ch);
        let z1 = &p.arbitrary()[0];
        let images: Vec<Expr> = sys.vars().iter().map(|v| pb.image(v).unwrap()).collect();
        let Some(r) = images.iter().filter_map(|e| flatcheck::diffiety::ord(e, z1)).max() else { continue };
        let zr = Variable::new(z1.as_str(), VarKind::Arbitrary, r + 1);
        let d2: Vec<Expr> = images
            .iter()
            .map(|e| total_derivative(e, pb.trivial()).unwrap().partial(&zr).partial(&zr))
            .collect();
        let mut g = rng(7);
        for _ in 0..samples {
            let jp = sample_jet(p, sys, ch, 8, &mut g).unwrap();
            for (v, e) in sys.vars().iter().zip(&d2) {
                let (val, scale) = e.evaluate_scaled(&jp.values).map_err(|e| e.to_string())?;
                if val.abs() > 1e-8 * (1.0 + scale) {
                    return Err(format!("{}:{} {}': {val}", p.name, ch.name, v.name()));
                }
            }
        }
        checked += 1;
    }
    Ok(checked)
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64())
}
