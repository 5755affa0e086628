//! Parametrization-side consequences of the ghost operator, checked
//! numerically on sampled jets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffiety::{ord, sample_jet_where, DiffietyError, JetPoint, Parametrization, Pullback, SystemDef};
use crate::expr::{Expr, ExprError, VarKind, Variable};
use crate::Verdict;

use super::ruled::GHOST_KMAX;
use super::{GhostOperator, RouchonError, RuledForm};

#[derive(Clone, Debug)]
pub struct ChecksOptions {
    pub trials: usize,
    pub tol: f64,
    pub jet_order: u32,
    pub seed: u64,
}

impl Default for ChecksOptions {
    fn default() -> Self {
        ChecksOptions {
            trials: 50,
            tol: 1e-8,
            jet_order: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResidual {
    pub name: String,
    pub max_residual: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChartChecks {
    pub chart: String,
    /// `max_i ord_{z1} φ*(x_i)`; absent when `z1` does not occur.
    pub r: Option<u32>,
    /// Orders `e_i` of the relation per system variable (`None` is −∞).
    pub orders: Vec<(String, Option<u32>)>,
    pub verdict: Verdict,
    pub reason: Option<String>,
    /// The tangent tuple `∂_{z1^(r+e_i)} φ*(x_i^(e_i))` in target order.
    pub tuple: Vec<(String, String)>,
    pub checks: Vec<CheckResidual>,
    /// Largest tuple magnitude seen; zero means check (a) was vacuous.
    pub max_tuple: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RouchonReport {
    pub z1: String,
    pub charts: Vec<ChartChecks>,
    pub verdict: Verdict,
}

/// Checks (a), (b) and, with a ruled form, (c) on every chart of `p`.
///
/// `relation` is the single relation whose ghost iterates are annihilated
/// by the tangent tuple; with `None` the state equations are used one at a
/// time.
pub fn rouchon_checks(
    sys: &SystemDef,
    p: &Parametrization,
    relation: Option<&Expr>,
    ruled: Option<&RuledForm>,
    z1: &str,
    opts: &ChecksOptions,
) -> Result<RouchonReport, RouchonError> {
    if !p.arbitrary().iter().any(|z| z == z1) {
        return Err(RouchonError::Diffiety(DiffietyError::UnknownVariable(z1.to_string())));
    }
    let relations: Vec<Expr> = match relation {
        Some(h) => vec![h.clone()],
        None => sys.equations(),
    };
    let mut charts = Vec::new();
    for idx in 0..p.charts().len() {
        charts.push(check_chart(sys, p, idx, &relations, ruled, z1, opts)?);
    }
    let verdict = if charts.iter().any(|c| c.verdict == Verdict::Fail) {
        Verdict::Fail
    } else if charts.iter().all(|c| c.verdict == Verdict::NotApplicable) {
        Verdict::NotApplicable
    } else {
        Verdict::Pass
    };
    Ok(RouchonReport {
        z1: z1.to_string(),
        charts,
        verdict,
    })
}

fn z1_jet(z1: &str, k: u32) -> Variable {
    Variable::new(z1, VarKind::Arbitrary, k)
}

fn check_chart(
    sys: &SystemDef,
    p: &Parametrization,
    idx: usize,
    relations: &[Expr],
    ruled: Option<&RuledForm>,
    z1: &str,
    opts: &ChecksOptions,
) -> Result<ChartChecks, RouchonError> {
    let chart = &p.charts()[idx];
    let pb = Pullback::new(sys, chart);
    let vars = sys.vars();
    let mut z_orders = Vec::new();
    for v in &vars {
        z_orders.push(ord(&pb.image(v)?, z1));
    }
    let r = z_orders.iter().flatten().copied().max();
    let mut out = ChartChecks {
        chart: chart.name.clone(),
        r,
        orders: Vec::new(),
        verdict: Verdict::NotApplicable,
        reason: None,
        tuple: Vec::new(),
        checks: Vec::new(),
        max_tuple: 0.0,
        samples: 0,
    };
    let Some(r) = r else {
        out.reason = Some(format!("{z1} does not occur in the parametrization"));
        return Ok(out);
    };

    let mut named: Vec<(String, Expr)> = Vec::new();
    let mut tuple_exprs: Vec<Expr> = Vec::new();
    for (ri, rel) in relations.iter().enumerate() {
        let orders: Vec<Option<u32>> = vars.iter().map(|v| ord(rel, v.name())).collect();
        if ri == 0 {
            out.orders = vars.iter().map(|v| v.name().to_string()).zip(orders.iter().copied()).collect();
        }
        for ((v, e), zo) in vars.iter().zip(&orders).zip(&z_orders) {
            if *e == Some(0) && zo.map_or(false, |o| o >= r) {
                out.reason = Some(format!(
                    "e_{} = 0 but ord_{z1} of its image is {} ≥ r = {r}",
                    v.name(),
                    zo.unwrap()
                ));
                return Ok(out);
            }
        }
        let mut targets = Vec::new();
        let mut tuple = Vec::new();
        for (v, e) in vars.iter().zip(&orders) {
            if let Some(e) = e.filter(|e| *e > 0) {
                let t = v.shifted(e);
                let img = pb.image(&t)?;
                tuple.push(img.partial(&z1_jet(z1, r + e)));
                targets.push(t);
            }
        }
        if targets.is_empty() {
            continue;
        }
        let op = GhostOperator::new(targets.clone());
        let iterates = op.iterate(rel, GHOST_KMAX)?;
        if ri == 0 {
            out.tuple = targets.iter().map(|t| t.to_string()).zip(tuple.iter().map(|e| e.to_string())).collect();
        }
        for (k, form) in iterates.iter().enumerate().skip(1) {
            let mut map = std::collections::HashMap::new();
            for (g, t) in op.ghosts().iter().zip(&tuple) {
                map.insert(g.clone(), t.clone());
            }
            let substituted = pb.pull(&form.subs(&map))?;
            named.push((format!("a: D^{k} R{}", ri + 1), substituted));
        }
        tuple_exprs.extend(tuple);
    }
    for v in &vars {
        let img = pb.image(&v.shifted(1))?;
        let d2 = img.partial(&z1_jet(z1, r + 1)).partial(&z1_jet(z1, r + 1));
        named.push((format!("b: {}'", v.name()), d2));
    }
    if let Some(form) = ruled {
        let v2 = pb.pull(&form.v2)?;
        named.push(("c: v2".into(), v2.partial(&z1_jet(z1, r + 1))));
        for (name, f) in form.vars.iter().zip(&form.f) {
            let fi = pb.pull(&form.unfold(f))?;
            named.push((format!("c: f_{name}"), fi.partial(&z1_jet(z1, r))));
        }
    }

    let needed = named
        .iter()
        .map(|(_, e)| e)
        .chain(&tuple_exprs)
        .flat_map(|e| e.variables())
        .filter(|v| v.kind() == VarKind::Arbitrary)
        .map(|v| v.order())
        .max()
        .unwrap_or(0);
    if needed > opts.jet_order {
        return Err(RouchonError::Diffiety(DiffietyError::TruncationTooSmall {
            needed,
            available: opts.jet_order,
        }));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(idx as u64);
    let mut maxes = vec![0.0f64; named.len()];
    let mut passes = vec![true; named.len()];
    let mut max_tuple = 0.0f64;
    for _ in 0..opts.trials {
        let mut vals: Vec<(f64, f64)> = Vec::new();
        let mut tvals: Vec<f64> = Vec::new();
        sample_jet_where(p, sys, chart, opts.jet_order, &mut rng, |jp: &JetPoint| {
            vals.clear();
            tvals.clear();
            for (_, e) in &named {
                match e.evaluate_scaled(&jp.values) {
                    Ok(v) => vals.push(v),
                    Err(_) => return false,
                }
            }
            for e in &tuple_exprs {
                match e.evaluate(&jp.values) {
                    Ok(v) => tvals.push(v),
                    Err(ExprError::Domain(_)) => return false,
                    Err(_) => return false,
                }
            }
            true
        })?;
        for (i, (v, scale)) in vals.iter().enumerate() {
            maxes[i] = maxes[i].max(v.abs());
            if v.abs() > opts.tol * (1.0 + scale) {
                passes[i] = false;
            }
        }
        max_tuple = tvals.iter().map(|t| t.abs()).fold(max_tuple, f64::max);
        out.samples += 1;
    }
    out.checks = named
        .iter()
        .zip(maxes.iter().zip(&passes))
        .map(|((n, _), (m, ok))| CheckResidual {
            name: n.clone(),
            max_residual: *m,
            pass: *ok,
        })
        .collect();
    out.max_tuple = max_tuple;
    out.verdict = if passes.iter().all(|p| *p) { Verdict::Pass } else { Verdict::Fail };
    Ok(out)
}
