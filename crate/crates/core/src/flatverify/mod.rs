//! Numeric certification of flat-output candidates and stationarity.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::diffiety::{nth_derivative, Chart, DiffietyError, Pullback, SystemDef, CHART_GUARD};
use crate::expr::{depends_on, Expr, ExprError, Point, VarKind, Variable};
use crate::numeric;
use crate::Verdict;

const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlatError {
    #[error("candidate {candidate}: {reason}")]
    InvalidCandidate { candidate: String, reason: String },
    #[error("no sample satisfies the chart conditions of {candidate} after {attempts} draws")]
    ChartViolated { candidate: String, attempts: usize },
    #[error(transparent)]
    Diffiety(#[from] DiffietyError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Outputs `b_1..b_m` over the system variables with an optional inverse
/// `x_i = X_i(b-jets)` valid where every condition is nonzero.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatOutputCandidate {
    pub name: String,
    pub system: String,
    pub outputs: Vec<Expr>,
    pub b_names: Vec<String>,
    pub inverse: Vec<(String, Expr)>,
    pub conditions: Vec<Expr>,
}

impl FlatOutputCandidate {
    /// Outputs named `b1..bm`, no inverse.
    pub fn new(name: impl Into<String>, system: impl Into<String>, outputs: Vec<Expr>) -> Self {
        let b_names = (1..=outputs.len()).map(|k| format!("b{k}")).collect();
        FlatOutputCandidate {
            name: name.into(),
            system: system.into(),
            outputs,
            b_names,
            inverse: Vec::new(),
            conditions: Vec::new(),
        }
    }

    pub fn with_inverse(mut self, inverse: Vec<(String, Expr)>, conditions: Vec<Expr>) -> Self {
        self.inverse = inverse;
        self.conditions = conditions;
        self
    }

    pub fn b(&self, j: usize, order: u32) -> Variable {
        Variable::new(self.b_names[j].as_str(), VarKind::Arbitrary, order)
    }

    fn b_index(&self, name: &str) -> Option<usize> {
        self.b_names.iter().position(|b| b == name)
    }

    pub fn validate(&self, sys: &SystemDef) -> Result<(), FlatError> {
        let bad = |reason: String| FlatError::InvalidCandidate {
            candidate: self.name.clone(),
            reason,
        };
        if self.outputs.len() != sys.m() {
            return Err(bad(format!("{} outputs for a system with m = {}", self.outputs.len(), sys.m())));
        }
        if self.b_names.len() != self.outputs.len() {
            return Err(bad("one b name per output required".into()));
        }
        for e in &self.outputs {
            for v in e.variables() {
                if sys.kind_of(v.name()).is_none() {
                    return Err(bad(format!("output uses unknown variable {v}")));
                }
            }
        }
        if !self.inverse.is_empty() {
            for name in sys.var_names() {
                if !self.inverse.iter().any(|(n, _)| *n == name) {
                    return Err(bad(format!("inverse does not cover {name}")));
                }
            }
            for e in self.inverse.iter().map(|(_, e)| e).chain(&self.conditions) {
                for v in e.variables() {
                    if self.b_index(v.name()).is_none() && sys.kind_of(v.name()) != Some(VarKind::Exogenous) {
                        return Err(bad(format!("inverse uses {v}, which is neither a b-jet nor exogenous")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Highest b-jet order used by the inverse and the conditions.
    pub fn inverse_order(&self) -> Option<u32> {
        self.inverse
            .iter()
            .map(|(_, e)| e)
            .chain(&self.conditions)
            .flat_map(|e| e.variables())
            .filter(|v| self.b_index(v.name()).is_some())
            .map(|v| v.order())
            .max()
    }
}

#[derive(Clone, Debug)]
pub struct FlatOptions {
    /// Truncation `K` of the b-jets.
    pub jet_order: u32,
    pub trials: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for FlatOptions {
    fn default() -> Self {
        FlatOptions {
            jet_order: 6,
            trials: 20,
            tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlatReport {
    pub candidate: String,
    /// Highest b-jet order differentiated.
    pub kb: u32,
    pub samples: usize,
    pub span_failures: usize,
    pub rank_failures: usize,
    pub inconclusive: usize,
    /// Smallest relative singular-value margin seen in a rank decision.
    pub min_margin: f64,
    pub max_roundtrip: f64,
    pub max_dynamics: f64,
    pub residual_failures: usize,
    pub verdict: Verdict,
}

/// Span, round-trip/dynamics and independence tests at sampled points of
/// the system.
pub fn check_flat_outputs(
    sys: &SystemDef,
    cand: &FlatOutputCandidate,
    opts: &FlatOptions,
) -> Result<FlatReport, FlatError> {
    cand.validate(sys)?;
    let has_inverse = !cand.inverse.is_empty();
    let ob = cand.inverse_order().unwrap_or(0);
    let kb = if has_inverse { (ob + 1).max(sys.n() as u32) } else { sys.n() as u32 };
    if kb > opts.jet_order {
        return Err(DiffietyError::TruncationTooSmall {
            needed: kb,
            available: opts.jet_order,
        }
        .into());
    }
    let ctx = sys.context();
    // b_j^(k) on the system, in (x, free jets, exo)
    let mut bjets: Vec<(Variable, Expr)> = Vec::new();
    for (j, out) in cand.outputs.iter().enumerate() {
        let mut e = out.clone();
        for k in 0..=kb {
            if k > 0 {
                e = crate::diffiety::total_derivative(&e, &ctx)?;
            }
            bjets.push((cand.b(j, k), e.clone()));
        }
    }
    let is_exo = |v: &Variable| sys.kind_of(v.name()) == Some(VarKind::Exogenous);
    let mut cols: BTreeSet<Variable> = sys.vars().into_iter().collect();
    for (_, e) in &bjets {
        cols.extend(e.variables().into_iter().filter(|v| !is_exo(v)));
    }
    let cols: Vec<Variable> = cols.into_iter().collect();
    let jac: Vec<Vec<Expr>> = bjets.iter().map(|(_, e)| e.gradient(&cols)).collect();
    let id_rows: Vec<Vec<f64>> = sys
        .vars()
        .iter()
        .map(|x| cols.iter().map(|c| if c == x { 1.0 } else { 0.0 }).collect())
        .collect();

    // the b-parametrization as a chart
    let inv_chart = if has_inverse {
        Some(Chart::derived("inverse", cand.inverse.clone(), cand.conditions.clone(), vec![]))
    } else {
        None
    };
    let pb = inv_chart.as_ref().map(|c| Pullback::new(sys, c));
    let mut residual_exprs: Vec<Expr> = Vec::new();
    if let Some(pb) = &pb {
        for e in sys.equations().iter().chain(sys.constraints()) {
            residual_exprs.push(pb.pull(e)?);
        }
    }
    let mut sample_vars: BTreeSet<Variable> = cols.iter().cloned().collect();
    for (u, _) in sys.exo() {
        sample_vars.insert(Variable::exogenous(u));
    }
    let sample_vars: Vec<Variable> = sample_vars.into_iter().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = FlatReport {
        candidate: cand.name.clone(),
        kb,
        samples: 0,
        span_failures: 0,
        rank_failures: 0,
        inconclusive: 0,
        min_margin: f64::INFINITY,
        max_roundtrip: 0.0,
        max_dynamics: 0.0,
        residual_failures: 0,
        verdict: Verdict::Pass,
    };
    // draws in the inconclusive rank band are replaced, up to a budget
    let budget = 4 * opts.trials;
    let mut draws = 0;
    while report.samples < opts.trials && draws < budget {
        draws += 1;
        let (point, bpoint) = draw(sys, cand, &sample_vars, &bjets, &mut rng)?;
        let rows: Vec<Vec<f64>> = jac
            .iter()
            .map(|r| r.iter().map(|e| e.evaluate(&point)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<_, _>>()?;
        let rj = numeric::rank(&rows);
        let mut stacked = rows.clone();
        stacked.extend(id_rows.iter().cloned());
        let rs = numeric::rank(&stacked);
        report.min_margin = report.min_margin.min(rj.margin()).min(rs.margin());
        match (rj.rank(), rs.rank()) {
            (Some(a), Some(b)) => {
                if a != b {
                    report.span_failures += 1;
                }
                if a != rows.len() {
                    report.rank_failures += 1;
                }
            }
            _ => {
                report.inconclusive += 1;
                continue;
            }
        }
        if has_inverse {
            let mut bad = false;
            for (name, e) in &cand.inverse {
                let x = sys.var(name).expect("validated");
                let (v, scale) = e.evaluate_scaled(&bpoint)?;
                let r = (point[&x] - v).abs();
                report.max_roundtrip = report.max_roundtrip.max(r);
                bad |= r > opts.tol * (1.0 + scale.max(point[&x].abs()));
            }
            for e in &residual_exprs {
                let (v, scale) = e.evaluate_scaled(&bpoint)?;
                report.max_dynamics = report.max_dynamics.max(v.abs());
                bad |= v.abs() > opts.tol * (1.0 + scale);
            }
            if bad {
                report.residual_failures += 1;
            }
        }
        report.samples += 1;
    }
    if !report.min_margin.is_finite() {
        report.min_margin = 0.0;
    }
    report.verdict = if report.span_failures + report.rank_failures + report.residual_failures > 0 {
        Verdict::Fail
    } else if report.samples < opts.trials {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    Ok(report)
}

/// A system point where all conditions clear the guard, with the b-jet
/// values it induces.
fn draw(
    sys: &SystemDef,
    cand: &FlatOutputCandidate,
    vars: &[Variable],
    bjets: &[(Variable, Expr)],
    rng: &mut ChaCha8Rng,
) -> Result<(Point, Point), FlatError> {
    'attempt: for _ in 0..MAX_ATTEMPTS {
        let point: Point = vars.iter().map(|v| (v.clone(), rng.gen_range(-1.0..1.0))).collect();
        let mut bpoint = Point::new();
        for (u, _) in sys.exo() {
            let v = Variable::exogenous(u);
            bpoint.insert(v.clone(), point[&v]);
        }
        for (b, e) in bjets {
            match e.evaluate(&point) {
                Ok(x) => {
                    bpoint.insert(b.clone(), x);
                }
                Err(ExprError::Domain(_)) => continue 'attempt,
                Err(e) => return Err(e.into()),
            }
        }
        for c in &cand.conditions {
            match c.evaluate(&bpoint) {
                Ok(x) if x.abs() > CHART_GUARD => {}
                Ok(_) | Err(ExprError::Domain(_)) => continue 'attempt,
                Err(e) => return Err(e.into()),
            }
        }
        if cand.inverse.iter().any(|(_, e)| e.evaluate(&bpoint).is_err()) {
            continue;
        }
        return Ok((point, bpoint));
    }
    Err(FlatError::ChartViolated {
        candidate: cand.name.clone(),
        attempts: MAX_ATTEMPTS,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationarityReport {
    pub candidate: String,
    pub time: String,
    pub verdict: Verdict,
    /// `(b_j, ∂_t b_j)` for every output that depends on `t`.
    pub witnesses: Vec<(String, String)>,
    pub reason: Option<String>,
}

/// Outputs free of the exogenous time `t`, for systems whose equations do
/// not involve `t`.
pub fn check_stationarity(sys: &SystemDef, cand: &FlatOutputCandidate, t: &str) -> Result<StationarityReport, FlatError> {
    if sys.kind_of(t) != Some(VarKind::Exogenous) {
        return Err(DiffietyError::UnknownVariable(t.to_string()).into());
    }
    let mut report = StationarityReport {
        candidate: cand.name.clone(),
        time: t.to_string(),
        verdict: Verdict::Pass,
        witnesses: Vec::new(),
        reason: None,
    };
    if sys.depends_on_exo(t) {
        report.verdict = Verdict::NotApplicable;
        report.reason = Some(format!("equations of {} depend on {t}", sys.name));
        return Ok(report);
    }
    let tv = Variable::exogenous(t);
    for (b, e) in cand.b_names.iter().zip(&cand.outputs) {
        if depends_on(e, &tv) {
            report.witnesses.push((b.clone(), e.partial(&tv).to_string()));
        }
    }
    if !report.witnesses.is_empty() {
        report.verdict = Verdict::Fail;
    }
    Ok(report)
}

/// `δ^k` of every output, for callers that need the b-jets on the system.
pub fn output_jets(sys: &SystemDef, cand: &FlatOutputCandidate, k: u32) -> Result<HashMap<Variable, Expr>, FlatError> {
    let ctx = sys.context();
    let mut out = HashMap::new();
    for (j, e) in cand.outputs.iter().enumerate() {
        for o in 0..=k {
            out.insert(cand.b(j, o), nth_derivative(e, o, &ctx)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(n: &str) -> Expr {
        Expr::var(Variable::free(n).shifted(1))
    }

    fn x(n: &str) -> Expr {
        Expr::var(Variable::free(n))
    }

    fn b(n: &str, k: u32) -> Expr {
        Expr::var(Variable::new(n, VarKind::Arbitrary, k))
    }

    fn chained() -> SystemDef {
        SystemDef::new("chained", vec!["x1".into(), "x2".into()], vec![("x3".into(), x("x2") * d("x1"))], vec![], vec![])
            .unwrap()
    }

    fn x3() -> Expr {
        Expr::var(Variable::state("x3"))
    }

    #[test]
    fn chained_certificate() {
        let s = chained();
        let x1 = -b("b2", 1) / b("b1", 1);
        let cand = FlatOutputCandidate::new("c", "chained", vec![x("x2"), x3() - x("x2") * x("x1")]).with_inverse(
            vec![
                ("x1".into(), x1.clone()),
                ("x2".into(), b("b1", 0)),
                ("x3".into(), b("b2", 0) + b("b1", 0) * x1),
            ],
            vec![b("b1", 1)],
        );
        let r = check_flat_outputs(&s, &cand, &FlatOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        assert!(r.max_roundtrip < 1e-9 && r.max_dynamics < 1e-9);
    }

    #[test]
    fn chained_wrong_outputs_fail_everywhere() {
        let s = chained();
        let cand = FlatOutputCandidate::new("bad", "chained", vec![x("x1"), x("x2")]);
        let r = check_flat_outputs(&s, &cand, &FlatOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.span_failures, r.samples);
    }

    #[test]
    fn wrong_inverse_fails_roundtrip() {
        let s = chained();
        let cand = FlatOutputCandidate::new("c", "chained", vec![x("x2"), x3() - x("x2") * x("x1")]).with_inverse(
            vec![
                ("x1".into(), b("b2", 1) / b("b1", 1)),
                ("x2".into(), b("b1", 0)),
                ("x3".into(), b("b2", 0)),
            ],
            vec![b("b1", 1)],
        );
        let r = check_flat_outputs(&s, &cand, &FlatOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.residual_failures > 0);
    }

    #[test]
    fn truncation_guard() {
        let s = chained();
        let cand = FlatOutputCandidate::new("c", "chained", vec![x("x2"), x("x1")]);
        let opts = FlatOptions {
            jet_order: 2,
            ..FlatOptions::default()
        };
        assert!(matches!(
            check_flat_outputs(&s, &cand, &opts),
            Err(FlatError::Diffiety(DiffietyError::TruncationTooSmall { .. }))
        ));
    }

    #[test]
    fn condition_never_met() {
        let s = chained();
        let cand = FlatOutputCandidate::new("c", "chained", vec![x("x2"), x3()])
            .with_inverse(
                vec![("x1".into(), b("b1", 0)), ("x2".into(), b("b1", 0)), ("x3".into(), b("b2", 0))],
                vec![b("b1", 0) - b("b1", 0) + Expr::ratio(1, 10000)],
            );
        assert!(matches!(
            check_flat_outputs(&s, &cand, &FlatOptions::default()),
            Err(FlatError::ChartViolated { .. })
        ));
    }

    #[test]
    fn stationarity() {
        let t = Expr::var(Variable::exogenous("t"));
        let s = SystemDef::new(
            "ct",
            vec!["x1".into(), "x2".into()],
            vec![("x3".into(), x("x2") * d("x1"))],
            vec![("t".into(), Expr::one())],
            vec![],
        )
        .unwrap();
        let good = FlatOutputCandidate::new("g", "ct", vec![x("x2"), x3()]);
        assert_eq!(check_stationarity(&s, &good, "t").unwrap().verdict, Verdict::Pass);
        let bad = FlatOutputCandidate::new("b", "ct", vec![x("x1") + &t * Expr::sin(x("x2")), x3()]);
        let r = check_stationarity(&s, &bad, "t").unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.witnesses[0].1, Expr::sin(x("x2")).to_string());
        let timed = SystemDef::new(
            "td",
            vec!["x1".into(), "x2".into()],
            vec![("x3".into(), &t * d("x1"))],
            vec![("t".into(), Expr::one())],
            vec![],
        )
        .unwrap();
        assert_eq!(check_stationarity(&timed, &good, "t").unwrap().verdict, Verdict::NotApplicable);
    }
}
