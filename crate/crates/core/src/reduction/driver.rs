//! The descent loop: dispatch on the case analysis, reduce, track `(r, n)`
//! and assemble the candidate with its inverse.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::diffiety::{
    check_morphism, ord, Chart, CheckOptions, DiffietyError, Parametrization, Pullback, SystemDef,
};
use crate::expr::{Expr, VarKind, Variable};
use crate::flatverify::FlatOutputCandidate;
use crate::rouchon::{linearity_test, rouchon_checks, ruled_rewrite, ChecksOptions, Linearity};

use super::step::{compose, reduce_once, BranchInput, Measure, ReductionStep, StepResult};
use super::ReductionError;

/// Guard against non-terminating descents.
pub const MAX_STEPS: usize = 32;

#[derive(Clone, Debug)]
pub struct ReductionOptions {
    /// Run the morphism check on the supplied parametrization first.
    pub check_param: bool,
    pub morphism: CheckOptions,
    pub checks: ChecksOptions,
    /// Ray of the ghost forms used by ruled rewrites.
    pub ray: Option<usize>,
    pub seed: u64,
}

impl Default for ReductionOptions {
    fn default() -> Self {
        ReductionOptions {
            check_param: true,
            morphism: CheckOptions::default(),
            checks: ChecksOptions::default(),
            ray: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum TraceStatus {
    FlatOutputsFound,
    Unsupported(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReductionTrace {
    pub system: String,
    pub chart: Option<String>,
    pub z1: Option<String>,
    pub initial: Measure,
    pub steps: Vec<ReductionStep>,
    pub status: TraceStatus,
    /// Outputs in the original coordinates, printed.
    pub outputs: Vec<String>,
}

impl ReductionTrace {
    /// `(r, n)` strictly decreases at every step (on `n` alone without a
    /// parametrization).
    pub fn descends(&self) -> bool {
        let mut prev = self.initial;
        for s in &self.steps {
            let Some(next) = s.measure_after else { return false };
            let ok = if prev.r.is_some() || next.r.is_some() { next < prev } else { next.n < prev.n };
            if !ok {
                return false;
            }
            prev = next;
        }
        true
    }
}

#[derive(Clone, Debug)]
pub struct ReductionOutcome {
    pub trace: ReductionTrace,
    pub candidate: Option<FlatOutputCandidate>,
}

struct Tracker<'a> {
    pb: Pullback<'a>,
    p: &'a Parametrization,
    chart: &'a Chart,
    z1: String,
}

impl Tracker<'_> {
    fn measure(&self, defs: &HashMap<String, Expr>, sys: &SystemDef) -> Result<Measure, DiffietyError> {
        let mut r = None;
        for name in sys.var_names() {
            let img = self.pb.pull(&defs[&name])?;
            r = r.max(ord(&img, &self.z1));
        }
        Ok(Measure { r, n: sys.n() })
    }

    /// The parametrization induced on an intermediate system.
    fn induced(&self, defs: &HashMap<String, Expr>, sys: &SystemDef) -> Result<Parametrization, DiffietyError> {
        let maps = sys
            .var_names()
            .into_iter()
            .map(|n| Ok((n.clone(), self.pb.pull(&defs[&n])?)))
            .collect::<Result<Vec<_>, DiffietyError>>()?;
        let chart = Chart::derived(
            self.chart.name.clone(),
            maps,
            self.chart.excludes().to_vec(),
            self.chart.boxes().to_vec(),
        );
        Parametrization::new(self.p.name.clone(), sys, self.p.arbitrary().to_vec(), vec![chart])
    }
}

/// Run the reduction on `sys`; `param` is a parametrization with the chart
/// used for `r` and the ruled-branch checks.
pub fn compute_flat_outputs(
    sys: &SystemDef,
    param: Option<(&Parametrization, &str)>,
    z1: Option<&str>,
    opts: &ReductionOptions,
) -> Result<ReductionOutcome, ReductionError> {
    let tracker = match param {
        Some((p, chart_name)) => {
            let chart = p
                .chart(chart_name)
                .ok_or_else(|| DiffietyError::UnknownVariable(format!("chart {chart_name}")))?;
            let z1 = z1.unwrap_or_else(|| p.arbitrary()[0].as_str()).to_string();
            if !p.arbitrary().contains(&z1) {
                return Err(DiffietyError::UnknownVariable(z1).into());
            }
            Some(Tracker {
                pb: Pullback::new(sys, chart),
                p,
                chart,
                z1,
            })
        }
        None => None,
    };
    let ctx0 = sys.context();
    let mut defs: HashMap<String, Expr> = sys
        .vars()
        .into_iter()
        .map(|v| (v.name().to_string(), Expr::var(v)))
        .collect();
    let measure = |defs: &HashMap<String, Expr>, s: &SystemDef| -> Result<Measure, ReductionError> {
        Ok(match &tracker {
            Some(t) => t.measure(defs, s)?,
            None => Measure { r: None, n: s.n() },
        })
    };
    let mut trace = ReductionTrace {
        system: sys.name.clone(),
        chart: param.map(|(_, c)| c.to_string()),
        z1: tracker.as_ref().map(|t| t.z1.clone()),
        initial: measure(&defs, sys)?,
        steps: Vec::new(),
        status: TraceStatus::FlatOutputsFound,
        outputs: Vec::new(),
    };
    let unsupported = |mut trace: ReductionTrace, reason: String| {
        trace.status = TraceStatus::Unsupported(reason);
        Ok(ReductionOutcome { trace, candidate: None })
    };

    if let (Some(t), true) = (&tracker, opts.check_param) {
        let report = check_morphism(sys, t.p, &opts.morphism)?;
        if !report.pass {
            return unsupported(
                trace,
                format!("parametrization fails the morphism check (residual {:e})", report.max_residual()),
            );
        }
    }

    let mut taken: BTreeSet<String> = sys
        .var_names()
        .into_iter()
        .chain(sys.exo().iter().map(|(n, _)| n.clone()))
        .collect();
    let mut cur = sys.clone();
    let mut results: Vec<StepResult> = Vec::new();
    let mut carried: Vec<(String, Expr)> = Vec::new();
    let mut before = trace.initial;
    while cur.n() > cur.m() {
        if results.len() >= MAX_STEPS {
            return unsupported(trace, format!("no termination within {MAX_STEPS} steps"));
        }
        let mut rouchon = None;
        let attempt: Result<StepResult, ReductionError> = match (cur.m(), linearity_test(&cur)) {
            (1, Linearity::AllLinear(lf)) => reduce_once(&cur, BranchInput::M1(&lf), &mut taken),
            (1, Linearity::Nonlinear { state, .. }) => {
                return unsupported(trace, format!("{state}' is not linear in the free derivative"));
            }
            (_, Linearity::AllLinear(lf)) => {
                let mut snapshot = taken.clone();
                match reduce_once(&cur, BranchInput::M2Linear(&lf, 0), &mut snapshot) {
                    Ok(r) => {
                        taken = snapshot;
                        Ok(r)
                    }
                    Err(_) => reduce_once(&cur, BranchInput::M2Linear(&lf, 1), &mut taken),
                }
            }
            (_, Linearity::Nonlinear { .. }) => match ruled_rewrite(&cur, opts.ray, opts.seed) {
                Ok(rf) => {
                    if let Some(t) = &tracker {
                        let checked = t
                            .induced(&defs, &cur)
                            .map_err(ReductionError::from)
                            .and_then(|pp| Ok(rouchon_checks(&cur, &pp, None, Some(&rf), &t.z1, &opts.checks)?));
                        rouchon = Some(checked.map(|r| r.verdict).map_err(|e| e.to_string()));
                    }
                    reduce_once(&cur, BranchInput::M2Ruled(&rf), &mut taken)
                }
                Err(e) => Err(e.into()),
            },
        };
        let mut res = match attempt {
            Ok(r) => r,
            Err(e) => return unsupported(trace, e.to_string()),
        };
        let mut new_defs: HashMap<String, Expr> = HashMap::new();
        for (n, d) in &res.defs {
            new_defs.insert(n.clone(), compose(d, &defs, &ctx0)?.normalize());
        }
        if let Some(c) = &res.carried {
            carried.push((c.clone(), defs[c].clone()));
        }
        let after = measure(&new_defs, &res.system)?;
        res.step.measure_before = Some(before);
        res.step.measure_after = Some(after);
        match rouchon {
            Some(Ok(v)) => res.step.rouchon = Some(v),
            Some(Err(e)) => res.step.note = Some(format!("rouchon checks skipped: {e}")),
            None if tracker.is_none() => res.step.note = Some("rouchon checks skipped: no parametrization".into()),
            None => {}
        }
        let descended = if before.r.is_some() || after.r.is_some() { after < before } else { after.n < before.n };
        trace.steps.push(res.step.clone());
        if !descended {
            return unsupported(trace, format!("measure did not decrease: {before:?} -> {after:?}"));
        }
        before = after;
        defs = new_defs;
        cur = res.system.clone();
        results.push(res);
    }

    // outputs: final free variables, then carried pivots
    let mut out_names: Vec<String> = cur.free_names().to_vec();
    out_names.extend(carried.iter().map(|(n, _)| n.clone()));
    if out_names.len() != sys.m() {
        return unsupported(trace, format!("{} outputs for m = {}", out_names.len(), sys.m()));
    }
    let mut outputs = Vec::new();
    for n in cur.free_names() {
        outputs.push(defs[n].clone());
    }
    outputs.extend(carried.iter().map(|(_, d)| d.clone()));
    trace.outputs = outputs.iter().map(Expr::to_string).collect();

    let b_names: Vec<String> = (1..=sys.m()).map(|k| format!("b{k}")).collect();
    let trivial = sys.trivial_context();
    let mut known: HashMap<String, Expr> = out_names
        .iter()
        .zip(&b_names)
        .map(|(n, b)| (n.clone(), Expr::var(Variable::new(b.as_str(), VarKind::Arbitrary, 0))))
        .collect();
    let mut conditions = Vec::new();
    for res in results.iter().rev() {
        for c in &res.conditions {
            conditions.push(compose(c, &known, &trivial)?.normalize());
        }
        let mut next = known.clone();
        for (n, e) in &res.inverse {
            next.insert(n.clone(), compose(e, &known, &trivial)?.normalize());
        }
        known = next;
    }
    let inverse: Vec<(String, Expr)> = sys.var_names().into_iter().map(|n| (n.clone(), known[&n].clone())).collect();
    let candidate = FlatOutputCandidate {
        name: format!("{}-reduced", sys.name),
        system: sys.name.clone(),
        outputs,
        b_names,
        inverse,
        conditions,
    };
    Ok(ReductionOutcome {
        trace,
        candidate: Some(candidate),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{equivalent, EquivOptions};
    use crate::flatverify::{check_flat_outputs, FlatOptions};
    use crate::Verdict;

    fn d(n: &str) -> Expr {
        Expr::var(Variable::free(n).shifted(1))
    }

    fn x(n: &str) -> Expr {
        Expr::var(Variable::free(n))
    }

    fn m2(name: &str, h: Expr) -> SystemDef {
        SystemDef::new(name, vec!["x1".into(), "x2".into()], vec![("x3".into(), h)], vec![], vec![]).unwrap()
    }

    fn same(a: &Expr, b: &Expr) -> bool {
        equivalent(a, b, &EquivOptions::default()).unwrap()
    }

    #[test]
    fn chained_without_parametrization() {
        let s = m2("chained", x("x2") * d("x1"));
        let out = compute_flat_outputs(&s, None, None, &ReductionOptions::default()).unwrap();
        assert_eq!(out.trace.status, TraceStatus::FlatOutputsFound);
        assert_eq!(out.trace.steps.len(), 1);
        assert!(out.trace.descends());
        let c = out.candidate.unwrap();
        assert!(same(&c.outputs[0], &x("x2")));
        assert!(same(&c.outputs[1], &(Expr::var(Variable::state("x3")) - x("x2") * x("x1"))));
        let r = check_flat_outputs(&s, &c, &FlatOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
    }

    #[test]
    fn carried_pivot_completes_outputs() {
        let s = m2("carry", d("x2") + Expr::var(Variable::state("x3")));
        let out = compute_flat_outputs(&s, None, None, &ReductionOptions::default()).unwrap();
        assert_eq!(out.trace.status, TraceStatus::FlatOutputsFound, "{:?}", out.trace);
        let c = out.candidate.unwrap();
        assert!(out.trace.steps.iter().any(|s| s.reduced_to_m1));
        let r = check_flat_outputs(&s, &c, &FlatOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
    }

    #[test]
    fn bilinear_without_parametrization() {
        let s = m2("bilinear", d("x1") * d("x2"));
        let out = compute_flat_outputs(&s, None, None, &ReductionOptions::default()).unwrap();
        let c = out.candidate.unwrap();
        assert!(same(&c.outputs[1], &(Expr::var(Variable::state("x3")) - d("x2") * x("x1"))));
        let r = check_flat_outputs(&s, &c, &FlatOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
    }

    #[test]
    fn nonruled_is_unsupported() {
        let s = m2("nonruled", Expr::powi(d("x1"), 2) + Expr::powi(d("x2"), 2));
        let out = compute_flat_outputs(&s, None, None, &ReductionOptions::default()).unwrap();
        assert!(matches!(out.trace.status, TraceStatus::Unsupported(_)));
        assert!(out.candidate.is_none());
    }
}
