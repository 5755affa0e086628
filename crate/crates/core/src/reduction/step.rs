//! One reduction step: straighten the pivot field, rewrite the dynamics in
//! the invariants and solve the pivot from one of their derivatives.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::diffiety::{nth_derivative, Derivation, DiffietyError, SystemDef};
use crate::expr::{depends_on, equivalent, EquivOptions, Expr, VarKind, Variable};
use crate::rouchon::{LinearForm, RuledForm};
use crate::Verdict;

use super::integrals::{first_integrals_with_pivot, VectorField};
use super::ReductionError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StepBranch {
    M1Linear,
    M2Linear,
    M2Ruled,
}

#[derive(Clone, Copy, Debug)]
pub enum BranchInput<'a> {
    /// `m = 1`, `h_i = f_i x_1' + g_i`.
    M1(&'a LinearForm),
    /// `m = 2` linear in both free derivatives, with the pivot index.
    M2Linear(&'a LinearForm, usize),
    M2Ruled(&'a RuledForm),
}

/// `(r, n)` with `r = None` when no parametrization is tracked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Measure {
    pub r: Option<u32>,
    pub n: usize,
}

/// Serializable record of one step; expressions are printed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReductionStep {
    pub branch: StepBranch,
    pub pivot: String,
    /// `(coordinate, coefficient)` of the straightened field.
    pub field: Vec<(String, String)>,
    /// `(name, definition in the previous coordinates)`.
    pub new_variables: Vec<(String, String)>,
    /// Equations of the new system.
    pub relations: Vec<String>,
    /// `(v2 invariant, derivative it equals)`.
    pub companions: Vec<(String, String)>,
    /// Pivot solved from the derivative of an invariant.
    pub solved: Option<(String, String)>,
    /// Previous variables in jets of the new ones.
    pub inverse: Vec<(String, String)>,
    /// Pivot kept as an output when the invariants do not see it.
    pub carried: Option<String>,
    pub conditions: Vec<String>,
    pub measure_before: Option<Measure>,
    pub measure_after: Option<Measure>,
    pub reduced_to_m1: bool,
    pub rouchon: Option<Verdict>,
    pub note: Option<String>,
}

/// Result of [`reduce_once`] with the symbolic pieces the driver composes.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub system: SystemDef,
    pub step: ReductionStep,
    /// New variable ↦ definition in previous jets.
    pub defs: Vec<(String, Expr)>,
    /// Previous variable ↦ expression in new jets (and the carried symbol).
    pub inverse: Vec<(String, Expr)>,
    /// Nonzero conditions in new jets.
    pub conditions: Vec<Expr>,
    pub carried: Option<String>,
}

fn fresh(taken: &mut BTreeSet<String>) -> String {
    let name = (1..)
        .map(|k| format!("y{k}"))
        .find(|n| !taken.contains(n))
        .expect("unbounded");
    taken.insert(name.clone());
    name
}

/// Replace every variable whose name is in `defs` by the matching jet of
/// its definition in `ctx`.
pub(crate) fn compose(e: &Expr, defs: &HashMap<String, Expr>, ctx: &impl Derivation) -> Result<Expr, DiffietyError> {
    let mut map = HashMap::new();
    for v in e.variables() {
        if let Some(d) = defs.get(v.name()) {
            map.insert(v.clone(), nth_derivative(d, v.order(), ctx)?);
        }
    }
    Ok(e.subs(&map))
}

/// Give every occurrence of a named variable the kind declared for it.
pub(crate) fn retag(e: &Expr, kinds: &HashMap<String, VarKind>) -> Expr {
    let map: HashMap<Variable, Expr> = e
        .variables()
        .into_iter()
        .filter_map(|v| {
            let k = *kinds.get(v.name())?;
            (k != v.kind()).then(|| (v.clone(), Expr::var(v.with_kind(k))))
        })
        .collect();
    e.subs(&map)
}

fn identically_zero(e: &Expr) -> Result<bool, ReductionError> {
    if e.is_zero() {
        return Ok(true);
    }
    Ok(equivalent(e, &Expr::zero(), &EquivOptions::default())?)
}

pub fn reduce_once(
    sys: &SystemDef,
    input: BranchInput<'_>,
    taken: &mut BTreeSet<String>,
) -> Result<StepResult, ReductionError> {
    let vars = sys.vars();
    let names = sys.var_names();
    let (branch, pivot, ruled) = match input {
        BranchInput::M1(_) => (StepBranch::M1Linear, 0, None),
        BranchInput::M2Linear(_, p) => (StepBranch::M2Linear, p, None),
        BranchInput::M2Ruled(rf) => (StepBranch::M2Ruled, rf.pivot, Some(rf)),
    };
    if sys.m() != if branch == StepBranch::M1Linear { 1 } else { 2 } {
        return Err(ReductionError::ReexpressionFailed(format!(
            "{branch:?} does not apply to a system with {} free variables",
            sys.m()
        )));
    }
    let xp = vars[pivot].clone();

    let mut coords = vars.clone();
    let mut coeffs: Vec<Expr> = Vec::with_capacity(vars.len() + 1);
    match input {
        BranchInput::M1(lf) | BranchInput::M2Linear(lf, _) => {
            for (i, name) in names.iter().enumerate() {
                coeffs.push(if i == pivot {
                    Expr::one()
                } else if i < sys.m() {
                    Expr::zero()
                } else {
                    lf.row(name).expect("row per state").f[pivot].clone()
                });
            }
        }
        BranchInput::M2Ruled(rf) => {
            for name in &names {
                coeffs.push(rf.f_of(name).expect("ruled coefficient").clone());
            }
        }
    }
    let v2sym = ruled.filter(|rf| rf.f_depends_on_v2()).map(|rf| rf.v2_symbol.clone());
    if let Some(s) = &v2sym {
        coords.push(s.clone());
        coeffs.push(Expr::zero());
    }
    let vf = VectorField::new(coords, coeffs)?;
    let fi = first_integrals_with_pivot(&vf, pivot)?;
    let unfold = |e: &Expr| match ruled {
        Some(rf) => rf.unfold(e),
        None => e.clone(),
    };

    // names and definitions
    let ctx = sys.context();
    let mut new_names: Vec<Option<String>> = Vec::new();
    let mut defs: Vec<(String, Expr)> = Vec::new();
    for (coord, y) in &fi.integrals {
        let identity = y.as_var() == Some(coord);
        if Some(coord) == v2sym.as_ref() {
            if !identity {
                return Err(ReductionError::ReexpressionFailed(format!("v2 invariant {y} is not v2 itself")));
            }
            new_names.push(None);
            continue;
        }
        let name = if identity && sys.is_system_var(coord.name()) {
            coord.name().to_string()
        } else {
            fresh(taken)
        };
        defs.push((name.clone(), unfold(y).normalize()));
        new_names.push(Some(name));
    }
    let def_map: HashMap<String, Expr> = defs.iter().cloned().collect();

    let mut symbols: Vec<Expr> = Vec::new();
    let mut companions = Vec::new();
    for (idx, nm) in new_names.iter().enumerate() {
        match nm {
            Some(n) => symbols.push(Expr::var(Variable::new(n.as_str(), VarKind::State, 0))),
            None => {
                let rf = ruled.expect("companion only in the ruled branch");
                let mut partner = None;
                for (n, d) in &defs {
                    let dd = nth_derivative(d, 1, &ctx)?;
                    if identically_zero(&(dd - &rf.v2))? {
                        partner = Some(n.clone());
                        break;
                    }
                }
                let Some(pn) = partner else {
                    return Err(ReductionError::ReexpressionFailed(format!(
                        "v2 = {} is not the derivative of an invariant",
                        rf.v2
                    )));
                };
                let sym = Expr::var(Variable::new(pn.as_str(), VarKind::State, 1));
                companions.push((fi.integrals[idx].0.to_string(), sym.to_string()));
                symbols.push(sym);
            }
        }
    }
    let inv = fi.inverse(&symbols);
    let trivial = sys.trivial_context();

    // derivatives of the invariants in the new coordinates
    let mut rewrite: HashMap<Variable, Expr> = HashMap::new();
    let mut derived: Vec<(String, Expr)> = Vec::new();
    for (name, d) in &defs {
        let e = nth_derivative(d, 1, &ctx)?;
        let mut map = HashMap::new();
        for v in e.variables() {
            if v.name() == xp.name() || !sys.is_system_var(v.name()) {
                continue;
            }
            let img = match rewrite.get(&v) {
                Some(x) => x.clone(),
                None => {
                    let base = inv
                        .get(&v.base())
                        .ok_or_else(|| ReductionError::ReexpressionFailed(format!("no inverse for {v}")))?;
                    let x = nth_derivative(base, v.order(), &trivial)?;
                    rewrite.insert(v.clone(), x.clone());
                    x
                }
            };
            map.insert(v, img);
        }
        let e = e.subs(&map).expand();
        for v in e.variables() {
            if v.name() == xp.name() && v.order() > 0 && depends_on(&e, &v) {
                return Err(ReductionError::ReexpressionFailed(format!("{name}' = {e} involves {v}")));
            }
        }
        derived.push((name.clone(), e));
    }

    let own = |k: usize| {
        let (n, e) = &derived[k];
        e.as_var().map_or(false, |v| v.name() == n && v.order() == 1)
    };
    let free_idx: Vec<usize> = (0..derived.len()).filter(|k| own(*k)).collect();
    let dependent: Vec<usize> = (0..derived.len())
        .filter(|k| !free_idx.contains(k) && depends_on(&derived[*k].1, &xp))
        .collect();
    if free_idx.len() > 1 || (sys.m() == 1 && !free_idx.is_empty()) {
        return Err(ReductionError::ReexpressionFailed(format!(
            "{} invariants have unconstrained derivatives",
            free_idx.len()
        )));
    }
    if sys.m() == 2 && free_idx.is_empty() {
        return Err(ReductionError::ReexpressionFailed("no invariant carries the second free variable".into()));
    }

    let mut conditions: Vec<Expr> = Vec::new();
    let mut solved = None;
    let mut carried = None;
    let mut sol_expr = None;
    let mut free_new: Vec<usize> = free_idx.clone();
    let mut solve_error = None;
    for &j in &dependent {
        let e = &derived[j].1;
        let a = e.partial(&xp).expand();
        if depends_on(&a, &xp) {
            solve_error = Some(format!("{}' = {e} is not affine in {xp}", derived[j].0));
            continue;
        }
        let b = e.subs1(&xp, Expr::zero());
        let wj = Expr::var(Variable::new(derived[j].0.as_str(), VarKind::Free, 1));
        sol_expr = Some(((wj - b) / &a).expand());
        conditions.push(a);
        solved = Some(j);
        free_new.push(j);
        break;
    }
    if solved.is_none() {
        if let Some(msg) = solve_error {
            return Err(ReductionError::ReexpressionFailed(msg));
        }
        if sys.m() == 1 {
            return Err(ReductionError::Autonomous(format!(
                "no invariant derivative of {} involves {xp}",
                sys.name
            )));
        }
        carried = Some(xp.name().to_string());
    }
    if !fi.pivot_coefficient.is_numeric() {
        conditions.push(fi.pivot_coefficient.subs(&inv));
    }

    let mut kinds: HashMap<String, VarKind> = HashMap::new();
    for &k in &free_new {
        kinds.insert(derived[k].0.clone(), VarKind::Free);
    }
    for (n, _) in &derived {
        kinds.entry(n.clone()).or_insert(VarKind::State);
    }
    kinds.insert(xp.name().to_string(), VarKind::Free);
    let plug = |e: &Expr| -> Expr {
        let e = match &sol_expr {
            Some(s) => e.subs1(&xp, s.clone()),
            None => e.clone(),
        };
        retag(&e.normalize(), &kinds)
    };

    let free: Vec<String> = free_new.iter().map(|k| derived[*k].0.clone()).collect();
    let mut states: Vec<(String, Expr)> = Vec::new();
    for (k, (n, e)) in derived.iter().enumerate() {
        if !free_new.contains(&k) {
            states.push((n.clone(), plug(e).expand()));
        }
    }
    let new_name = format!("{}'", sys.name);
    let new_sys = SystemDef::new(new_name, free.clone(), states.clone(), sys.exo().to_vec(), vec![])
        .map_err(|e| ReductionError::ReexpressionFailed(e.to_string()))?;

    let mut inverse: Vec<(String, Expr)> = Vec::new();
    for v in &vars {
        let e = if *v == xp {
            match &sol_expr {
                Some(s) => retag(s, &kinds),
                None => Expr::var(xp.clone()),
            }
        } else {
            plug(&inv[v])
        };
        inverse.push((v.name().to_string(), e));
    }
    let conditions: Vec<Expr> = conditions.iter().map(|c| retag(c, &kinds)).collect();

    // every new equation and the solved pivot hold on the previous system
    for (n, rhs) in &states {
        let lhs = nth_derivative(&def_map[n], 1, &ctx)?;
        let rhs_prev = compose(rhs, &def_map, &ctx)?;
        if !identically_zero(&(lhs - rhs_prev))? {
            return Err(ReductionError::ReexpressionFailed(format!("{n}' = {rhs} does not hold")));
        }
    }
    for (n, e) in &inverse {
        if carried.as_deref() == Some(n.as_str()) {
            continue;
        }
        let back = compose(e, &def_map, &ctx)?;
        let x = Expr::var(sys.var(n).expect("system variable"));
        if !identically_zero(&(back - x))? {
            return Err(ReductionError::ReexpressionFailed(format!("inverse of {n} does not round-trip")));
        }
    }

    let mut relations: Vec<String> = states.iter().map(|(n, h)| format!("{n}' = {h}")).collect();
    if let (Some(j), Some(s)) = (solved, &sol_expr) {
        relations.push(format!("{} = {}", xp, retag(s, &kinds)));
        let _ = j;
    }
    let step = ReductionStep {
        branch,
        pivot: xp.to_string(),
        field: vf
            .coords
            .iter()
            .zip(&vf.coeffs)
            .map(|(c, a)| (c.to_string(), a.to_string()))
            .collect(),
        new_variables: defs.iter().map(|(n, d)| (n.clone(), d.to_string())).collect(),
        relations,
        companions,
        solved: solved.map(|j| (derived[j].0.clone(), retag(sol_expr.as_ref().expect("solved"), &kinds).to_string())),
        inverse: inverse.iter().map(|(n, e)| (n.clone(), e.to_string())).collect(),
        carried: carried.clone(),
        conditions: conditions.iter().map(|c| format!("{c} != 0")).collect(),
        measure_before: None,
        measure_after: None,
        reduced_to_m1: carried.is_some(),
        rouchon: None,
        note: None,
    };
    Ok(StepResult {
        system: new_sys,
        step,
        defs,
        inverse,
        conditions,
        carried,
    })
}
