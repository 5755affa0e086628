use std::collections::HashMap;

use crate::diffiety::SystemDef;
use crate::expr::{depends_on, equivalent, EquivOptions, Expr, Sampler, VarKind, Variable};

use super::classify::{classify_generic, Classification};
use super::{GhostOperator, HomogeneousSystem, RouchonError};

/// Highest ghost iterate degree accepted for system equations.
pub const GHOST_KMAX: u32 = 4;

fn identically_zero(e: &Expr) -> bool {
    e.is_zero() || matches!(equivalent(e, &Expr::zero(), &EquivOptions::default()), Ok(true))
}

/// `h_i = Σ_j f_{i,j} x_j' + g_i` for every state.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearForm {
    /// Free derivatives `x_1', x_2'` in system order.
    pub free: Vec<Variable>,
    pub rows: Vec<LinearRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearRow {
    pub state: String,
    pub f: Vec<Expr>,
    pub g: Expr,
}

impl LinearForm {
    pub fn row(&self, state: &str) -> Option<&LinearRow> {
        self.rows.iter().find(|r| r.state == state)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Linearity {
    AllLinear(LinearForm),
    Nonlinear {
        state: String,
        wrt: (Variable, Variable),
        second_derivative: Expr,
    },
}

/// Exact second partials of every `h_i` in the free derivatives.
pub fn linearity_test(sys: &SystemDef) -> Linearity {
    let free: Vec<Variable> = (0..sys.m()).map(|j| sys.free_derivative(j)).collect();
    for (x, h) in sys.states() {
        for a in 0..free.len() {
            for b in a..free.len() {
                let s = h.partial(&free[a]).partial(&free[b]);
                if !identically_zero(&s) {
                    return Linearity::Nonlinear {
                        state: x.clone(),
                        wrt: (free[a].clone(), free[b].clone()),
                        second_derivative: s,
                    };
                }
            }
        }
    }
    let zero_free: HashMap<Variable, Expr> = free.iter().map(|v| (v.clone(), Expr::zero())).collect();
    let rows = sys
        .states()
        .iter()
        .map(|(x, h)| LinearRow {
            state: x.clone(),
            f: free.iter().map(|v| h.partial(v)).collect(),
            g: h.subs(&zero_free),
        })
        .collect();
    Linearity::AllLinear(LinearForm { free, rows })
}

/// Which rule produced `v_2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum V2Rule {
    /// `F` depends on the second free derivative: `v_2 = F`.
    SlopeAsV2,
    /// `F = f_2(x)`: `v_2 = x_2' − f_2 v_1`.
    SlopeAsCoefficient,
}

/// `x_i' = f_i(x, v_2, u) v_1 + g_i(x, v_2, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RuledForm {
    /// Index (0 or 1) of the free variable playing `x_1`.
    pub pivot: usize,
    /// System variables with the pivot first, then the other free variable,
    /// then the states.
    pub vars: Vec<String>,
    pub v1: Expr,
    /// `v_2` over `(x, x_1', x_2', u)`.
    pub v2: Expr,
    /// Placeholder standing for `v_2` inside `f_i`, `g_i`.
    pub v2_symbol: Variable,
    pub f: Vec<Expr>,
    pub g: Vec<Expr>,
    /// Selected ray of the ghost forms, in system order.
    pub ray: Vec<Expr>,
    pub rule: V2Rule,
}

impl RuledForm {
    /// Replace the `v_2` placeholder by its definition.
    pub fn unfold(&self, e: &Expr) -> Expr {
        e.subs1(&self.v2_symbol, self.v2.clone())
    }

    pub fn f_of(&self, var: &str) -> Option<&Expr> {
        self.vars.iter().position(|v| v == var).map(|i| &self.f[i])
    }

    pub fn g_of(&self, var: &str) -> Option<&Expr> {
        self.vars.iter().position(|v| v == var).map(|i| &self.g[i])
    }

    /// True if some `f_i` involves `v_2`.
    pub fn f_depends_on_v2(&self) -> bool {
        self.f.iter().any(|f| depends_on(f, &self.v2_symbol))
    }
}

/// Ghost forms of the system equations with one target `x_i'` per system
/// variable, in system order.
pub fn system_ghost_forms(sys: &SystemDef) -> Result<(GhostOperator, HomogeneousSystem), RouchonError> {
    let targets: Vec<Variable> = sys.vars().iter().map(|v| v.shifted(1)).collect();
    let op = GhostOperator::new(targets);
    let hs = HomogeneousSystem::from_relations(&op, &sys.equations(), GHOST_KMAX)?;
    Ok((op, hs))
}

fn fresh_name(sys: &SystemDef, stem: &str) -> String {
    let mut name = stem.to_string();
    while sys.kind_of(&name).is_some() {
        name.push('_');
    }
    name
}

/// Ruled normal form from the selected ray of the ghost forms.
pub fn ruled_rewrite(sys: &SystemDef, ray_index: Option<usize>, seed: u64) -> Result<RuledForm, RouchonError> {
    if sys.m() != 2 {
        return Err(RouchonError::NotRuled("ruled rewrite needs two free variables".into()));
    }
    if let Linearity::AllLinear(_) = linearity_test(sys) {
        return Err(RouchonError::NotRuled("system is linear in the free derivatives".into()));
    }
    let (_, hs) = system_ghost_forms(sys)?;
    let gc = classify_generic(&hs, &Sampler::default(), seed)?;
    let rays = match gc.classification {
        Classification::Dim0 { rays } => rays,
        Classification::EmptyOverReals { .. } => {
            return Err(RouchonError::NotRuled("ghost forms have no real nonzero solution".into()))
        }
        Classification::DimAtLeast1 { witness } => {
            return Err(RouchonError::NotRuled(format!("solution set is not of projective dimension 0 ({witness})")))
        }
    };
    let idx = ray_index.unwrap_or(0);
    let ray = rays
        .get(idx)
        .cloned()
        .ok_or(RouchonError::AmbiguousRay { requested: idx, available: rays.len() })?;
    let base = &gc.base_point;
    let nonzero = |e: &Expr| e.evaluate(base).map(|v| v.abs() > 1e-10).unwrap_or(true);
    let pivot = if nonzero(&ray[0]) {
        0
    } else if nonzero(&ray[1]) {
        1
    } else {
        return Err(RouchonError::NotRuled("selected ray vanishes on both free directions".into()));
    };
    let other = 1 - pivot;
    let names = sys.var_names();
    let xp = Variable::free(&names[pivot]).shifted(1);
    let xq = Variable::free(&names[other]).shifted(1);
    let slope = |i: usize| (&ray[i] / &ray[pivot]).expand();
    let f_q = slope(other);
    let vsym = Variable::new(fresh_name(sys, "v2"), VarKind::Free, 0);
    let vs = Expr::var(vsym.clone());

    let (rule, v2, xq_back, f_other, g_other) = if depends_on(&f_q, &xq) {
        let a = f_q.partial(&xq);
        if !identically_zero(&a.partial(&xq)) {
            return Err(RouchonError::NotRuled(format!("v2 = {f_q} is not affine in {xq}")));
        }
        let b = f_q.subs1(&xq, Expr::zero());
        let back = ((&vs - b) / a).expand();
        let g = (Expr::var(xq.clone()) - &vs * Expr::var(xp.clone())).subs1(&xq, back.clone());
        (V2Rule::SlopeAsV2, f_q.clone(), back, vs.clone(), g)
    } else {
        let v2 = Expr::var(xq.clone()) - &f_q * Expr::var(xp.clone());
        let back = &vs + &f_q * Expr::var(xp.clone());
        (V2Rule::SlopeAsCoefficient, v2, back, f_q.clone(), vs.clone())
    };

    let mut vars = vec![names[pivot].clone(), names[other].clone()];
    let mut f = vec![Expr::one(), f_other];
    let mut g = vec![Expr::zero(), g_other];
    for (i, name) in names.iter().enumerate().skip(2) {
        let h = sys.rhs(name).expect("state");
        let fi = slope(i).subs1(&xq, xq_back.clone());
        let gi = (h - slope(i) * Expr::var(xp.clone())).subs1(&xq, xq_back.clone());
        vars.push(name.clone());
        f.push(fi);
        g.push(gi);
    }
    for e in f.iter().chain(g.iter()) {
        if depends_on(e, &xp) || depends_on(e, &xq) {
            return Err(RouchonError::NotRuled(format!("{e} still involves a free derivative")));
        }
    }
    let form = RuledForm {
        pivot,
        vars,
        v1: Expr::var(xp),
        v2,
        v2_symbol: vsym,
        f,
        g,
        ray,
        rule,
    };
    verify_ruled(sys, &form)?;
    Ok(form)
}

/// `x_i' ≡ f_i v_1 + g_i` for every system variable.
pub fn verify_ruled(sys: &SystemDef, form: &RuledForm) -> Result<(), RouchonError> {
    for (i, name) in form.vars.iter().enumerate() {
        let lhs = match sys.rhs(name) {
            Some(h) => h.clone(),
            None => Expr::var(Variable::free(name).shifted(1)),
        };
        let rhs = form.unfold(&(&form.f[i] * &form.v1 + &form.g[i]));
        let ok = equivalent(&lhs, &rhs, &EquivOptions::default())?;
        if !ok {
            return Err(RouchonError::NotRuled(format!("round trip fails for {name}'")));
        }
    }
    Ok(())
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

    fn system(h: Expr) -> SystemDef {
        SystemDef::new("s", vec!["x1".into(), "x2".into()], vec![("x3".into(), h)], vec![], vec![]).unwrap()
    }

    #[test]
    fn linearity_of_chained() {
        match linearity_test(&system(x("x2") * d("x1"))) {
            Linearity::AllLinear(l) => {
                let r = l.row("x3").unwrap();
                assert_eq!(r.f, vec![x("x2"), Expr::zero()]);
                assert!(r.g.is_zero());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn affine_in_states() {
        let h = d("x1") + Expr::var(Variable::state("x3")) * d("x2");
        match linearity_test(&system(h)) {
            Linearity::AllLinear(l) => assert_eq!(l.rows[0].f[1], Expr::var(Variable::state("x3"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bilinear_is_nonlinear() {
        match linearity_test(&system(d("x1") * d("x2"))) {
            Linearity::Nonlinear { second_derivative, .. } => assert_eq!(second_derivative, Expr::one()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bilinear_rewrite() {
        let s = system(d("x1") * d("x2"));
        let r = ruled_rewrite(&s, None, 0).unwrap();
        assert_eq!(r.pivot, 0);
        assert_eq!(r.v1, d("x1"));
        assert_eq!(r.v2, d("x2"));
        assert_eq!(r.f_of("x3").unwrap(), &Expr::var(r.v2_symbol.clone()));
        assert!(r.g_of("x3").unwrap().is_zero());
        assert_eq!(r.rule, V2Rule::SlopeAsCoefficient);
    }

    #[test]
    fn bilinear_with_drift() {
        let s = system(d("x1") * d("x2") + x("x1"));
        let r = ruled_rewrite(&s, None, 0).unwrap();
        assert_eq!(r.f_of("x3").unwrap(), &Expr::var(r.v2_symbol.clone()));
        assert_eq!(r.g_of("x3").unwrap(), &x("x1"));
    }

    #[test]
    fn second_ray_swaps_pivot() {
        let s = system(d("x1") * d("x2"));
        let r = ruled_rewrite(&s, Some(1), 0).unwrap();
        assert_eq!(r.pivot, 1);
        assert_eq!(r.v1, d("x2"));
        assert!(matches!(
            ruled_rewrite(&s, Some(2), 0),
            Err(RouchonError::AmbiguousRay { requested: 2, available: 2 })
        ));
    }

    #[test]
    fn sum_of_squares_not_ruled() {
        let s = system(Expr::powi(d("x1"), 2) + Expr::powi(d("x2"), 2));
        assert!(matches!(ruled_rewrite(&s, None, 0), Err(RouchonError::NotRuled(_))));
    }
}
