use std::collections::{HashMap, HashSet};

use crate::expr::{depends_on, Expr, VarKind, Variable};

use super::{total_derivative, Derivation, DiffietyError, TrivialContext};

/// An explicit order-one system `x_i' = h_i(x, x_1', x_2', u)`, `i > m`,
/// over the free variables `x_1..x_m` (`m ∈ {1, 2}`), with exogenous
/// coordinates carrying declared derivatives and optional implicit
/// constraints `H = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemDef {
    pub name: String,
    free: Vec<String>,
    states: Vec<(String, Expr)>,
    exo: Vec<(String, Expr)>,
    constraints: Vec<Expr>,
}

impl SystemDef {
    pub fn new(
        name: impl Into<String>,
        free: Vec<String>,
        states: Vec<(String, Expr)>,
        exo: Vec<(String, Expr)>,
        constraints: Vec<Expr>,
    ) -> Result<Self, DiffietyError> {
        let name = name.into();
        if free.is_empty() || free.len() > 2 {
            return Err(DiffietyError::InvalidSystem(format!(
                "{name}: differential dimension must be 1 or 2, got {}",
                free.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in free
            .iter()
            .chain(states.iter().map(|(n, _)| n))
            .chain(exo.iter().map(|(n, _)| n))
        {
            if !seen.insert(n.clone()) {
                return Err(DiffietyError::DuplicateDeclaration(n.clone()));
            }
        }
        let sys = SystemDef {
            name,
            free,
            states,
            exo,
            constraints,
        };
        sys.validate()?;
        Ok(sys)
    }

    fn validate(&self) -> Result<(), DiffietyError> {
        for (x, h) in &self.states {
            for v in h.variables() {
                let ok = match self.kind_of(v.name()) {
                    Some(VarKind::Free) => v.order() <= 1,
                    Some(VarKind::State) | Some(VarKind::Exogenous) => v.order() == 0,
                    _ => false,
                };
                if !ok {
                    return Err(DiffietyError::InvalidSystem(format!(
                        "right-hand side of {x}' may not reference {v}"
                    )));
                }
            }
        }
        for (u, der) in &self.exo {
            for v in der.variables() {
                if self.kind_of(v.name()) != Some(VarKind::Exogenous) || v.order() > 0 {
                    return Err(DiffietyError::InvalidSystem(format!(
                        "derivative of exogenous {u} may only use exogenous coordinates, found {v}"
                    )));
                }
            }
        }
        for h in &self.constraints {
            for v in h.variables() {
                match self.kind_of(v.name()) {
                    Some(VarKind::Exogenous) if v.order() > 0 => {
                        return Err(DiffietyError::InvalidSystem(format!(
                            "constraint uses exogenous derivative {v}"
                        )))
                    }
                    Some(_) => {}
                    None => return Err(DiffietyError::UnknownVariable(v.name().to_string())),
                }
            }
        }
        Ok(())
    }

    /// Differential dimension.
    pub fn m(&self) -> usize {
        self.free.len()
    }

    /// Number of system variables `x_1..x_n`.
    pub fn n(&self) -> usize {
        self.free.len() + self.states.len()
    }

    pub fn free_names(&self) -> &[String] {
        &self.free
    }

    pub fn states(&self) -> &[(String, Expr)] {
        &self.states
    }

    pub fn exo(&self) -> &[(String, Expr)] {
        &self.exo
    }

    pub fn constraints(&self) -> &[Expr] {
        &self.constraints
    }

    /// `x_1..x_n`: free variables first, then states, in declaration order.
    pub fn var_names(&self) -> Vec<String> {
        self.free
            .iter()
            .cloned()
            .chain(self.states.iter().map(|(n, _)| n.clone()))
            .collect()
    }

    /// Level-0 variables `x_1..x_n` with their kinds.
    pub fn vars(&self) -> Vec<Variable> {
        self.free
            .iter()
            .map(|n| Variable::free(n))
            .chain(self.states.iter().map(|(n, _)| Variable::state(n)))
            .collect()
    }

    pub fn var(&self, name: &str) -> Option<Variable> {
        match self.kind_of(name)? {
            VarKind::Free => Some(Variable::free(name)),
            VarKind::State => Some(Variable::state(name)),
            VarKind::Exogenous => Some(Variable::exogenous(name)),
            _ => None,
        }
    }

    pub fn kind_of(&self, name: &str) -> Option<VarKind> {
        if self.free.iter().any(|n| n == name) {
            Some(VarKind::Free)
        } else if self.states.iter().any(|(n, _)| n == name) {
            Some(VarKind::State)
        } else if self.exo.iter().any(|(n, _)| n == name) {
            Some(VarKind::Exogenous)
        } else {
            None
        }
    }

    pub fn is_system_var(&self, name: &str) -> bool {
        matches!(self.kind_of(name), Some(VarKind::Free | VarKind::State))
    }

    pub fn rhs(&self, state: &str) -> Option<&Expr> {
        self.states.iter().find(|(n, _)| n == state).map(|(_, h)| h)
    }

    /// Free derivative `x_j'` as a variable.
    pub fn free_derivative(&self, j: usize) -> Variable {
        Variable::free(&self.free[j]).shifted(1)
    }

    /// `P_i := x_i' − h_i` for every state.
    pub fn equations(&self) -> Vec<Expr> {
        self.states
            .iter()
            .map(|(n, h)| Expr::var(Variable::state(n).shifted(1)) - h)
            .collect()
    }

    /// `e_i = ord_{x_i} H` for every system variable, recomputed structurally.
    pub fn constraint_orders(&self, h: &Expr) -> Vec<(String, Option<u32>)> {
        self.var_names()
            .into_iter()
            .map(|n| {
                let o = super::ord(h, &n);
                (n, o)
            })
            .collect()
    }

    pub fn trivial_context(&self) -> TrivialContext {
        TrivialContext::with_exo(self.exo.iter().cloned())
    }

    pub fn context(&self) -> SystemContext<'_> {
        SystemContext { system: self }
    }

    /// True if any state equation or constraint mentions the exogenous `t`.
    pub fn depends_on_exo(&self, t: &str) -> bool {
        let tv = Variable::exogenous(t);
        self.states.iter().any(|(_, h)| depends_on(h, &tv))
            || self.constraints.iter().any(|h| depends_on(h, &tv))
    }
}

/// The system diffiety: free variables shift, `δx_i = h_i` for states and
/// state jets above level 0 are rewritten through the equations.
#[derive(Clone, Copy, Debug)]
pub struct SystemContext<'a> {
    system: &'a SystemDef,
}

impl<'a> SystemContext<'a> {
    pub fn system(&self) -> &'a SystemDef {
        self.system
    }

    /// `x_i^(k)` expressed on the system (free jets, states, exogenous).
    pub fn state_jet(&self, name: &str, k: u32) -> Result<Expr, DiffietyError> {
        let h = self
            .system
            .rhs(name)
            .ok_or_else(|| DiffietyError::UnknownVariable(name.to_string()))?;
        match k {
            0 => Ok(Expr::var(Variable::state(name))),
            _ => {
                let mut e = h.clone();
                for _ in 1..k {
                    e = total_derivative(&e, self)?;
                }
                Ok(e)
            }
        }
    }

    /// Replace every state jet `x_i^(k)`, `k ≥ 1`, by its system expression.
    pub fn reduce(&self, e: &Expr) -> Result<Expr, DiffietyError> {
        let mut map = HashMap::new();
        for v in e.variables() {
            if v.order() > 0 && self.system.kind_of(v.name()) == Some(VarKind::State) {
                map.insert(v.clone(), self.state_jet(v.name(), v.order())?);
            }
        }
        Ok(e.subs(&map))
    }
}

impl Derivation for SystemContext<'_> {
    fn derivative_of(&self, v: &Variable) -> Result<Expr, DiffietyError> {
        if v.is_ghost() {
            return Ok(Expr::zero());
        }
        match self.system.kind_of(v.name()) {
            Some(VarKind::Free) => Ok(Expr::var(Variable::free(v.name()).shifted(v.order() + 1))),
            Some(VarKind::State) => self.state_jet(v.name(), v.order() + 1),
            Some(VarKind::Exogenous) => self
                .system
                .trivial_context()
                .exo_jet(v.name(), v.order() + 1),
            _ => Err(DiffietyError::UnknownVariable(v.to_string())),
        }
    }

    fn prepare(&self, e: &Expr) -> Result<Expr, DiffietyError> {
        self.reduce(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffiety::{jet, total_derivative};
    use crate::expr::{equivalent, EquivOptions};

    fn chained() -> SystemDef {
        let h = jet("x2", VarKind::Free, 0) * jet("x1", VarKind::Free, 1);
        SystemDef::new(
            "chained",
            vec!["x1".into(), "x2".into()],
            vec![("x3".into(), h)],
            vec![],
            vec![],
        )
        .unwrap()
    }

    fn car() -> SystemDef {
        let th = jet("theta", VarKind::Free, 0);
        let h = jet("x", VarKind::Free, 1) * Expr::tan(th);
        SystemDef::new(
            "car",
            vec!["x".into(), "theta".into()],
            vec![("y".into(), h)],
            vec![("d".into(), Expr::zero())],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn derivative_of_state_is_rhs() {
        let s = chained();
        let d = total_derivative(&jet("x3", VarKind::State, 0), &s.context()).unwrap();
        assert_eq!(d, jet("x2", VarKind::Free, 0) * jet("x1", VarKind::Free, 1));
    }

    #[test]
    fn car_first_integral_derivative() {
        let s = car();
        let th = jet("theta", VarKind::Free, 0);
        let x = jet("x", VarKind::Free, 0);
        let e = jet("y", VarKind::State, 0) - &x * Expr::tan(th.clone());
        let d = total_derivative(&e, &s.context()).unwrap();
        let expected = -(x * jet("theta", VarKind::Free, 1) * (Expr::one() + Expr::powi(Expr::tan(th), 2)));
        assert_eq!(d, expected);
        assert!(equivalent(&d, &expected, &EquivOptions::default()).unwrap());
    }

    #[test]
    fn rejects_second_derivatives_in_rhs() {
        let err = SystemDef::new(
            "bad",
            vec!["x1".into(), "x2".into()],
            vec![("x3".into(), jet("x1", VarKind::Free, 2))],
            vec![],
            vec![],
        );
        assert!(matches!(err, Err(DiffietyError::InvalidSystem(_))));
    }

    #[test]
    fn constraint_orders_are_structural() {
        let s = car();
        let th = jet("theta", VarKind::Free, 0);
        let h = jet("x", VarKind::Free, 1) * Expr::sin(th.clone()) - jet("y", VarKind::State, 1) * Expr::cos(th);
        let orders: HashMap<String, Option<u32>> = s.constraint_orders(&h).into_iter().collect();
        assert_eq!(orders["x"], Some(1));
        assert_eq!(orders["y"], Some(1));
        assert_eq!(orders["theta"], Some(0));
    }
}
