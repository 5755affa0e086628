use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

/// Role a jet variable plays in a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKind {
    /// One of the free pair `x_1, x_2` of an explicit system.
    Free,
    /// A state `x_i`, `i > m`, whose derivative is given by an equation.
    State,
    /// An arbitrary function `z_j` of a parametrization (or a flat output `b_j`).
    Arbitrary,
    /// Exogenous coordinate with a declared derivative (time, constant parameters).
    Exogenous,
    /// Constant coefficient `C_i` of the ghost operator.
    Ghost,
}

/// A jet coordinate `name^(order)`.
///
/// Identity is the pair `(name, order)`; the kind is carried along as metadata
/// and does not take part in comparisons.
#[derive(Clone, Debug)]
pub struct Variable {
    name: Arc<str>,
    kind: VarKind,
    order: u32,
}

impl Variable {
    pub fn new(name: impl Into<Arc<str>>, kind: VarKind, order: u32) -> Self {
        let order = if kind == VarKind::Ghost { 0 } else { order };
        Variable {
            name: name.into(),
            kind,
            order,
        }
    }

    pub fn free(name: &str) -> Self {
        Self::new(name, VarKind::Free, 0)
    }

    pub fn state(name: &str) -> Self {
        Self::new(name, VarKind::State, 0)
    }

    pub fn arbitrary(name: &str) -> Self {
        Self::new(name, VarKind::Arbitrary, 0)
    }

    pub fn exogenous(name: &str) -> Self {
        Self::new(name, VarKind::Exogenous, 0)
    }

    pub fn ghost(name: &str) -> Self {
        Self::new(name, VarKind::Ghost, 0)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> VarKind {
        self.kind
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn is_ghost(&self) -> bool {
        self.kind == VarKind::Ghost
    }

    /// The same variable at jet level `order`. Ghosts stay at level 0.
    pub fn with_order(&self, order: u32) -> Self {
        Variable {
            name: self.name.clone(),
            kind: self.kind,
            order: if self.is_ghost() { 0 } else { order },
        }
    }

    /// `self` differentiated `k` more times.
    pub fn shifted(&self, k: u32) -> Self {
        self.with_order(self.order + k)
    }

    pub fn base(&self) -> Self {
        self.with_order(0)
    }

    pub fn with_kind(&self, kind: VarKind) -> Self {
        Variable::new(self.name.clone(), kind, self.order)
    }
}

impl PartialEq for Variable {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.name == other.name
    }
}

impl Eq for Variable {}

impl Hash for Variable {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.name.hash(state);
        self.order.hash(state);
    }
}

impl PartialOrd for Variable {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Variable {
    fn cmp(&self, other: &Self) -> Ordering {
        self.name
            .cmp(&other.name)
            .then(self.order.cmp(&other.order))
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        match self.order {
            0..=3 => {
                for _ in 0..self.order {
                    f.write_str("'")?;
                }
                Ok(())
            }
            k => write!(f, "^({k})"),
        }
    }
}
