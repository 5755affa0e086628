use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EvalOptions, Expr, ExprError, Point, Variable};

/// Per-variable uniform sampling boxes.
#[derive(Clone, Debug)]
pub struct Sampler {
    pub default_box: (f64, f64),
    pub boxes: HashMap<Variable, (f64, f64)>,
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler {
            default_box: (-1.0, 1.0),
            boxes: HashMap::new(),
        }
    }
}

impl Sampler {
    pub fn with_box(mut self, v: Variable, lo: f64, hi: f64) -> Self {
        self.boxes.insert(v, (lo, hi));
        self
    }

    pub fn bounds(&self, v: &Variable) -> (f64, f64) {
        self.boxes.get(v).copied().unwrap_or(self.default_box)
    }

    pub fn draw<'a, R: Rng + ?Sized>(
        &self,
        vars: impl IntoIterator<Item = &'a Variable>,
        rng: &mut R,
    ) -> Point {
        vars.into_iter()
            .map(|v| {
                let (lo, hi) = self.bounds(v);
                let x = if hi > lo { rng.gen_range(lo..hi) } else { lo };
                (v.clone(), x)
            })
            .collect()
    }
}

/// Settings for the probabilistic equality test.
#[derive(Clone, Debug)]
pub struct EquivOptions {
    pub trials: usize,
    pub tol: f64,
    pub seed: u64,
    /// Denominator guard; points where a subterm trips it are redrawn.
    pub guard: f64,
    pub sampler: Sampler,
}

impl Default for EquivOptions {
    fn default() -> Self {
        EquivOptions {
            trials: 20,
            tol: 1e-9,
            seed: 0,
            guard: 1e-6,
            sampler: Sampler::default(),
        }
    }
}

/// Redraw budget per requested trial.
const DRAWS_PER_TRIAL: usize = 50;

/// Sampled equality test: true iff `|a − b| ≤ tol·(1 + max(|a|,|b|))` at every
/// valid sample. Structurally equal inputs short-circuit. Can report false
/// positives when the difference vanishes on all drawn points.
pub fn equivalent(a: &Expr, b: &Expr, opts: &EquivOptions) -> Result<bool, ExprError> {
    if a == b {
        return Ok(true);
    }
    let diff = a - b;
    if diff.is_zero() {
        return Ok(true);
    }
    let vars: BTreeSet<Variable> = a.variables().union(&b.variables()).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let eval_opts = EvalOptions { guard: opts.guard };
    let budget = opts.trials.max(1) * DRAWS_PER_TRIAL;
    let mut accepted = 0;
    for _ in 0..budget {
        let p = opts.sampler.draw(&vars, &mut rng);
        let (va, vb) = match (a.evaluate_with(&p, eval_opts), b.evaluate_with(&p, eval_opts)) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(ExprError::UnboundVariable(v)), _) | (_, Err(ExprError::UnboundVariable(v))) => {
                return Err(ExprError::UnboundVariable(v))
            }
            _ => continue,
        };
        if (va - vb).abs() > opts.tol * (1.0 + va.abs().max(vb.abs())) {
            return Ok(false);
        }
        accepted += 1;
        if accepted >= opts.trials.max(1) {
            return Ok(true);
        }
    }
    if accepted > 0 {
        Ok(true)
    } else {
        Err(ExprError::NoValidSample(budget))
    }
}

/// True iff `∂e/∂v` is not identically zero: structural test first, then
/// [`equivalent`] against zero. Undecidable samples count as dependence.
pub fn depends_on(e: &Expr, v: &Variable) -> bool {
    if !e.contains(v) {
        return false;
    }
    let d = e.partial(v);
    if d.is_zero() {
        return false;
    }
    if d.is_numeric() {
        return true;
    }
    !matches!(equivalent(&d, &Expr::zero(), &EquivOptions::default()), Ok(true))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(name: &str, k: u32) -> Expr {
        Expr::var(Variable::arbitrary(name).shifted(k))
    }

    #[test]
    fn pythagoras_is_one() {
        let u = z("z1", 0);
        let e = Expr::powi(Expr::sin(u.clone()), 2) + Expr::powi(Expr::cos(u), 2);
        assert!(equivalent(&e, &Expr::one(), &EquivOptions::default()).unwrap());
    }

    #[test]
    fn distinct_jets_differ() {
        assert!(!equivalent(&z("z1", 1), &z("z2", 1), &EquivOptions::default()).unwrap());
    }

    #[test]
    fn impossible_domain_reports_no_sample() {
        let e = Expr::sqrt(Expr::int(-2) - Expr::powi(z("z1", 0), 2));
        assert!(matches!(
            equivalent(&e, &Expr::one(), &EquivOptions::default()),
            Err(ExprError::NoValidSample(_))
        ));
    }

    #[test]
    fn dependence() {
        let x1p = Variable::free("x1").shifted(1);
        let x2p = Variable::free("x2").shifted(1);
        let e = Expr::var(Variable::state("x3").shifted(1)) - Expr::var(x1p.clone()) * Expr::var(x2p);
        assert!(depends_on(&e, &x1p));
        assert!(!depends_on(&z("z2", 5), &Variable::arbitrary("z1")));
        // hidden cancellation: sin^2 + cos^2 in x1'
        let u = Expr::var(x1p.clone());
        let hidden = Expr::powi(Expr::sin(u.clone()), 2) + Expr::powi(Expr::cos(u), 2);
        assert!(!depends_on(&hidden, &x1p));
    }
}
