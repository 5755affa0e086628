use std::cell::RefCell;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::expr::{Expr, ExprError, Point, VarKind, Variable};
use crate::numeric;

use super::{nth_derivative, total_derivative, DiffietyError, SystemDef, TrivialContext};

/// Exclusion predicates must exceed this magnitude at accepted samples.
pub const CHART_GUARD: f64 = 1e-3;

const MAX_ATTEMPTS: usize = 1000;

/// One chart of a parametrization: images of the system variables in
/// z-jets and exogenous coordinates, the nondegeneracy guards and the
/// sampling boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub name: String,
    maps: Vec<(String, Expr)>,
    excludes: Vec<Expr>,
    boxes: Vec<(Variable, (f64, f64))>,
}

impl Chart {
    /// Entries may reference system variables mapped earlier in the same
    /// chart (at any order); those references are resolved here.
    pub fn new(
        name: impl Into<String>,
        raw_maps: Vec<(String, Expr)>,
        raw_excludes: Vec<Expr>,
        boxes: Vec<(Variable, (f64, f64))>,
        ctx: &TrivialContext,
    ) -> Result<Chart, DiffietyError> {
        let name = name.into();
        let mut maps: Vec<(String, Expr)> = Vec::with_capacity(raw_maps.len());
        for (x, e) in raw_maps {
            if maps.iter().any(|(y, _)| *y == x) {
                return Err(DiffietyError::DuplicateDeclaration(format!("{name}.{x}")));
            }
            let resolved = resolve(&e, &maps, ctx)?;
            maps.push((x, resolved));
        }
        let excludes = raw_excludes
            .iter()
            .map(|e| resolve(e, &maps, ctx))
            .collect::<Result<Vec<_>, _>>()?;
        let chart = Chart {
            name,
            maps,
            excludes,
            boxes,
        };
        if chart.excludes.is_empty() && chart.maps.iter().any(|(_, e)| e.has_singular_points()) {
            return Err(DiffietyError::MissingExclusion(chart.name));
        }
        Ok(chart)
    }

    /// Chart from already resolved maps, without the exclusion requirement
    /// (used for charts induced by composing with another morphism).
    pub fn derived(
        name: impl Into<String>,
        maps: Vec<(String, Expr)>,
        excludes: Vec<Expr>,
        boxes: Vec<(Variable, (f64, f64))>,
    ) -> Chart {
        Chart {
            name: name.into(),
            maps,
            excludes,
            boxes,
        }
    }

    pub fn maps(&self) -> &[(String, Expr)] {
        &self.maps
    }

    pub fn map(&self, var: &str) -> Option<&Expr> {
        self.maps.iter().find(|(n, _)| n == var).map(|(_, e)| e)
    }

    pub fn excludes(&self) -> &[Expr] {
        &self.excludes
    }

    pub fn boxes(&self) -> &[(Variable, (f64, f64))] {
        &self.boxes
    }

    fn bounds(&self, v: &Variable) -> (f64, f64) {
        self.boxes
            .iter()
            .find(|(w, _)| w == v)
            .map(|(_, b)| *b)
            .unwrap_or((-1.0, 1.0))
    }
}

fn resolve(
    e: &Expr,
    earlier: &[(String, Expr)],
    ctx: &TrivialContext,
) -> Result<Expr, DiffietyError> {
    let mut map = HashMap::new();
    for v in e.variables() {
        if let Some((_, img)) = earlier.iter().find(|(n, _)| n == v.name()) {
            map.insert(v.clone(), nth_derivative(img, v.order(), ctx)?);
        }
    }
    Ok(e.subs(&map))
}

/// A morphism from the trivial diffiety in `z_1..z_μ` to a system, given
/// on one or more charts.
#[derive(Clone, Debug, PartialEq)]
pub struct Parametrization {
    pub name: String,
    pub system: String,
    arbitrary: Vec<String>,
    charts: Vec<Chart>,
}

impl Parametrization {
    pub fn new(
        name: impl Into<String>,
        sys: &SystemDef,
        arbitrary: Vec<String>,
        charts: Vec<Chart>,
    ) -> Result<Self, DiffietyError> {
        let name = name.into();
        if arbitrary.len() < sys.m() {
            return Err(DiffietyError::InvalidSystem(format!(
                "{name}: {} arbitrary functions for differential dimension {}",
                arbitrary.len(),
                sys.m()
            )));
        }
        if charts.is_empty() {
            return Err(DiffietyError::InvalidSystem(format!("{name}: no chart")));
        }
        for c in &charts {
            for x in sys.var_names() {
                if c.map(&x).is_none() {
                    return Err(DiffietyError::ChartIncomplete {
                        chart: c.name.clone(),
                        var: x,
                    });
                }
            }
            for (x, e) in &c.maps {
                if !sys.is_system_var(x) {
                    return Err(DiffietyError::UnknownVariable(x.clone()));
                }
                for v in e.variables() {
                    let known = arbitrary.iter().any(|z| z == v.name())
                        || sys.kind_of(v.name()) == Some(VarKind::Exogenous);
                    if !known {
                        return Err(DiffietyError::UnknownVariable(v.to_string()));
                    }
                }
            }
        }
        Ok(Parametrization {
            name,
            system: sys.name.clone(),
            arbitrary,
            charts,
        })
    }

    /// `μ`.
    pub fn mu(&self) -> usize {
        self.arbitrary.len()
    }

    pub fn arbitrary(&self) -> &[String] {
        &self.arbitrary
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    pub fn chart(&self, name: &str) -> Option<&Chart> {
        self.charts.iter().find(|c| c.name == name)
    }
}

/// `φ*` on one chart, with prolongations cached per jet coordinate.
pub struct Pullback<'a> {
    chart: &'a Chart,
    sys: &'a SystemDef,
    trivial: TrivialContext,
    cache: RefCell<HashMap<Variable, Expr>>,
}

impl<'a> Pullback<'a> {
    pub fn new(sys: &'a SystemDef, chart: &'a Chart) -> Self {
        Pullback {
            chart,
            sys,
            trivial: sys.trivial_context(),
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn chart(&self) -> &Chart {
        self.chart
    }

    pub fn trivial(&self) -> &TrivialContext {
        &self.trivial
    }

    /// `φ*(v)` for a single jet coordinate.
    pub fn image(&self, v: &Variable) -> Result<Expr, DiffietyError> {
        if let Some(e) = self.cache.borrow().get(v) {
            return Ok(e.clone());
        }
        let out = match self.sys.kind_of(v.name()) {
            Some(VarKind::Free | VarKind::State) => {
                if v.order() == 0 {
                    self.chart
                        .map(v.name())
                        .cloned()
                        .ok_or_else(|| DiffietyError::ChartIncomplete {
                            chart: self.chart.name.clone(),
                            var: v.name().to_string(),
                        })?
                } else {
                    let prev = self.image(&v.with_order(v.order() - 1))?;
                    total_derivative(&prev, &self.trivial)?
                }
            }
            Some(VarKind::Exogenous) => self.trivial.exo_jet(v.name(), v.order())?,
            _ => Expr::var(v.clone()),
        };
        self.cache.borrow_mut().insert(v.clone(), out.clone());
        Ok(out)
    }

    pub fn pull(&self, e: &Expr) -> Result<Expr, DiffietyError> {
        let mut map = HashMap::new();
        for v in e.variables() {
            if self.sys.kind_of(v.name()).is_some() {
                let img = self.image(&v)?;
                if img.as_var() != Some(&v) {
                    map.insert(v, img);
                }
            }
        }
        Ok(e.subs(&map))
    }
}

/// Values of a truncated jet `z_j^(0..=K)` plus exogenous coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct JetPoint {
    pub order: u32,
    pub values: Point,
}

impl JetPoint {
    pub fn evaluate(&self, e: &Expr) -> Result<f64, DiffietyError> {
        let needed = e
            .variables()
            .iter()
            .filter(|v| v.kind() == VarKind::Arbitrary)
            .map(Variable::order)
            .max()
            .unwrap_or(0);
        if needed > self.order {
            return Err(DiffietyError::TruncationTooSmall {
                needed,
                available: self.order,
            });
        }
        Ok(e.evaluate(&self.values)?)
    }
}

/// Draw a jet inside the chart box that passes every exclusion guard and
/// at which every chart map evaluates.
pub fn sample_jet<R: Rng + ?Sized>(
    p: &Parametrization,
    sys: &SystemDef,
    chart: &Chart,
    k: u32,
    rng: &mut R,
) -> Result<JetPoint, DiffietyError> {
    sample_jet_where(p, sys, chart, k, rng, |_| true)
}

pub fn sample_jet_where<R: Rng + ?Sized>(
    p: &Parametrization,
    sys: &SystemDef,
    chart: &Chart,
    k: u32,
    rng: &mut R,
    mut accept: impl FnMut(&JetPoint) -> bool,
) -> Result<JetPoint, DiffietyError> {
    let mut coords: Vec<Variable> = Vec::new();
    for z in p.arbitrary() {
        for o in 0..=k {
            coords.push(Variable::new(z.as_str(), VarKind::Arbitrary, o));
        }
    }
    for (u, _) in sys.exo() {
        coords.push(Variable::exogenous(u));
    }
    for _ in 0..MAX_ATTEMPTS {
        let mut values = Point::with_capacity(coords.len());
        for v in &coords {
            let (lo, hi) = chart.bounds(v);
            let x = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            values.insert(v.clone(), x);
        }
        let jp = JetPoint { order: k, values };
        let guards_ok = chart.excludes.iter().all(|g| match jp.evaluate(g) {
            Ok(x) => x.abs() > CHART_GUARD,
            Err(_) => false,
        });
        if !guards_ok {
            continue;
        }
        if chart.maps.iter().all(|(_, e)| jp.evaluate(e).is_ok()) && accept(&jp) {
            return Ok(jp);
        }
    }
    Err(DiffietyError::SamplingExhausted {
        chart: chart.name.clone(),
        attempts: MAX_ATTEMPTS,
    })
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub trials: usize,
    pub tol: f64,
    pub jet_order: u32,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            trials: 100,
            tol: 1e-8,
            jet_order: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChartResidual {
    pub chart: String,
    /// Maximum absolute residual per equation label (`P_<state>` or `H<k>`).
    pub residuals: Vec<(String, f64)>,
    pub max_residual: f64,
    pub samples: usize,
    /// Smallest rank of `d φ*(x_1..x_n)` over the z-jets seen at samples.
    pub min_rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MorphismReport {
    pub charts: Vec<ChartResidual>,
    pub pass: bool,
}

impl MorphismReport {
    pub fn max_residual(&self) -> f64 {
        self.charts.iter().map(|c| c.max_residual).fold(0.0, f64::max)
    }
}

/// Residuals of `φ*(P_i)` and `φ*(H)` on every chart.
pub fn check_morphism(
    sys: &SystemDef,
    p: &Parametrization,
    opts: &CheckOptions,
) -> Result<MorphismReport, DiffietyError> {
    let mut labelled: Vec<(String, Expr)> = sys
        .states()
        .iter()
        .map(|(n, _)| format!("P_{n}"))
        .zip(sys.equations())
        .collect();
    for (k, h) in sys.constraints().iter().enumerate() {
        labelled.push((format!("H{}", k + 1), h.clone()));
    }
    let mut charts = Vec::new();
    let mut pass = true;
    for (idx, chart) in p.charts().iter().enumerate() {
        let pb = Pullback::new(sys, chart);
        let pulled = labelled
            .iter()
            .map(|(l, e)| Ok((l.clone(), pb.pull(e)?)))
            .collect::<Result<Vec<_>, DiffietyError>>()?;
        let images = sys
            .vars()
            .iter()
            .map(|v| pb.image(v))
            .collect::<Result<Vec<_>, _>>()?;
        let mut rank_coords: Vec<Variable> = images
            .iter()
            .flat_map(|e| e.variables())
            .filter(|v| v.kind() == VarKind::Arbitrary)
            .collect();
        rank_coords.sort();
        rank_coords.dedup();
        let jac: Vec<Vec<Expr>> = images.iter().map(|e| e.gradient(&rank_coords)).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(idx as u64);
        let mut maxes = vec![0.0f64; pulled.len()];
        let mut min_rank: Option<usize> = None;
        let mut samples = 0;
        while samples < opts.trials {
            let mut values = Vec::new();
            let jp = sample_jet_where(p, sys, chart, opts.jet_order, &mut rng, |jp| {
                values.clear();
                for (_, e) in &pulled {
                    match jp.evaluate(e) {
                        Ok(x) => values.push(Ok(x)),
                        Err(DiffietyError::Expr(ExprError::Domain(_))) => return false,
                        Err(e) => values.push(Err(e)),
                    }
                }
                true
            })?;
            for (m, v) in maxes.iter_mut().zip(values) {
                *m = m.max(v?.abs());
            }
            if samples < 5 && !rank_coords.is_empty() {
                let rows: Result<Vec<Vec<f64>>, DiffietyError> = jac
                    .iter()
                    .map(|row| row.iter().map(|e| jp.evaluate(e)).collect())
                    .collect();
                if let Ok(rows) = rows {
                    if let Some(r) = numeric::rank(&rows).rank() {
                        min_rank = Some(min_rank.map_or(r, |m: usize| m.min(r)));
                    }
                }
            }
            samples += 1;
        }
        let max_residual = maxes.iter().copied().fold(0.0, f64::max);
        if !(max_residual <= opts.tol) {
            pass = false;
        }
        charts.push(ChartResidual {
            chart: chart.name.clone(),
            residuals: pulled.iter().map(|(l, _)| l.clone()).zip(maxes).collect(),
            max_residual,
            samples,
            min_rank,
        });
    }
    Ok(MorphismReport { charts, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffiety::jet;

    fn z(n: &str, k: u32) -> Expr {
        jet(n, VarKind::Arbitrary, k)
    }

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

    /// x1 = z1, x2 = z2'/z1', x3 = z2.
    fn chained_param(sys: &SystemDef) -> Parametrization {
        let chart = Chart::new(
            "main",
            vec![
                ("x1".into(), z("z1", 0)),
                ("x2".into(), z("z2", 1) / z("z1", 1)),
                ("x3".into(), z("z2", 0)),
            ],
            vec![z("z1", 1)],
            vec![],
            &sys.trivial_context(),
        )
        .unwrap();
        Parametrization::new("p", sys, vec!["z1".into(), "z2".into()], vec![chart]).unwrap()
    }

    #[test]
    fn chained_parametrization_passes() {
        let s = chained();
        let p = chained_param(&s);
        let r = check_morphism(&s, &p, &CheckOptions { trials: 20, ..Default::default() }).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.charts[0].min_rank, Some(3));
    }

    #[test]
    fn wrong_parametrization_fails() {
        let s = chained();
        let chart = Chart::new(
            "main",
            vec![
                ("x1".into(), z("z1", 0)),
                ("x2".into(), z("z2", 1)),
                ("x3".into(), z("z2", 0)),
            ],
            vec![],
            vec![],
            &s.trivial_context(),
        )
        .unwrap();
        let p = Parametrization::new("p", &s, vec!["z1".into(), "z2".into()], vec![chart]).unwrap();
        let r = check_morphism(&s, &p, &CheckOptions { trials: 5, ..Default::default() }).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn singular_map_needs_exclusion() {
        let s = chained();
        let err = Chart::new(
            "c",
            vec![("x1".into(), z("z2", 1) / z("z1", 1))],
            vec![],
            vec![],
            &s.trivial_context(),
        );
        assert!(matches!(err, Err(DiffietyError::MissingExclusion(_))));
    }

    #[test]
    fn chart_entries_resolve_earlier_maps() {
        let s = chained();
        let chart = Chart::new(
            "c",
            vec![
                ("x1".into(), z("z1", 0)),
                ("x3".into(), jet("x1", VarKind::Free, 1) * z("z2", 0)),
            ],
            vec![],
            vec![],
            &s.trivial_context(),
        )
        .unwrap();
        assert_eq!(chart.map("x3").unwrap(), &(z("z1", 1) * z("z2", 0)));
    }

    #[test]
    fn prolongation_is_cached_and_consistent() {
        let s = chained();
        let p = chained_param(&s);
        let pb = Pullback::new(&s, &p.charts()[0]);
        let x2 = Variable::free("x2");
        let d1 = pb.image(&x2.shifted(1)).unwrap();
        let direct = total_derivative(&pb.image(&x2).unwrap(), pb.trivial()).unwrap();
        assert_eq!(d1, direct);
        let e = jet("x2", VarKind::Free, 0) * jet("x3", VarKind::State, 0);
        assert_eq!(
            pb.pull(&e).unwrap(),
            pb.image(&x2).unwrap() * pb.image(&Variable::state("x3")).unwrap()
        );
    }

    #[test]
    fn degenerate_box_and_determinism() {
        let s = chained();
        let ctx = s.trivial_context();
        let chart = Chart::new(
            "c",
            vec![
                ("x1".into(), z("z1", 0)),
                ("x2".into(), z("z2", 0)),
                ("x3".into(), z("z2", 0)),
            ],
            vec![z("z1", 0)],
            vec![(Variable::arbitrary("z1"), (0.5, 0.5))],
            &ctx,
        )
        .unwrap();
        let p = Parametrization::new("p", &s, vec!["z1".into(), "z2".into()], vec![chart.clone()])
            .unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(0);
        let mut r2 = ChaCha8Rng::seed_from_u64(0);
        let a = sample_jet(&p, &s, &chart, 2, &mut r1).unwrap();
        let b = sample_jet(&p, &s, &chart, 2, &mut r2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values[&Variable::arbitrary("z1")], 0.5);

        let bad = Chart::new(
            "c",
            vec![
                ("x1".into(), z("z1", 0)),
                ("x2".into(), z("z2", 0)),
                ("x3".into(), z("z2", 0)),
            ],
            vec![z("z1", 0)],
            vec![(Variable::arbitrary("z1"), (0.0, 0.0))],
            &ctx,
        )
        .unwrap();
        let p = Parametrization::new("p", &s, vec!["z1".into(), "z2".into()], vec![bad.clone()])
            .unwrap();
        assert!(matches!(
            sample_jet(&p, &s, &bad, 2, &mut r1),
            Err(DiffietyError::SamplingExhausted { .. })
        ));
    }

    #[test]
    fn truncation_is_enforced() {
        let jp = JetPoint {
            order: 1,
            values: Point::new(),
        };
        assert!(matches!(
            jp.evaluate(&z("z1", 2)),
            Err(DiffietyError::TruncationTooSmall { needed: 2, available: 1 })
        ));
    }

    #[test]
    fn trivial_system_passes_vacuously() {
        let s = SystemDef::new("t", vec!["x1".into(), "x2".into()], vec![], vec![], vec![]).unwrap();
        let chart = Chart::new(
            "id",
            vec![("x1".into(), z("z1", 0)), ("x2".into(), z("z2", 0))],
            vec![],
            vec![],
            &s.trivial_context(),
        )
        .unwrap();
        let p = Parametrization::new("id", &s, vec!["z1".into(), "z2".into()], vec![chart]).unwrap();
        let r = check_morphism(&s, &p, &CheckOptions::default()).unwrap();
        assert!(r.pass);
        assert_eq!(r.max_residual(), 0.0);
    }
}
