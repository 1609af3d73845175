//! Integrals against the compensated jump measure, under `P` (compensator
//! `ds nu(dy)`) and under a tilted measure `Q` (compensator `e^psi ds nu(dy)`).
//!
//! Jump parts are summed exactly over the recorded jumps. Compensators are
//! quadratures in `y` combined with two-point Gauss rules in `s` over the
//! merged grid/jump timeline.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::JumpField;
use crate::girsanov::{DensityEngine, GeneratingPair};
use crate::levy::{CadlagPath, EventKind, History, LevyMeasure, LevyPath, LevyTriplet, TimeGrid};
use crate::mc::{Estimate, McConfig};
use crate::quadrature::{self, QuadConfig};
use crate::sets::JumpSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrandClass {
    Psi1,
    Psi2,
    Psi12,
    Psi1Q,
    Psi2Q,
    Psi12Q,
}

impl IntegrandClass {
    pub fn is_q(self) -> bool {
        matches!(self, Self::Psi1Q | Self::Psi2Q | Self::Psi12Q)
    }

    /// The matching class under the other measure's compensator.
    pub fn base(self) -> Self {
        match self {
            Self::Psi1Q => Self::Psi1,
            Self::Psi2Q => Self::Psi2,
            Self::Psi12Q => Self::Psi12,
            c => c,
        }
    }

    /// Integrand of the defining class integral at a value `g`.
    pub fn gauge(self, g: f64) -> f64 {
        match self.base() {
            Self::Psi1 => g.abs(),
            Self::Psi2 => g * g,
            _ => (g * g).min(g.abs()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneralIntegrand {
    pub field: JumpField,
    pub class: IntegrandClass,
}

impl GeneralIntegrand {
    pub fn new(field: JumpField, class: IntegrandClass) -> Self {
        Self { field, class }
    }
}

/// Compensating measure of the jump measure.
#[derive(Debug, Clone)]
pub enum Compensator {
    /// `ds nu(dy)`
    Physical,
    /// `e^{psi(s, y)} ds nu(dy)`
    Tilted(JumpField),
}

impl Compensator {
    #[inline]
    fn weight(&self, s: f64, y: f64, past: &History) -> f64 {
        match self {
            Self::Physical => 1.0,
            Self::Tilted(psi) => psi.eval(s, y, past).exp(),
        }
    }

    fn is_deterministic(&self) -> bool {
        match self {
            Self::Physical => true,
            Self::Tilted(psi) => psi.is_deterministic(),
        }
    }

    fn is_time_homogeneous(&self) -> bool {
        match self {
            Self::Physical => true,
            Self::Tilted(psi) => psi.is_time_homogeneous(),
        }
    }

    fn breaks(&self) -> &[f64] {
        match self {
            Self::Physical => &[],
            Self::Tilted(psi) => psi.breaks(),
        }
    }
}

/// How a compensator rate `r(s, past)` is integrated over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RateKind {
    Constant,
    Deterministic,
    Adapted,
}

pub(crate) const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Cumulative time integral of `rate` at every event of `path`.
///
/// Each interval uses two-point Gauss nodes, so a rate is never evaluated at
/// an interval end where a left-continuous integrand may switch value.
/// Deterministic rates are evaluated once per grid cell and their linear fit
/// is integrated up to events inside the cell; adapted rates are evaluated on
/// every event interval with the history cut at the interval's right end.
pub(crate) fn cumulative_rate(
    path: &LevyPath,
    kind: RateKind,
    grid_rates: Option<&[[f64; 2]]>,
    rate: &dyn Fn(f64, &History) -> Result<f64>,
) -> Result<Vec<f64>> {
    let events = path.events();
    let mut out = Vec::with_capacity(events.len());
    match kind {
        RateKind::Constant => {
            let r = rate(0.0, &History::empty())?;
            out.extend(events.iter().map(|e| r * e.time));
        }
        RateKind::Deterministic => {
            let times = path.grid().times();
            let owned;
            let rates = match grid_rates {
                Some(r) => r,
                None => {
                    owned = deterministic_cell_rates(times, rate)?;
                    &owned
                }
            };
            let mut grid_cum = vec![0.0; times.len()];
            for i in 1..times.len() {
                grid_cum[i] = grid_cum[i - 1] + 0.5 * (times[i] - times[i - 1]) * (rates[i - 1][0] + rates[i - 1][1]);
            }
            for e in events {
                let i = times.partition_point(|&s| s <= e.time).saturating_sub(1);
                if times[i] == e.time || i + 1 == times.len() {
                    out.push(grid_cum[i]);
                } else {
                    let h = times[i + 1] - times[i];
                    out.push(grid_cum[i] + gauss_partial(h, (e.time - times[i]) / h, rates[i]));
                }
            }
        }
        RateKind::Adapted => {
            let mut acc = 0.0;
            out.push(0.0);
            for k in 1..events.len() {
                let (t0, t1) = (events[k - 1].time, events[k].time);
                if t1 > t0 {
                    let past = path.history_before(t1);
                    let h = t1 - t0;
                    acc += 0.5 * h * (rate(t0 + GAUSS2[0] * h, &past)? + rate(t0 + GAUSS2[1] * h, &past)?);
                }
                out.push(acc);
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("compensator is not finite".into()));
    }
    Ok(out)
}

/// Integral over the first fraction `u` of a cell of width `h` of the line
/// through the two Gauss node values `r`.
pub(crate) fn gauss_partial(h: f64, u: f64, r: [f64; 2]) -> f64 {
    let slope = (r[1] - r[0]) / (GAUSS2[1] - GAUSS2[0]);
    let at0 = r[0] - slope * GAUSS2[0];
    h * (at0 * u + 0.5 * slope * u * u)
}

fn deterministic_cell_rates(times: &[f64], rate: &dyn Fn(f64, &History) -> Result<f64>) -> Result<Vec<[f64; 2]>> {
    let h = History::empty();
    times
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            Ok([rate(w[0] + GAUSS2[0] * d, &h)?, rate(w[0] + GAUSS2[1] * d, &h)?])
        })
        .collect()
}

/// A jump field prepared for integration against one compensated measure.
///
/// Time-homogeneous compensator rates are computed once; deterministic rates
/// once per grid.
#[derive(Debug)]
pub struct JumpIntegrator {
    field: JumpField,
    pieces: Vec<JumpField>,
    nu: LevyMeasure,
    compensator: Compensator,
    breaks: Vec<f64>,
    cfg: QuadConfig,
    kind: RateKind,
    grid_cache: OnceLock<(Arc<TimeGrid>, Vec<[f64; 2]>)>,
}

impl JumpIntegrator {
    pub fn new(g: &GeneralIntegrand, nu: &LevyMeasure, compensator: Compensator) -> Result<Self> {
        let tilted = matches!(compensator, Compensator::Tilted(_));
        if g.class.is_q() != tilted {
            return Err(Error::Class(format!(
                "class {:?} does not match the {} compensator",
                g.class,
                if tilted { "tilted" } else { "physical" }
            )));
        }
        // Hybrid classes are split at |g| = 1, ties going to the small part.
        let pieces = if g.class.base() == IntegrandClass::Psi12 {
            vec![
                g.field.map("small part", |v| if v.abs() <= 1.0 { v } else { 0.0 }),
                g.field.map("large part", |v| if v.abs() > 1.0 { v } else { 0.0 }),
            ]
        } else {
            vec![g.field.clone()]
        };
        let kind = if g.field.is_time_homogeneous() && compensator.is_time_homogeneous() {
            RateKind::Constant
        } else if g.field.is_deterministic() && compensator.is_deterministic() {
            RateKind::Deterministic
        } else {
            RateKind::Adapted
        };
        let mut breaks = g.field.breaks().to_vec();
        breaks.extend_from_slice(compensator.breaks());
        let integrator = Self {
            field: g.field.clone(),
            pieces,
            nu: nu.clone(),
            compensator,
            breaks,
            cfg: QuadConfig::default(),
            kind,
            grid_cache: OnceLock::new(),
        };
        Ok(integrator)
    }

    pub fn field(&self) -> &JumpField {
        &self.field
    }

    /// `∫ g(s, y) w(s, y) nu(dy)` over the simulated measure.
    pub fn rate(&self, s: f64, past: &History) -> Result<f64> {
        let mut total = 0.0;
        for piece in &self.pieces {
            total += self.nu.integrate_simulated(
                |y| piece.eval(s, y, past) * self.compensator.weight(s, y, past),
                &JumpSet::all(),
                &self.breaks,
                &self.cfg,
            )?;
        }
        Ok(total)
    }

    fn grid_rates(&self, grid: &Arc<TimeGrid>) -> Result<Option<Vec<[f64; 2]>>> {
        if self.kind != RateKind::Deterministic {
            return Ok(None);
        }
        if let Some((g, r)) = self.grid_cache.get() {
            if Arc::ptr_eq(g, grid) || g.times() == grid.times() {
                return Ok(Some(r.clone()));
            }
        }
        let rates = deterministic_cell_rates(grid.times(), &|s, past| self.rate(s, past))?;
        let _ = self.grid_cache.set((Arc::clone(grid), rates.clone()));
        Ok(Some(rates))
    }

    /// `∫_0^t ∫ g w dnu ds` at every event of the path.
    pub fn compensator(&self, path: &LevyPath) -> Result<Vec<f64>> {
        let grid = path.shared_grid();
        let rates = self.grid_rates(&grid)?;
        cumulative_rate(path, self.kind, rates.as_deref(), &|s, past| self.rate(s, past))
    }

    /// Jump of the integral at each event (zero at grid events).
    pub fn jump_sizes(&self, path: &LevyPath) -> Vec<f64> {
        path.events()
            .iter()
            .map(|e| match e.kind {
                EventKind::Jump(j) => {
                    let jump = path.jumps()[j];
                    self.field.eval(jump.time, jump.size, &path.history_before(jump.time))
                }
                EventKind::Grid(_) => 0.0,
            })
            .collect()
    }

    /// The integral `∫∫ g d(pi - compensator)` along the path.
    pub fn integrate(&self, path: &LevyPath) -> Result<CadlagPath> {
        let comp = self.compensator(path)?;
        let jumps = self.jump_sizes(path);
        let mut acc = 0.0;
        let mut left = Vec::with_capacity(comp.len());
        let mut right = Vec::with_capacity(comp.len());
        for (c, dj) in comp.iter().zip(&jumps) {
            acc += dj;
            right.push(acc - c);
            left.push(acc - dj - c);
        }
        if acc.is_nan() {
            return Err(Error::Divergence("jump sum is not finite".into()));
        }
        Ok(CadlagPath { times: path.event_times(), left, right, grid_index: path.grid_events().to_vec(), log_linear: false })
    }
}

/// `∫∫ g d(pi - compensator)` along one path.
pub fn integrate_general(
    g: &GeneralIntegrand,
    path: &LevyPath,
    nu: &LevyMeasure,
    compensator: Compensator,
) -> Result<CadlagPath> {
    JumpIntegrator::new(g, nu, compensator)?.integrate(path)
}

/// Coefficient of a simple integrand on one partition interval; a rule sees
/// the path up to and including the left end of its interval.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Rule(Arc<dyn Fn(&History) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Rule(_) => f.write_str("Rule(..)"),
        }
    }
}

impl Coefficient {
    fn eval(&self, past: &History) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Rule(r) => r(past),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplePiece {
    pub set: JumpSet,
    pub coefficient: Coefficient,
}

/// `Σ g_ij 1_(t_i, t_{i+1}](s) 1_{A_ij}(y)`.
#[derive(Debug, Clone)]
pub struct SimpleIntegrand {
    partition: Vec<f64>,
    pieces: Vec<Vec<SimplePiece>>,
    bound: f64,
}

impl SimpleIntegrand {
    pub fn new(partition: Vec<f64>, pieces: Vec<Vec<SimplePiece>>, bound: f64) -> Result<Self> {
        if partition.len() < 2 || partition[0] != 0.0 || partition.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("partition", "must start at 0 and be strictly increasing"));
        }
        if pieces.len() + 1 != partition.len() {
            return Err(Error::validation("pieces", "one list of pieces per partition interval"));
        }
        if !(bound >= 0.0) {
            return Err(Error::validation("bound", "must be nonnegative"));
        }
        for (i, row) in pieces.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                if !p.set.separated_from_zero() {
                    return Err(Error::Domain(format!("set {i},{j} touches 0")));
                }
                if !p.set.is_internally_disjoint() {
                    return Err(Error::Domain(format!("set {i},{j} has overlapping intervals")));
                }
                if row[..j].iter().any(|q| !q.set.is_disjoint(&p.set)) {
                    return Err(Error::Domain(format!("sets on interval {i} are not disjoint")));
                }
                if let Coefficient::Constant(c) = p.coefficient {
                    if c.abs() > bound {
                        return Err(Error::Bound(format!("coefficient {i},{j} = {c} exceeds {bound}")));
                    }
                }
            }
        }
        Ok(Self { partition, pieces, bound })
    }

    /// `c 1_(0, T](s) 1_A(y)`.
    pub fn indicator(horizon: f64, set: JumpSet, c: f64) -> Result<Self> {
        Self::new(vec![0.0, horizon], vec![vec![SimplePiece { set, coefficient: Coefficient::Constant(c) }]], c.abs())
    }

    pub fn partition(&self) -> &[f64] {
        &self.partition
    }

    fn interval_of(partition: &[f64], s: f64) -> Option<usize> {
        if s <= partition[0] || s > *partition.last().unwrap() {
            return None;
        }
        Some(partition.partition_point(|&t| t < s) - 1)
    }

    /// The same integrand as a general evaluator.
    pub fn to_general(&self) -> GeneralIntegrand {
        let partition = self.partition.clone();
        let pieces = self.pieces.clone();
        let deterministic = pieces.iter().flatten().all(|p| matches!(p.coefficient, Coefficient::Constant(_)));
        let mut breaks: Vec<f64> = Vec::new();
        for p in pieces.iter().flatten() {
            breaks.extend(p.set.intervals().iter().flat_map(|i| [i.lo, i.hi]).filter(|x| x.is_finite()));
        }
        let eval = move |s: f64, y: f64, past: &History| -> f64 {
            let Some(i) = Self::interval_of(&partition, s) else { return 0.0 };
            let Some(p) = pieces[i].iter().find(|p| p.set.contains(y)) else { return 0.0 };
            let at_left = match past.path() {
                Some(path) => path.history_through(partition[i]),
                None => History::empty(),
            };
            p.coefficient.eval(&at_left)
        };
        let field = if deterministic {
            JumpField::deterministic("simple", move |s, y| eval(s, y, &History::empty()))
        } else {
            JumpField::adapted("simple", eval)
        };
        GeneralIntegrand::new(field.with_breaks(breaks), IntegrandClass::Psi1)
    }
}

/// `I(g)_t = Σ g_ij [pi((t_i∧t, t_{i+1}∧t] × A_ij) - (t_{i+1}∧t - t_i∧t) nu(A_ij)]`,
/// evaluated exactly from the jump record.
pub fn integrate_simple_p(g: &SimpleIntegrand, path: &LevyPath, nu: &LevyMeasure) -> Result<CadlagPath> {
    let n = g.pieces.len();
    let mut coefs = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    for (i, row) in g.pieces.iter().enumerate() {
        let past = path.history_through(g.partition[i]);
        let mut c_row = Vec::with_capacity(row.len());
        let mut rate = 0.0;
        for (j, p) in row.iter().enumerate() {
            let c = p.coefficient.eval(&past);
            if !(c.abs() <= g.bound) {
                return Err(Error::Bound(format!("coefficient {i},{j} = {c} exceeds {}", g.bound)));
            }
            rate += c * nu.simulated_mass(&p.set)?;
            c_row.push(c);
        }
        coefs.push(c_row);
        rates.push(rate);
    }
    let part = &g.partition;
    let compensator_at = |t: f64| -> f64 {
        (0..n).map(|i| rates[i] * (t.min(part[i + 1]) - t.min(part[i])).max(0.0)).sum()
    };
    let mut acc = 0.0;
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for e in path.events() {
        let mut dj = 0.0;
        if let EventKind::Jump(j) = e.kind {
            let jump = path.jumps()[j];
            if let Some(i) = SimpleIntegrand::interval_of(part, jump.time) {
                for (p, c) in g.pieces[i].iter().zip(&coefs[i]) {
                    if p.set.contains(jump.size) {
                        dj += c;
                    }
                }
            }
        }
        acc += dj;
        let comp = compensator_at(e.time);
        right.push(acc - comp);
        left.push(acc - dj - comp);
    }
    Ok(CadlagPath { times: path.event_times(), left, right, grid_index: path.grid_events().to_vec(), log_linear: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: IntegrandClass,
    pub ok: bool,
    /// `∫_0^T ∫ gauge(g) w dnu ds`; infinite when the check fails.
    pub value: f64,
    pub detail: Option<String>,
}

/// Evaluates the defining integral of `class` for `g` over `[0, horizon]`
/// under the declared measure, weighted by `e^psi` for the `Q` classes.
///
/// Adapted integrands are checked along `path`.
pub fn class_check(
    g: &JumpField,
    nu: &LevyMeasure,
    psi: Option<&JumpField>,
    class: IntegrandClass,
    horizon: f64,
    path: Option<&LevyPath>,
) -> Result<ClassReport> {
    let zero = JumpField::zero();
    let psi = if class.is_q() { psi.unwrap_or(&zero) } else { &zero };
    let mut breaks = g.breaks().to_vec();
    breaks.extend_from_slice(psi.breaks());
    let cfg = QuadConfig::with_rel_tol(1e-8);
    let inner = |s: f64, past: &History| -> Result<f64> {
        nu.integrate_with_breaks(
            |y| class.gauge(g.eval(s, y, past)) * psi.eval(s, y, past).exp(),
            &JumpSet::all(),
            &breaks,
            &cfg,
        )
    };
    let value = if g.is_time_homogeneous() && psi.is_time_homogeneous() {
        inner(0.0, &History::empty()).map(|v| v * horizon)
    } else if g.is_deterministic() && psi.is_deterministic() {
        quadrature::integrate_fallible(|s| inner(s, &History::empty()), 0.0, horizon, &cfg)
    } else {
        let path = path.ok_or_else(|| Error::Domain("adapted integrand needs a path to be checked on".into()))?;
        cumulative_rate(path, RateKind::Adapted, None, &inner).map(|c| *c.last().unwrap())
    };
    match value {
        Ok(v) if v.is_finite() => Ok(ClassReport { class, ok: true, value: v, detail: None }),
        Ok(_) => Ok(ClassReport { class, ok: false, value: f64::INFINITY, detail: Some("not finite".into()) }),
        Err(e @ (Error::Divergence(_) | Error::Domain(_))) => {
            Ok(ClassReport { class, ok: false, value: f64::INFINITY, detail: Some(e.to_string()) })
        }
        Err(e) => Err(e),
    }
}

/// Which measure an expectation is taken under; `Q` expectations weight
/// `P`-samples by the terminal density.
#[derive(Debug, Clone, Copy)]
pub enum MeasureTag<'a> {
    P,
    Q(&'a GeneratingPair),
}

impl MeasureTag<'_> {
    fn compensator(&self) -> Compensator {
        match self {
            Self::P => Compensator::Physical,
            Self::Q(pair) => Compensator::Tilted(pair.psi().clone()),
        }
    }

    fn is_deterministic(&self) -> bool {
        match self {
            Self::P => true,
            Self::Q(pair) => pair.psi().is_deterministic(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsometryReport {
    pub lhs: f64,
    pub rhs: f64,
    pub se: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl IsometryReport {
    pub fn agrees(&self, k: f64) -> bool {
        (self.lhs - self.rhs).abs() <= k * self.se
    }
}

/// Monte Carlo estimate of `E[I(g)_T^2]` against `E[∫∫ |g|^2 compensator]`.
pub fn estimate_isometry(
    g: &GeneralIntegrand,
    triplet: &LevyTriplet,
    tag: MeasureTag,
    mc: &McConfig,
) -> Result<IsometryReport> {
    if g.class.base() != IntegrandClass::Psi2 || g.class.is_q() != matches!(tag, MeasureTag::Q(_)) {
        return Err(Error::Class(format!("isometry needs a square-integrable class for this measure, got {:?}", g.class)));
    }
    let horizon = mc.grid.horizon();
    let psi = match tag {
        MeasureTag::Q(pair) => Some(pair.psi()),
        MeasureTag::P => None,
    };
    let deterministic = g.field.is_deterministic() && tag.is_deterministic();
    if deterministic {
        let report = class_check(&g.field, triplet.nu(), psi, g.class, horizon, None)?;
        if !report.ok {
            return Err(Error::Class(report.detail.unwrap_or_default()));
        }
    }
    let integrator = JumpIntegrator::new(g, triplet.nu(), tag.compensator())?;
    let squared = GeneralIntegrand::new(g.field.map("g^2", |v| v * v), g.class);
    let sq_integrator = JumpIntegrator::new(&squared, triplet.nu(), tag.compensator())?;
    let density = match tag {
        MeasureTag::Q(pair) => Some(DensityEngine::new(pair, triplet)?),
        MeasureTag::P => None,
    };
    let samples = mc.run(triplet, |path| {
        let i = integrator.integrate(path)?.terminal();
        let sq = *sq_integrator.compensator(path)?.last().unwrap();
        let rho = match &density {
            Some(d) => d.density(path)?.rho.terminal(),
            None => 1.0,
        };
        Ok((rho * i * i, rho * sq, sq))
    })?;
    let lhs = Estimate::from_samples(&samples.iter().map(|s| s.0).collect::<Vec<_>>());
    let rhs = if deterministic {
        samples.first().map_or(0.0, |s| s.2)
    } else {
        Estimate::from_samples(&samples.iter().map(|s| s.1).collect::<Vec<_>>()).mean
    };
    Ok(IsometryReport { lhs: lhs.mean, rhs, se: lhs.se, n_paths: mc.n_paths, seed: mc.seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariationReport {
    /// `E^Q[pi~_Q(t, A) pi~_Q(t, B)]`
    pub mc: Estimate,
    /// `E^Q[nu_Q([0, t] × (A ∩ B))]`
    pub predicted: Estimate,
}

impl CovariationReport {
    pub fn agrees(&self, k: f64) -> bool {
        let se = (self.mc.se.powi(2) + self.predicted.se.powi(2)).sqrt();
        (self.mc.mean - self.predicted.mean).abs() <= k * se
    }
}

/// Compares the mean product of two compensated counts under `Q` with the
/// predicted covariation.
pub fn estimate_covariation_q(
    a: &JumpSet,
    b: &JumpSet,
    triplet: &LevyTriplet,
    pair: &GeneratingPair,
    t: f64,
    mc: &McConfig,
) -> Result<CovariationReport> {
    if !a.separated_from_zero() || !b.separated_from_zero() {
        return Err(Error::Domain("covariation sets must be separated from zero".into()));
    }
    let tilted = Compensator::Tilted(pair.psi().clone());
    let count = |set: &JumpSet| -> Result<JumpIntegrator> {
        let g = GeneralIntegrand::new(JumpField::indicator(set.clone(), 1.0), IntegrandClass::Psi1Q);
        JumpIntegrator::new(&g, triplet.nu(), tilted.clone())
    };
    let (ia, ib, iab) = (count(a)?, count(b)?, count(&a.intersect(b))?);
    let density = DensityEngine::new(pair, triplet)?;
    let samples = mc.run(triplet, |path| {
        let x = ia.integrate(path)?.value_at(t);
        let y = ib.integrate(path)?.value_at(t);
        let c = iab.compensator(path)?;
        let comp = CadlagPath { times: path.event_times(), left: c.clone(), right: c, grid_index: Vec::new(), log_linear: false };
        let rho = density.density(path)?.rho.value_at(t);
        Ok((rho * x * y, rho * comp.value_at(t), comp.value_at(t)))
    })?;
    let mc_est = Estimate::from_samples(&samples.iter().map(|s| s.0).collect::<Vec<_>>());
    let predicted = if pair.psi().is_deterministic() {
        Estimate { mean: samples.first().map_or(0.0, |s| s.2), se: 0.0, n: samples.len() }
    } else {
        Estimate::from_samples(&samples.iter().map(|s| s.1).collect::<Vec<_>>())
    };
    Ok(CovariationReport { mc: mc_est, predicted })
}
