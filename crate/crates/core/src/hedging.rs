//! Finite bond portfolios, their discounted wealth under the martingale
//! measure, the replication equations and least-squares hedging.
//!
//! A portfolio holds `c_k(s)` units of the bond maturing at `T_k`, i.e. the
//! functional `sum_k c_k(s) delta_{T_k}` acting on the discounted price curve.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{JumpField, TimeField};
use crate::girsanov::{phi_integral, DensityEngine};
use crate::hjm::{ForwardSurface, MarketModel};
use crate::jump_calculus::{class_check, ClassReport, Compensator, GeneralIntegrand, IntegrandClass, JumpIntegrator};
use crate::levy::{EventKind, History, LevyPath};
use crate::mc::{map_indices, McConfig, Estimate, CHUNK};
use crate::quadrature::QuadConfig;
use crate::sets::JumpSet;

/// Bond holdings `c_k(s)` at maturities `T_k` (indices into the market's
/// maturity list). Holdings over `(s, t]` are read at `s`.
#[derive(Debug, Clone)]
pub struct Portfolio {
    maturities: Vec<usize>,
    quantities: Vec<TimeField>,
    bounds: Vec<f64>,
}

impl Portfolio {
    /// `bounds[k]` is a declared bound on `|c_k|`, used by admissibility checks.
    pub fn new(maturities: Vec<usize>, quantities: Vec<TimeField>, bounds: Vec<f64>) -> Result<Self> {
        if maturities.len() != quantities.len() || maturities.len() != bounds.len() {
            return Err(Error::validation("portfolio", "maturities, quantities and bounds differ in length"));
        }
        if bounds.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(Error::validation("portfolio.bounds", "must be finite and >= 0"));
        }
        Ok(Self { maturities, quantities, bounds })
    }

    pub fn empty() -> Self {
        Self { maturities: Vec::new(), quantities: Vec::new(), bounds: Vec::new() }
    }

    pub fn buy_and_hold(m: usize, units: f64) -> Self {
        Self { maturities: vec![m], quantities: vec![TimeField::constant(units)], bounds: vec![units.abs()] }
    }

    /// `c` units of bond `m` while `lo <= s < hi`.
    pub fn bucket(m: usize, lo: f64, hi: f64, c: f64) -> Self {
        let q = TimeField::deterministic(format!("bucket[{lo}, {hi})"), move |s| if s >= lo && s < hi { c } else { 0.0 });
        Self { maturities: vec![m], quantities: vec![q], bounds: vec![c.abs()] }
    }

    /// Holds both portfolios.
    pub fn join(&self, other: &Portfolio) -> Portfolio {
        let mut p = self.clone();
        p.maturities.extend_from_slice(&other.maturities);
        p.quantities.extend(other.quantities.iter().cloned());
        p.bounds.extend_from_slice(&other.bounds);
        p
    }

    pub fn maturities(&self) -> &[usize] {
        &self.maturities
    }

    pub fn quantity(&self, k: usize, s: f64, past: &History) -> f64 {
        self.quantities[k].eval(s, past)
    }

    /// `<phi_s, h> = sum_k c_k(s) h(T_k)`.
    pub fn pairing(&self, s: f64, past: &History, h: impl Fn(usize) -> f64) -> f64 {
        (0..self.maturities.len()).map(|k| self.quantity(k, s, past) * h(self.maturities[k])).sum()
    }

    fn check_maturities(&self, model: &MarketModel) -> Result<()> {
        let n = model.maturities().len();
        match self.maturities.iter().find(|&&m| m >= n) {
            Some(m) => Err(Error::Maturity(format!("portfolio maturity index {m} outside the {n} market maturities"))),
            None => Ok(()),
        }
    }
}

/// Checks that `<phi_s, P^_{s-}(e^{-Σ y} - 1)>` lies in the hybrid `Q` class,
/// using the envelope `sum_k |c_k|max |e^{-Σ(0, T_k) y} - 1|`: `Σ(s, T)`
/// lies between 0 and `Σ(0, T)` and the bracket is monotone in `Σ`.
pub fn check_admissibility(portfolio: &Portfolio, model: &MarketModel) -> Result<ClassReport> {
    portfolio.check_maturities(model)?;
    let spec = model.spec();
    let sigmas: Vec<(f64, f64)> = portfolio
        .maturities
        .iter()
        .zip(&portfolio.bounds)
        .map(|(&m, &b)| (b, spec.vol.big_sigma(0.0, model.maturities()[m])))
        .collect();
    let envelope = JumpField::homogeneous("admissibility envelope", move |y| {
        sigmas.iter().map(|&(b, sig)| b * (-sig * y).exp_m1().abs()).sum()
    });
    let report = class_check(
        &envelope,
        spec.triplet.nu(),
        Some(spec.pair.psi()),
        IntegrandClass::Psi12Q,
        model.grid().horizon(),
        None,
    )?;
    if !report.ok {
        return Err(Error::Class(format!(
            "portfolio jump exposure is not in the hybrid Q class: {}",
            report.detail.clone().unwrap_or_default()
        )));
    }
    Ok(report)
}

/// Per-interval increments of one unit of bond `m` under the wealth scheme.
/// Entry `e` covers `(t_{e-1}, t_e]`, including a jump at `t_e`.
#[derive(Debug, Clone)]
struct BondIncrements {
    brownian: Vec<f64>,
    compensator: Vec<f64>,
    jumps: Vec<f64>,
}

fn bond_increments(model: &MarketModel, surface: &ForwardSurface, path: &LevyPath, m: usize) -> Result<BondIncrements> {
    let spec = model.spec();
    let mat = model.maturities()[m];
    let q = spec.triplet.q();
    let phi = spec.pair.phi();
    let events = path.events();
    let p_hat = &surface.discounted[m];
    let n = events.len();
    let mut inc = BondIncrements { brownian: vec![0.0; n], compensator: vec![0.0; n], jumps: vec![0.0; n] };
    for e in 1..n {
        let (s, t) = (events[e - 1].time, events[e].time);
        if t > s {
            let p = p_hat.right[e - 1];
            let dw = path.brownian_at(t) - path.brownian_at(s) - q * phi.eval(s, &History::empty()) * (t - s);
            inc.brownian[e] = -p * spec.vol.big_sigma(s, mat) * dw;
            inc.compensator[e] = -p * model.kappa_at(m, s)? * (t - s);
        }
        if let EventKind::Jump(j) = events[e].kind {
            let jump = path.jumps()[j];
            inc.jumps[e] = p_hat.left[e] * (-spec.vol.big_sigma(jump.time, mat) * jump.size).exp_m1();
        }
    }
    Ok(inc)
}

/// Discounted wealth on the event timeline with its three integral terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WealthPath {
    pub times: Vec<f64>,
    pub grid_index: Vec<usize>,
    pub initial: f64,
    /// `-∫ <phi, P^ Σ> dW~`
    pub brownian: Vec<f64>,
    /// `∫∫ <phi, P^ (e^{-Σ y} - 1)> dpi`
    pub jumps: Vec<f64>,
    /// `-∫∫ <phi, P^ (e^{-Σ y} - 1)> e^psi nu(dy) ds`
    pub compensator: Vec<f64>,
    pub wealth: Vec<f64>,
}

impl WealthPath {
    pub fn terminal(&self) -> f64 {
        *self.wealth.last().expect("nonempty path")
    }

    pub fn at_grid(&self, i: usize) -> f64 {
        self.wealth[self.grid_index[i]]
    }
}

/// Discounted wealth of `portfolio` started from `initial`. The jump part is
/// exact; Brownian and compensator parts use left-point values on each event
/// interval.
pub fn wealth_path(
    portfolio: &Portfolio,
    initial: f64,
    surface: &ForwardSurface,
    model: &MarketModel,
    path: &LevyPath,
) -> Result<WealthPath> {
    portfolio.check_maturities(model)?;
    let events = path.events();
    let n = events.len();
    let incs: Vec<BondIncrements> = portfolio
        .maturities
        .iter()
        .map(|&m| bond_increments(model, surface, path, m))
        .collect::<Result<_>>()?;
    let mut out = WealthPath {
        times: path.event_times(),
        grid_index: path.grid_events().to_vec(),
        initial,
        brownian: vec![0.0; n],
        jumps: vec![0.0; n],
        compensator: vec![0.0; n],
        wealth: vec![initial; n],
    };
    for e in 1..n {
        let s = events[e - 1].time;
        let past = path.history_through(s);
        let (mut db, mut dj, mut dc) = (0.0, 0.0, 0.0);
        for (k, inc) in incs.iter().enumerate() {
            let c = portfolio.quantity(k, s, &past);
            if c != 0.0 {
                db += c * inc.brownian[e];
                dj += c * inc.jumps[e];
                dc += c * inc.compensator[e];
            }
        }
        out.brownian[e] = out.brownian[e - 1] + db;
        out.jumps[e] = out.jumps[e - 1] + dj;
        out.compensator[e] = out.compensator[e - 1] + dc;
        out.wealth[e] = initial + out.brownian[e] + out.jumps[e] + out.compensator[e];
    }
    Ok(out)
}

/// Everything a claim's integrands and payoff may look at. Integrands
/// evaluated at `s` must only use the path strictly before `s`.
pub struct ClaimContext<'a> {
    pub path: &'a LevyPath,
    pub surface: &'a ForwardSurface,
    pub model: &'a MarketModel,
    /// The claim's stopping time on this path (the horizon when unstopped);
    /// `{s <= stop}` is known strictly before `s`.
    pub stop: f64,
}

type TimeIntegrand = dyn Fn(f64, &ClaimContext) -> f64 + Send + Sync;
type JumpIntegrand = dyn Fn(f64, f64, &ClaimContext) -> f64 + Send + Sync;
type Payoff = dyn Fn(&ClaimContext) -> Result<f64> + Send + Sync;
type Stopping = dyn Fn(&LevyPath) -> Result<f64> + Send + Sync;

/// `X = M_0 + ∫ f_X dW~ + ∫∫ g_X dpi~_Q` together with a direct payoff
/// evaluator.
#[derive(Clone)]
pub struct ClaimRepresentation {
    pub label: String,
    pub initial: f64,
    f_x: Arc<TimeIntegrand>,
    g_x: Arc<JumpIntegrand>,
    payoff: Arc<Payoff>,
    /// A deterministic field dominating `|g_X|`, when one is known.
    envelope: Option<JumpField>,
    stopping: Option<Arc<Stopping>>,
}

impl std::fmt::Debug for ClaimRepresentation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClaimRepresentation").field("label", &self.label).field("initial", &self.initial).finish()
    }
}

impl ClaimRepresentation {
    pub fn new<F, G, X>(label: impl Into<String>, initial: f64, f_x: F, g_x: G, payoff: X) -> Self
    where
        F: Fn(f64, &ClaimContext) -> f64 + Send + Sync + 'static,
        G: Fn(f64, f64, &ClaimContext) -> f64 + Send + Sync + 'static,
        X: Fn(&ClaimContext) -> Result<f64> + Send + Sync + 'static,
    {
        Self { label: label.into(), initial, f_x: Arc::new(f_x), g_x: Arc::new(g_x), payoff: Arc::new(payoff), envelope: None, stopping: None }
    }

    pub fn with_envelope(mut self, envelope: JumpField) -> Self {
        self.envelope = Some(envelope);
        self
    }

    pub fn with_stopping<S>(mut self, stopping: S) -> Self
    where
        S: Fn(&LevyPath) -> Result<f64> + Send + Sync + 'static,
    {
        self.stopping = Some(Arc::new(stopping));
        self
    }

    /// Evaluation context on one path, with the stopping time resolved.
    pub fn context<'a>(&self, path: &'a LevyPath, surface: &'a ForwardSurface, model: &'a MarketModel) -> Result<ClaimContext<'a>> {
        let stop = match &self.stopping {
            Some(f) => f(path)?,
            None => path.horizon(),
        };
        Ok(ClaimContext { path, surface, model, stop })
    }

    pub fn constant(value: f64) -> Self {
        Self::new(format!("constant({value})"), value, |_, _| 0.0, |_, _, _| 0.0, move |_| Ok(value))
            .with_envelope(JumpField::zero())
    }

    /// `X = P^(T*, T_m)`, represented by one unit of the bond.
    pub fn bond_payoff(model: &MarketModel, m: usize) -> Result<Self> {
        if m >= model.maturities().len() {
            return Err(Error::Maturity(format!("claim maturity index {m} outside the market maturities")));
        }
        let mat = model.maturities()[m];
        let vol = model.spec().vol;
        let p_minus = move |s: f64, ctx: &ClaimContext| ctx.surface.discounted[m].before(s, &ctx.path.history_before(s));
        Ok(Self::new(
            format!("bond_payoff({mat})"),
            model.initial_discounted(m),
            move |s, ctx| -p_minus(s, ctx) * vol.big_sigma(s, mat),
            move |s, y, ctx| p_minus(s, ctx) * (-vol.big_sigma(s, mat) * y).exp_m1(),
            move |ctx| Ok(ctx.surface.discounted[m].terminal()),
        ))
    }

    /// `X = c * (pi(T*, A) - ∫∫ 1_A e^psi nu(dy) ds)`.
    pub fn jump_integral(model: &MarketModel, set: JumpSet, c: f64) -> Result<Self> {
        let field = JumpField::indicator(set, c);
        let spec = model.spec();
        let integrator = Arc::new(JumpIntegrator::new(
            &GeneralIntegrand::new(field.clone(), IntegrandClass::Psi1Q),
            spec.triplet.nu(),
            Compensator::Tilted(spec.pair.psi().clone()),
        )?);
        let g = field.clone();
        Ok(Self::new(
            format!("jump_integral({c})"),
            0.0,
            |_, _| 0.0,
            move |s, y, ctx| g.eval(s, y, &ctx.path.history_before(s)),
            move |ctx| Ok(integrator.integrate(ctx.path)?.terminal()),
        )
        .with_envelope(field))
    }

    pub fn f_x(&self, s: f64, ctx: &ClaimContext) -> f64 {
        (self.f_x)(s, ctx)
    }

    pub fn g_x(&self, s: f64, y: f64, ctx: &ClaimContext) -> f64 {
        (self.g_x)(s, y, ctx)
    }

    pub fn payoff(&self, ctx: &ClaimContext) -> Result<f64> {
        (self.payoff)(ctx)
    }

    pub fn envelope(&self) -> Option<&JumpField> {
        self.envelope.as_ref()
    }

    /// Class check of the jump integrand through its envelope; claims without
    /// an envelope are accepted as supplied.
    pub fn check(&self, model: &MarketModel) -> Result<Option<ClassReport>> {
        let Some(env) = &self.envelope else { return Ok(None) };
        let spec = model.spec();
        let report = class_check(
            env,
            spec.triplet.nu(),
            Some(spec.pair.psi()),
            IntegrandClass::Psi12Q,
            model.grid().horizon(),
            None,
        )?;
        if !report.ok {
            return Err(Error::Class(format!("claim {} jump integrand: {}", self.label, report.detail.clone().unwrap_or_default())));
        }
        Ok(Some(report))
    }

    /// `|X - (M_0 + ∫ f_X dW~ + ∫∫ g_X dpi~_Q)|` along one path, with
    /// left-point time integrals on the event timeline.
    pub fn representation_gap(&self, ctx: &ClaimContext) -> Result<f64> {
        let spec = ctx.model.spec();
        let (q, nu, psi) = (spec.triplet.q(), spec.triplet.nu(), spec.pair.psi());
        let path = ctx.path;
        let events = path.events();
        let cfg = QuadConfig::default();
        let breaks = self.envelope.as_ref().map(|e| e.breaks().to_vec()).unwrap_or_default();
        let phi = phi_integral(spec.pair.phi(), path)?;
        let mut total = self.initial;
        for e in 1..events.len() {
            let (s, t) = (events[e - 1].time, events[e].time);
            if t > s {
                let dw = path.brownian_at(t) - path.brownian_at(s) - q * (phi[e] - phi[e - 1]);
                let empty = History::empty();
                let rate = nu.integrate_simulated(
                    |y| self.g_x(s, y, ctx) * psi.eval(s, y, &empty).exp(),
                    &JumpSet::all(),
                    &breaks,
                    &cfg,
                )?;
                total += self.f_x(s, ctx) * dw - rate * (t - s);
            }
            if let EventKind::Jump(j) = events[e].kind {
                let jump = path.jumps()[j];
                total += self.g_x(jump.time, jump.size, ctx);
            }
        }
        Ok((self.payoff(ctx)? - total).abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResidual {
    /// `|<phi_s, P^_{s-} Σ_s> + f_X(s)|`
    pub eq2: f64,
    /// `|<phi_s, P^_{s-}(e^{-Σ_s y} - 1)> - g_X(s, y)|` per probe `y`.
    pub eq3: Vec<f64>,
}

impl ReplicationResidual {
    pub fn max_eq3(&self) -> f64 {
        self.eq3.iter().copied().fold(0.0, f64::max)
    }
}

// Rows: the Brownian equation, then one jump equation per probe; columns:
// portfolio maturities. Right-hand side: the claim's integrands.
fn replication_system(
    maturities: &[usize],
    ctx: &ClaimContext,
    claim: &ClaimRepresentation,
    s: f64,
    probes: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let model = ctx.model;
    let vol = model.spec().vol;
    let past = ctx.path.history_before(s);
    let k = maturities.len();
    let mut a = DMatrix::zeros(probes.len() + 1, k);
    let mut b = DVector::zeros(probes.len() + 1);
    for (col, &m) in maturities.iter().enumerate() {
        let mat = model.maturities()[m];
        let p = ctx.surface.discounted[m].before(s, &past);
        let sig = vol.big_sigma(s, mat);
        // without a Wiener part the Brownian equation is void
        a[(0, col)] = if model.spec().triplet.q() == 0.0 { 0.0 } else { p * sig };
        for (row, &y) in probes.iter().enumerate() {
            a[(row + 1, col)] = p * (-sig * y).exp_m1();
        }
    }
    if model.spec().triplet.q() != 0.0 {
        b[0] = -claim.f_x(s, ctx);
    }
    for (row, &y) in probes.iter().enumerate() {
        b[row + 1] = claim.g_x(s, y, ctx);
    }
    (a, b)
}

/// Residuals of the replication equations at time `s` for jump sizes `probes`.
pub fn replication_equations_residual(
    portfolio: &Portfolio,
    ctx: &ClaimContext,
    claim: &ClaimRepresentation,
    s: f64,
    probes: &[f64],
) -> Result<ReplicationResidual> {
    portfolio.check_maturities(ctx.model)?;
    let (a, b) = replication_system(&portfolio.maturities, ctx, claim, s, probes);
    let past = ctx.path.history_before(s);
    let c = DVector::from_iterator(
        portfolio.maturities.len(),
        (0..portfolio.maturities.len()).map(|k| portfolio.quantity(k, s, &past)),
    );
    let r = a * c - b;
    Ok(ReplicationResidual { eq2: r[0].abs(), eq3: r.iter().skip(1).map(|v| v.abs()).collect() })
}

/// Least-squares holdings at time `s` for the replication equations over
/// the given maturities and probes (minimal norm when underdetermined).
pub fn solve_replication_at(
    maturities: &[usize],
    ctx: &ClaimContext,
    claim: &ClaimRepresentation,
    s: f64,
    probes: &[f64],
) -> Result<Vec<f64>> {
    let (a, b) = replication_system(maturities, ctx, claim, s, probes);
    let svd = a.svd(true, true);
    let c = svd.solve(&b, 1e-14).map_err(|e| Error::Singularity(e.to_string()))?;
    Ok(c.iter().copied().collect())
}

/// Holdings that are piecewise constant on equal time buckets, one
/// coefficient per (maturity, bucket).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeBasis {
    pub maturities: Vec<usize>,
    pub buckets: usize,
}

impl HedgeBasis {
    pub fn new(maturities: Vec<usize>, buckets: usize) -> Result<Self> {
        if buckets == 0 {
            return Err(Error::validation("hedge.buckets", "must be >= 1"));
        }
        if maturities.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("hedge.maturities", "must be strictly increasing"));
        }
        Ok(Self { maturities, buckets })
    }

    pub fn dim(&self) -> usize {
        self.maturities.len() * self.buckets
    }

    fn bucket_of(&self, s: f64, horizon: f64) -> usize {
        (((s / horizon) * self.buckets as f64) as usize).min(self.buckets - 1)
    }

    /// The portfolio with holdings `theta[k * buckets + b]`.
    pub fn portfolio(&self, theta: &[f64], horizon: f64) -> Portfolio {
        let mut p = Portfolio::empty();
        for (k, &m) in self.maturities.iter().enumerate() {
            for b in 0..self.buckets {
                let lo = horizon * b as f64 / self.buckets as f64;
                let hi = if b + 1 == self.buckets { f64::INFINITY } else { horizon * (b + 1) as f64 / self.buckets as f64 };
                p = p.join(&Portfolio::bucket(m, lo, hi, theta[k * self.buckets + b]));
            }
        }
        p
    }

    pub fn labels(&self, model: &MarketModel) -> Vec<String> {
        self.maturities
            .iter()
            .flat_map(|&m| (0..self.buckets).map(move |b| format!("T={}/bucket{}", model.maturities()[m], b)))
            .collect()
    }
}

/// Per-path claim values, densities and bucketed bond gains at the finest
/// basis of a study; coarser bases aggregate these gains.
#[derive(Debug, Clone)]
pub struct HedgeData {
    pub basis: HedgeBasis,
    pub rho: Vec<f64>,
    pub claim: Vec<f64>,
    /// `[path][k * buckets + b]`
    pub gains: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Simulates `mc.n_paths` paths and records everything the least-squares
/// problem needs for `basis` and any coarsening of it.
pub fn collect_hedge_data(
    model: &MarketModel,
    claim: &ClaimRepresentation,
    basis: &HedgeBasis,
    mc: &McConfig,
) -> Result<HedgeData> {
    check_admissibility(&basis.portfolio(&vec![1.0; basis.dim()], model.grid().horizon()), model)?;
    claim.check(model)?;
    let spec = model.spec();
    let density = DensityEngine::new(&spec.pair, &spec.triplet)?;
    let horizon = model.grid().horizon();
    let rows = mc.run(&spec.triplet, |path| {
        let surface = model.evolve(path)?;
        let ctx = claim.context(path, &surface, model)?;
        let x = claim.payoff(&ctx)?;
        let rho = density.density(path)?.rho.terminal();
        let events = path.events();
        let mut gains = vec![0.0; basis.dim()];
        for (k, &m) in basis.maturities.iter().enumerate() {
            let inc = bond_increments(model, &surface, path, m)?;
            for e in 1..events.len() {
                let b = basis.bucket_of(events[e - 1].time, horizon);
                gains[k * basis.buckets + b] += inc.brownian[e] + inc.jumps[e] + inc.compensator[e];
            }
        }
        Ok((rho, x, gains))
    })?;
    let mut data = HedgeData {
        basis: basis.clone(),
        rho: Vec::with_capacity(rows.len()),
        claim: Vec::with_capacity(rows.len()),
        gains: Vec::with_capacity(rows.len()),
        seed: mc.seed,
    };
    for (r, x, g) in rows {
        data.rho.push(r);
        data.claim.push(x);
        data.gains.push(g);
    }
    Ok(data)
}

impl HedgeData {
    /// Gains for a coarser basis: a subset of maturities and a bucket count
    /// dividing the recorded one.
    pub fn design(&self, basis: &HedgeBasis) -> Result<Vec<Vec<f64>>> {
        let fine = &self.basis;
        if fine.buckets % basis.buckets != 0 {
            return Err(Error::validation("hedge.buckets", "must divide the recorded bucket count"));
        }
        let cols: Vec<usize> = basis
            .maturities
            .iter()
            .map(|m| {
                fine.maturities
                    .iter()
                    .position(|f| f == m)
                    .ok_or_else(|| Error::Maturity(format!("maturity index {m} not recorded")))
            })
            .collect::<Result<_>>()?;
        let ratio = fine.buckets / basis.buckets;
        Ok(self
            .gains
            .iter()
            .map(|g| {
                let mut row = vec![0.0; basis.dim()];
                for (k, &c) in cols.iter().enumerate() {
                    for b in 0..fine.buckets {
                        row[k * basis.buckets + b / ratio] += g[c * fine.buckets + b];
                    }
                }
                row
            })
            .collect())
    }
}

/// Weighted normal equations `(G^T W G) theta = G^T W y` for `y = X - cost`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub gram: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// `sum_i w_i y_i^2`
    pub y_sq: f64,
    pub lambda: f64,
}

impl NormalEquations {
    /// `sum_i w_i (y_i - theta . G_i)^2`.
    pub fn objective(&self, theta: &[f64]) -> f64 {
        let t = DVector::from_column_slice(theta);
        self.y_sq - 2.0 * t.dot(&self.rhs) + (self.gram.clone() * &t).dot(&t)
    }

    /// Objective plus the Tikhonov term.
    pub fn regularized_objective(&self, theta: &[f64]) -> f64 {
        self.objective(theta) + self.lambda * theta.iter().map(|v| v * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeReport {
    pub claim: String,
    pub basis: HedgeBasis,
    /// `rho`-weighted mean of the claim.
    pub initial_cost: f64,
    pub claim_l2: f64,
    pub residual_mean: f64,
    pub residual_variance: f64,
    pub residual_l2: f64,
    pub coefficients: Vec<f64>,
    pub labels: Vec<String>,
    pub lambda: f64,
    pub n_paths: usize,
    pub seed: u64,
}

// Sums per chunk, then over chunks in order, independent of thread count.
fn chunked_sum<T, F>(n: usize, zero: T, f: F, add: impl Fn(&mut T, &T)) -> T
where
    T: Send + Sync + Clone,
    F: Fn(&mut T, usize) + Sync + Send,
{
    let parts = map_indices(n.div_ceil(CHUNK), |c| {
        let mut acc = zero.clone();
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            f(&mut acc, i);
        }
        acc
    });
    let mut total = zero;
    for p in &parts {
        add(&mut total, p);
    }
    total
}

/// Builds the normal equations for `basis` with `lambda = reg * trace / p`.
pub fn normal_equations(data: &HedgeData, basis: &HedgeBasis, reg: f64) -> Result<(NormalEquations, f64, Vec<Vec<f64>>)> {
    let design = data.design(basis)?;
    let n = data.rho.len();
    if n == 0 {
        return Err(Error::validation("paths", "need at least one path"));
    }
    let wsum = chunked_sum(n, 0.0, |a, i| *a += data.rho[i], |a, b| *a += b);
    let cost = chunked_sum(n, 0.0, |a, i| *a += data.rho[i] * data.claim[i], |a, b| *a += b) / wsum;
    let p = basis.dim();
    let zero = (DMatrix::<f64>::zeros(p, p), DVector::<f64>::zeros(p), 0.0);
    let (gram, rhs, y_sq) = chunked_sum(
        n,
        zero,
        |acc, i| {
            let w = data.rho[i] / wsum;
            let y = data.claim[i] - cost;
            let g = &design[i];
            for a in 0..p {
                if g[a] == 0.0 {
                    continue;
                }
                acc.1[a] += w * g[a] * y;
                for b in 0..p {
                    acc.0[(a, b)] += w * g[a] * g[b];
                }
            }
            acc.2 += w * y * y;
        },
        |acc, part| {
            acc.0 += &part.0;
            acc.1 += &part.1;
            acc.2 += part.2;
        },
    );
    let lambda = if p == 0 { 0.0 } else { reg * gram.trace() / p as f64 };
    Ok((NormalEquations { gram, rhs, y_sq, lambda }, cost, design))
}

/// Variance-minimizing hedge of the recorded claim over `basis`.
pub fn least_squares_hedge(data: &HedgeData, basis: &HedgeBasis, reg: f64, model: &MarketModel, claim: &str) -> Result<HedgeReport> {
    let (eq, cost, design) = normal_equations(data, basis, reg)?;
    let p = basis.dim();
    let theta = if p == 0 || eq.gram.trace() == 0.0 {
        DVector::zeros(p)
    } else {
        let a = &eq.gram + DMatrix::identity(p, p) * eq.lambda;
        let chol = a.cholesky().ok_or_else(|| Error::Singularity(format!("regularized Gram matrix of size {p}")))?;
        chol.solve(&eq.rhs)
    };
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singularity("non-finite hedge coefficients".into()));
    }
    let n = data.rho.len();
    let wsum = chunked_sum(n, 0.0, |a, i| *a += data.rho[i], |a, b| *a += b);
    let residual = |i: usize| data.claim[i] - cost - design[i].iter().zip(theta.iter()).map(|(g, t)| g * t).sum::<f64>();
    let (m1, m2, x2) = chunked_sum(
        n,
        (0.0, 0.0, 0.0),
        |acc, i| {
            let w = data.rho[i] / wsum;
            let r = residual(i);
            acc.0 += w * r;
            acc.1 += w * r * r;
            acc.2 += w * data.claim[i] * data.claim[i];
        },
        |acc, part| {
            acc.0 += part.0;
            acc.1 += part.1;
            acc.2 += part.2;
        },
    );
    Ok(HedgeReport {
        claim: claim.to_string(),
        basis: basis.clone(),
        initial_cost: cost,
        claim_l2: x2.sqrt(),
        residual_mean: m1,
        residual_variance: (m2 - m1 * m1).max(0.0),
        residual_l2: m2.sqrt(),
        coefficients: theta.iter().copied().collect(),
        labels: basis.labels(model),
        lambda: eq.lambda,
        n_paths: n,
        seed: data.seed,
    })
}

/// `rho`-weighted mean of the wealth at every grid time, for the
/// martingale part of admissibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WealthDiagnostic {
    pub times: Vec<f64>,
    pub initial: f64,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub n_paths: usize,
}

impl WealthDiagnostic {
    pub fn max_abs_z(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.se)
            .map(|(&mean, &se)| {
                let se = se.max(1e-12 * self.initial.abs().max(1.0));
                Estimate { mean, se, n: self.n_paths }.z_score(self.initial).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub fn wealth_martingale_test(portfolio: &Portfolio, initial: f64, model: &MarketModel, mc: &McConfig) -> Result<WealthDiagnostic> {
    check_admissibility(portfolio, model)?;
    let spec = model.spec();
    let density = DensityEngine::new(&spec.pair, &spec.triplet)?;
    let nt = model.grid().len();
    let moments = crate::mc::accumulate(mc.n_paths, nt, |i| {
        let path = mc.path(&spec.triplet, i);
        let surface = model.evolve(&path)?;
        let w = wealth_path(portfolio, initial, &surface, model, &path)?;
        let rho = density.density(&path)?.rho;
        Ok::<_, Error>((0..nt).map(|g| rho.at_grid(g) * w.at_grid(g)).collect())
    })?;
    let est: Vec<Estimate> = (0..nt).map(|g| moments.estimate(g)).collect();
    Ok(WealthDiagnostic {
        times: model.grid().times().to_vec(),
        initial,
        mean: est.iter().map(|e| e.mean).collect(),
        se: est.iter().map(|e| e.se).collect(),
        n_paths: mc.n_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::girsanov::GeneratingPair;
    use crate::hjm::{DriftMode, InitialCurve, MartingaleMeasureSpec, VolatilitySpec};
    use crate::levy::{LevyMeasure, LevyTriplet, TimeGrid};

    fn model(nu: LevyMeasure, q: f64, vol: VolatilitySpec, steps: usize) -> MarketModel {
        let triplet = LevyTriplet::new(0.01, q, nu).unwrap();
        let pair = if triplet.nu().is_zero() { GeneratingPair::identity() } else { GeneratingPair::tilt(0.1) };
        let spec = MartingaleMeasureSpec::new(triplet, pair, vol).unwrap();
        let grid = Arc::new(TimeGrid::uniform(1.0, steps).unwrap());
        MarketModel::new(spec, InitialCurve::Flat { rate: 0.02 }, vec![0.5, 1.0], grid, DriftMode::Hjm { shift: 0.0 }).unwrap()
    }

    fn jump_model(steps: usize) -> MarketModel {
        model(LevyMeasure::double_exponential(2.0, 0.5, 3.0, 3.0).unwrap(), 0.3, VolatilitySpec::Constant { sigma: 0.2 }, steps)
    }

    fn one_path(model: &MarketModel, seed: u64) -> (LevyPath, ForwardSurface) {
        let path = McConfig::new(1, seed, Arc::clone(model.grid())).path(&model.spec().triplet, 0);
        let surface = model.evolve(&path).unwrap();
        (path, surface)
    }

    #[test]
    fn empty_portfolio_keeps_wealth() {
        let m = jump_model(32);
        let (path, surface) = one_path(&m, 2);
        let w = wealth_path(&Portfolio::empty(), 0.7, &surface, &m, &path).unwrap();
        assert!(w.wealth.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn static_bond_in_still_market() {
        let m = model(LevyMeasure::atomic(&[(1.0, 2.0)]).unwrap(), 0.5, VolatilitySpec::Zero, 32);
        let (path, surface) = one_path(&m, 3);
        let w = wealth_path(&Portfolio::buy_and_hold(1, 2.0), 1.0, &surface, &m, &path).unwrap();
        assert!(w.wealth.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn wealth_is_linear_and_self_financing() {
        let m = jump_model(64);
        let (path, surface) = one_path(&m, 4);
        let a = Portfolio::buy_and_hold(0, 1.5);
        let b = Portfolio::bucket(1, 0.25, 0.75, -2.0);
        let wa = wealth_path(&a, 0.0, &surface, &m, &path).unwrap();
        let wb = wealth_path(&b, 0.0, &surface, &m, &path).unwrap();
        let wab = wealth_path(&a.join(&b), 0.0, &surface, &m, &path).unwrap();
        for k in 0..wab.wealth.len() {
            assert!((wab.wealth[k] - wa.wealth[k] - wb.wealth[k]).abs() < 1e-10);
            let sum = wab.initial + wab.brownian[k] + wab.jumps[k] + wab.compensator[k];
            assert_eq!(wab.wealth[k], sum);
        }
    }

    #[test]
    fn scheme_wealth_tracks_bond_price() {
        let m = jump_model(512);
        let (path, surface) = one_path(&m, 5);
        let w = wealth_path(&Portfolio::buy_and_hold(1, 1.0), m.initial_discounted(1), &surface, &m, &path).unwrap();
        let exact = surface.discounted[1].terminal();
        assert!((w.terminal() - exact).abs() < 5e-3 * exact, "{} vs {exact}", w.terminal());
    }

    #[test]
    fn trivial_replication_residuals() {
        let m = jump_model(16);
        let (path, surface) = one_path(&m, 6);
        let ctx = ClaimContext { path: &path, surface: &surface, model: &m, stop: 1.0 };
        let r = replication_equations_residual(&Portfolio::empty(), &ctx, &ClaimRepresentation::constant(3.0), 0.4, &[0.5, -1.0])
            .unwrap();
        assert_eq!(r.eq2, 0.0);
        assert_eq!(r.max_eq3(), 0.0);
    }

    #[test]
    fn wiener_market_is_solvable_with_one_bond() {
        let m = model(LevyMeasure::zero(), 1.0, VolatilitySpec::Constant { sigma: 0.1 }, 64);
        let (path, surface) = one_path(&m, 7);
        let claim = ClaimRepresentation::new("brownian", 0.0, |s, _| 0.3 + s, |_, _, _| 0.0, |_| Ok(0.0));
        let surf = Arc::new(surface.clone());
        let p = path.clone();
        let c = TimeField::adapted("replicating", move |s, _| {
            let pm = surf.discounted[1].before(s, &p.history_before(s));
            -(0.3 + s) / (pm * 0.1 * (1.0 - s))
        });
        let portfolio = Portfolio::new(vec![1], vec![c], vec![10.0]).unwrap();
        let ctx = ClaimContext { path: &path, surface: &surface, model: &m, stop: 1.0 };
        for s in [0.1, 0.37, 0.8] {
            let r = replication_equations_residual(&portfolio, &ctx, &claim, s, &[]).unwrap();
            assert!(r.eq2 <= 1e-10, "{}", r.eq2);
        }
    }

    #[test]
    fn two_atoms_one_bond_is_unsolvable() {
        let m = model(LevyMeasure::atomic(&[(1.0, 1.0), (-1.0, 1.0)]).unwrap(), 0.0, VolatilitySpec::Constant { sigma: 0.2 }, 16);
        let (path, surface) = one_path(&m, 8);
        let claim = ClaimRepresentation::jump_integral(&m, JumpSet::point(1.0), 1.0).unwrap();
        let ctx = ClaimContext { path: &path, surface: &surface, model: &m, stop: 1.0 };
        let s = 0.3;
        let c = solve_replication_at(&[1], &ctx, &claim, s, &[1.0, -1.0]).unwrap();
        let portfolio = Portfolio::new(vec![1], vec![TimeField::constant(c[0])], vec![c[0].abs()]).unwrap();
        let r = replication_equations_residual(&portfolio, &ctx, &claim, s, &[1.0, -1.0]).unwrap();
        assert!(r.max_eq3() >= 0.1, "{:?}", r);
        // two bonds span both atoms
        let c2 = solve_replication_at(&[0, 1], &ctx, &claim, s, &[1.0, -1.0]).unwrap();
        let p2 = Portfolio::new(vec![0, 1], c2.iter().map(|&v| TimeField::constant(v)).collect(), vec![1e3; 2]).unwrap();
        let r2 = replication_equations_residual(&p2, &ctx, &claim, s, &[1.0, -1.0]).unwrap();
        assert!(r2.max_eq3() < 1e-9);
    }

    #[test]
    fn bond_claim_representation_is_consistent() {
        let m = jump_model(256);
        let (path, surface) = one_path(&m, 9);
        let claim = ClaimRepresentation::bond_payoff(&m, 1).unwrap();
        let ctx = ClaimContext { path: &path, surface: &surface, model: &m, stop: 1.0 };
        assert!(claim.representation_gap(&ctx).unwrap() < 1e-2);
    }

    #[test]
    fn least_squares_oracles() {
        let m = jump_model(64);
        let mc = McConfig::new(600, 21, Arc::clone(m.grid()));
        let basis = HedgeBasis::new(vec![0, 1], 4).unwrap();

        let constant = collect_hedge_data(&m, &ClaimRepresentation::constant(2.5), &basis, &mc).unwrap();
        let r = least_squares_hedge(&constant, &basis, 1e-8, &m, "constant").unwrap();
        assert!((r.initial_cost - 2.5).abs() < 1e-12);
        assert!(r.residual_l2 < 1e-10);

        let bond = collect_hedge_data(&m, &ClaimRepresentation::bond_payoff(&m, 1).unwrap(), &basis, &mc).unwrap();
        let r = least_squares_hedge(&bond, &basis, 1e-8, &m, "bond").unwrap();
        assert!(r.residual_l2 <= 0.05 * r.claim_l2);

        // first-order conditions of the regularized objective
        let (eq, _, _) = normal_equations(&bond, &basis, 1e-8).unwrap();
        let h = 1e-4;
        for j in 0..basis.dim() {
            let mut up = r.coefficients.clone();
            let mut dn = r.coefficients.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (eq.regularized_objective(&up) - eq.regularized_objective(&dn)) / (2.0 * h);
            assert!(fd.abs() < 1e-8, "component {j}: {fd}");
        }

        // nested bases never do worse
        let coarse = least_squares_hedge(&bond, &HedgeBasis::new(vec![1], 1).unwrap(), 1e-8, &m, "bond").unwrap();
        let mid = least_squares_hedge(&bond, &HedgeBasis::new(vec![1], 2).unwrap(), 1e-8, &m, "bond").unwrap();
        assert!(mid.residual_l2 <= coarse.residual_l2 + 1e-6);
        assert!(r.residual_l2 <= mid.residual_l2 + 1e-6);
    }

    #[test]
    fn bounded_holdings_give_martingale_wealth() {
        let m = jump_model(16);
        let mc = McConfig::new(3000, 31, Arc::clone(m.grid()));
        let p = Portfolio::buy_and_hold(1, 1.0).join(&Portfolio::bucket(0, 0.0, 0.25, -3.0));
        let d = wealth_martingale_test(&p, 1.0, &m, &mc).unwrap();
        assert!(d.max_abs_z() <= 4.0, "{}", d.max_abs_z());
    }
}
