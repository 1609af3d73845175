//! Concentration points, the alternating counterexample integrand, the
//! stopped payoff built from it and the moment-problem certificate showing
//! that the payoff cannot be replicated by bond portfolios.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::JumpField;
use crate::hedging::{collect_hedge_data, least_squares_hedge, ClaimRepresentation, HedgeBasis, HedgeReport};
use crate::hjm::{ForwardSurface, MarketModel};
use crate::jump_calculus::{class_check, Compensator, GeneralIntegrand, IntegrandClass, JumpIntegrator};
use crate::levy::{LevyMeasure, LevyPath};
use crate::mc::{map_indices, McConfig};
use crate::sets::{Interval, JumpSet};

/// Radii `eps_n = eps_1 2^{-(n-1)}` around `y0` and the masses of the
/// annuli `B(y0, eps_n) \ B(y0, eps_{n+1})`, `n = 1..=2K+2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationWitness {
    pub y0: f64,
    /// `2K + 3` radii.
    pub epsilons: Vec<f64>,
    /// `2K + 2` masses.
    pub annulus_masses: Vec<f64>,
}

impl ConcentrationWitness {
    pub fn pairs(&self) -> usize {
        self.annulus_masses.len() / 2
    }

    /// Annulus `n` (1-based): `eps_{n+1} < |y - y0| <= eps_n`.
    pub fn annulus(&self, n: usize) -> JumpSet {
        annulus_set(self.y0, self.epsilons[n - 1], self.epsilons[n])
    }
}

fn annulus_set(y0: f64, outer: f64, inner: f64) -> JumpSet {
    JumpSet::from_intervals(vec![
        Interval { lo: y0 - outer, hi: y0 - inner, lo_closed: true, hi_closed: false },
        Interval { lo: y0 + inner, hi: y0 + outer, lo_closed: false, hi_closed: true },
    ])
}

/// Builds the halving sequence from `eps1` (default `|y0| / 4`) and checks
/// every annulus carries mass.
pub fn find_concentration_witness(nu: &LevyMeasure, y0: f64, k: usize, eps1: Option<f64>) -> Result<ConcentrationWitness> {
    if !(y0 != 0.0 && y0.is_finite()) {
        return Err(Error::validation("incompleteness.y0", "must be finite and nonzero"));
    }
    if k < 4 {
        return Err(Error::validation("incompleteness.K", "must be >= 4"));
    }
    let eps1 = eps1.unwrap_or(y0.abs() / 4.0);
    if !(eps1 > 0.0 && eps1 < y0.abs()) {
        return Err(Error::validation("incompleteness.eps1", "need 0 < eps1 < |y0| so the ball excludes 0"));
    }
    if nu.is_atomic() {
        return Err(Error::NotConcentrated(format!("atomic measure has no concentration point at {y0}")));
    }
    let mut epsilons = vec![eps1];
    for _ in 0..2 * k + 2 {
        epsilons.push(epsilons.last().unwrap() * 0.5);
    }
    let mut masses = Vec::with_capacity(2 * k + 2);
    for n in 1..=2 * k + 2 {
        let m = nu.mass(&annulus_set(y0, epsilons[n - 1], epsilons[n]))?;
        if !(m > 0.0) {
            return Err(Error::NotConcentrated(format!("annulus {n} around {y0} has no mass")));
        }
        masses.push(m);
    }
    Ok(ConcentrationWitness { y0, epsilons, annulus_masses: masses })
}

/// `g(y) = ±(|y| ∧ 1)`: positive on odd annuli, outside `B(y0, eps_1)` and at
/// `y0`, negative on even annuli. Inside the stored radii the halving
/// pattern continues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleG {
    pub witness: ConcentrationWitness,
}

impl CounterexampleG {
    pub fn new(witness: ConcentrationWitness) -> Self {
        Self { witness }
    }

    /// Index of the annulus containing `y`, or `None` outside `B(y0, eps_1)`
    /// and at `y0`.
    pub fn annulus_index(&self, y: f64) -> Option<usize> {
        annulus_index(self.witness.y0, self.witness.epsilons[0], y)
    }

    pub fn eval(&self, y: f64) -> f64 {
        g_value(self.witness.y0, self.witness.epsilons[0], y)
    }

    pub fn field(&self) -> JumpField {
        let (y0, eps1) = (self.witness.y0, self.witness.epsilons[0]);
        let mut breaks = vec![y0];
        for e in &self.witness.epsilons {
            breaks.push(y0 - e);
            breaks.push(y0 + e);
        }
        JumpField::homogeneous("counterexample g", move |y| g_value(y0, eps1, y)).with_breaks(breaks)
    }
}

fn annulus_index(y0: f64, eps1: f64, y: f64) -> Option<usize> {
    let d = (y - y0).abs();
    if d == 0.0 || d > eps1 {
        return None;
    }
    let (mut n, mut e) = (1, eps1);
    while d <= 0.5 * e && e > 0.0 {
        e *= 0.5;
        n += 1;
    }
    Some(n)
}

fn g_value(y0: f64, eps1: f64, y: f64) -> f64 {
    let m = y.abs().min(1.0);
    match annulus_index(y0, eps1, y) {
        Some(n) if n % 2 == 0 => -m,
        _ => m,
    }
}

/// The stopped integral `X = ∫_0^{tau} ∫ g dpi~_Q`, `tau` the first event at
/// which the running integral reaches `k0` in absolute value.
#[derive(Clone)]
pub struct StoppedIntegral {
    integrator: Arc<JumpIntegrator>,
    pub k0: f64,
}

impl std::fmt::Debug for StoppedIntegral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoppedIntegral").field("k0", &self.k0).finish()
    }
}

impl StoppedIntegral {
    pub fn new(g: &CounterexampleG, model: &MarketModel, k0: f64) -> Result<Self> {
        if !(k0 > 0.0) {
            return Err(Error::DegenerateStop(format!("k0 = {k0} stops every path at time 0")));
        }
        let spec = model.spec();
        let field = g.field();
        let report = class_check(
            &field,
            spec.triplet.nu(),
            Some(spec.pair.psi()),
            IntegrandClass::Psi12Q,
            model.grid().horizon(),
            None,
        )?;
        if !report.ok {
            return Err(Error::Class(format!("counterexample g: {}", report.detail.unwrap_or_default())));
        }
        let integrator = JumpIntegrator::new(
            &GeneralIntegrand::new(field, IntegrandClass::Psi12Q),
            spec.triplet.nu(),
            Compensator::Tilted(spec.pair.psi().clone()),
        )?;
        Ok(Self { integrator: Arc::new(integrator), k0 })
    }

    /// `(tau, X)` on one path.
    pub fn stop(&self, path: &LevyPath) -> Result<(f64, f64)> {
        let integral = self.integrator.integrate(path)?;
        match integral.right.iter().position(|v| v.abs() >= self.k0) {
            Some(e) => Ok((integral.times[e], integral.right[e])),
            None => Ok((path.horizon(), integral.terminal())),
        }
    }

    /// Running `sup |∫∫ g dpi~_Q|` over the path.
    pub fn running_max(&self, path: &LevyPath) -> Result<f64> {
        let integral = self.integrator.integrate(path)?;
        Ok(integral.right.iter().chain(&integral.left).fold(0.0, |m, v| m.max(v.abs())))
    }
}

/// Claim `X` with `f_X = 0`, `g_X(s, y) = g(y) 1{s <= tau}` and `M_0 = 0`.
pub fn build_counterexample_claim(g: &CounterexampleG, model: &MarketModel, k0: f64) -> Result<ClaimRepresentation> {
    let stopped = StoppedIntegral::new(g, model, k0)?;
    let field = g.field();
    let (s1, s2) = (stopped.clone(), stopped);
    Ok(ClaimRepresentation::new(
        format!("counterexample(k0 = {k0})"),
        0.0,
        |_, _| 0.0,
        move |s, y, ctx| if s <= ctx.stop { field.eval(s, y, &ctx.path.history_before(s)) } else { 0.0 },
        move |ctx| Ok(s1.stop(ctx.path)?.1),
    )
    .with_stopping(move |path| Ok(s2.stop(path)?.0))
    .with_envelope(g.field()))
}

/// Smallest integer `k >= 1` for which at least `level` of the pilot paths
/// never reach `k`.
pub fn select_k0(g: &CounterexampleG, model: &MarketModel, pilot: &McConfig, level: f64) -> Result<f64> {
    let probe = StoppedIntegral::new(g, model, f64::INFINITY)?;
    let mut maxima = pilot.run(&model.spec().triplet, |p| probe.running_max(p))?;
    maxima.sort_by(f64::total_cmp);
    let idx = ((level * maxima.len() as f64).ceil() as usize).clamp(1, maxima.len()) - 1;
    Ok((maxima[idx].floor() + 1.0).max(1.0))
}

/// `P^(t-, T_m)` and `Σ(t, T_m)` over the maturity grid at one `(omega, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSnapshot {
    pub t: f64,
    pub p_minus: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl SurfaceSnapshot {
    pub fn initial(model: &MarketModel) -> Self {
        let n = model.maturities().len();
        Self {
            t: 0.0,
            p_minus: (0..n).map(|m| model.initial_discounted(m)).collect(),
            sigma: model.maturities().iter().map(|&mat| model.spec().vol.big_sigma(0.0, mat)).collect(),
        }
    }

    pub fn from_surface(model: &MarketModel, surface: &ForwardSurface, path: &LevyPath, i: usize) -> Self {
        let t = model.grid().times()[i];
        let past = path.history_before(t);
        Self {
            t,
            p_minus: surface.discounted.iter().map(|d| d.before(t, &past)).collect(),
            sigma: model.maturities().iter().map(|&mat| model.spec().vol.big_sigma(t, mat)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCertificate {
    pub t: f64,
    /// One probe per annulus.
    pub probes: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub ratio: Vec<f64>,
    /// Mean-value bound on `rhs_k`.
    pub rhs_bound: Vec<f64>,
    /// First pair index from which the ratios increase strictly.
    pub k_min: usize,
}

impl MomentCertificate {
    /// Deepest over shallowest ratio.
    pub fn growth(&self) -> f64 {
        self.ratio.last().unwrap() / self.ratio[0]
    }

    pub fn tail_increasing(&self, from: usize) -> bool {
        self.ratio[from.min(self.ratio.len() - 1)..].windows(2).all(|w| w[1] > w[0])
    }
}

/// Median of `nu` restricted to `[lo, hi]`, by bisection on the closed-form
/// distribution function.
fn interval_median(nu: &LevyMeasure, lo: f64, hi: f64) -> Result<f64> {
    let total = nu.mass(&JumpSet::closed(lo, hi))?;
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if nu.mass(&JumpSet::closed(lo, mid))? < 0.5 * total {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Probe for annulus `n`: the `nu`-median of its heavier half, which lies
/// inside the annulus.
pub fn annulus_probe(nu: &LevyMeasure, witness: &ConcentrationWitness, n: usize) -> Result<f64> {
    let (y0, outer, inner) = (witness.y0, witness.epsilons[n - 1], witness.epsilons[n]);
    let left = nu.mass(&JumpSet::closed(y0 - outer, y0 - inner))?;
    let right = nu.mass(&JumpSet::closed(y0 + inner, y0 + outer))?;
    if left >= right {
        interval_median(nu, y0 - outer, y0 - inner)
    } else {
        interval_median(nu, y0 + inner, y0 + outer)
    }
}

/// Evaluates the moment inequality with `beta = (1, -1)` on consecutive
/// annulus probes `(a_{2k+1}, a_{2k+2})`, sup-norm over the maturity grid.
pub fn moment_certificate(g: &CounterexampleG, nu: &LevyMeasure, snapshot: &SurfaceSnapshot, n_pairs: usize) -> Result<MomentCertificate> {
    let w = &g.witness;
    if 2 * n_pairs > w.annulus_masses.len() {
        return Err(Error::validation("incompleteness.K", "witness has too few annuli for the requested pairs"));
    }
    let probes: Vec<f64> = (1..=2 * n_pairs).map(|n| annulus_probe(nu, w, n)).collect::<Result<_>>()?;
    let radius = w.y0.abs() + w.epsilons[0];
    let p_sup = snapshot.p_minus.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let deriv_sup = snapshot.sigma.iter().fold(0.0f64, |m, s| m.max((s.abs() * radius).exp() * s.abs()));
    let (mut lhs, mut rhs, mut ratio, mut bound) = (vec![], vec![], vec![], vec![]);
    for k in 0..n_pairs {
        let (a, b) = (probes[2 * k], probes[2 * k + 1]);
        let l = (g.eval(a) - g.eval(b)).abs();
        let r = snapshot
            .p_minus
            .iter()
            .zip(&snapshot.sigma)
            .map(|(p, s)| (p * ((-s * a).exp_m1() - (-s * b).exp_m1())).abs())
            .fold(0.0, f64::max);
        lhs.push(l);
        rhs.push(r);
        ratio.push(l / r);
        bound.push(p_sup * deriv_sup * (a - b).abs());
    }
    let mut k_min = ratio.len() - 1;
    while k_min > 0 && ratio[k_min] > ratio[k_min - 1] {
        k_min -= 1;
    }
    Ok(MomentCertificate { t: snapshot.t, probes, lhs, rhs, ratio, rhs_bound: bound, k_min })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncompletenessConfig {
    pub y0: f64,
    #[serde(default)]
    pub eps1: Option<f64>,
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    /// Chosen from a pilot run when absent.
    #[serde(default)]
    pub k0: Option<f64>,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_buckets")]
    pub base_buckets: usize,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default = "default_reg")]
    pub regularization: f64,
}

fn default_k() -> usize {
    8
}
fn default_levels() -> usize {
    3
}
fn default_buckets() -> usize {
    2
}
fn default_snapshots() -> usize {
    10
}
fn default_reg() -> f64 {
    1e-8
}

impl IncompletenessConfig {
    pub fn new(y0: f64) -> Self {
        Self {
            y0,
            eps1: None,
            k: default_k(),
            k0: None,
            levels: default_levels(),
            base_buckets: default_buckets(),
            snapshots: default_snapshots(),
            regularization: default_reg(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualsByLevel {
    pub counterexample: Vec<f64>,
    pub control: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncompletenessReport {
    pub y0: f64,
    pub epsilons: Vec<f64>,
    pub annulus_masses: Vec<f64>,
    pub k0: f64,
    pub k0_from_pilot: bool,
    /// Certificate at `t = 0` on the initial curve.
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub ratio: Vec<f64>,
    pub k_min: usize,
    /// Certificates at sampled `(omega, t)`.
    pub snapshots: Vec<MomentCertificate>,
    pub residuals_by_level: ResidualsByLevel,
    pub hedges: Vec<HedgeReport>,
    pub control_claim_l2: f64,
    pub counterexample_claim_l2: f64,
    pub max_abs_payoff: f64,
}

/// Maturity indices of refinement level `level` out of `levels`: every
/// `2^{levels-1-level}`-th maturity counted from the last, so levels nest.
pub fn level_maturities(n_maturities: usize, levels: usize, level: usize) -> Vec<usize> {
    let step = 1usize << (levels - 1 - level);
    (0..n_maturities).filter(|i| (n_maturities - 1 - i) % step == 0).collect()
}

/// Hedges the counterexample and a replicable control (the longest bond)
/// over nested bases and evaluates the certificate.
pub fn incompleteness_experiment(model: &MarketModel, config: &IncompletenessConfig, mc: &McConfig) -> Result<IncompletenessReport> {
    if config.levels == 0 || config.base_buckets == 0 {
        return Err(Error::validation("incompleteness.levels", "levels and base_buckets must be >= 1"));
    }
    let nu = model.spec().triplet.nu();
    let witness = find_concentration_witness(nu, config.y0, config.k, config.eps1)?;
    let g = CounterexampleG::new(witness.clone());
    let pairs = witness.pairs();
    let initial = moment_certificate(&g, nu, &SurfaceSnapshot::initial(model), pairs)?;

    let (k0, from_pilot) = match config.k0 {
        Some(k0) => (k0, false),
        None => {
            let pilot = McConfig::new(mc.n_paths.min(2000), mc.seed ^ 0x5049_4c4f_54, Arc::clone(&mc.grid));
            (select_k0(&g, model, &pilot, 0.99)?, true)
        }
    };
    let counter = build_counterexample_claim(&g, model, k0)?;
    let last = model.maturities().len() - 1;
    let control = ClaimRepresentation::bond_payoff(model, last)?;

    let n_mat = model.maturities().len();
    let finest = HedgeBasis::new(
        level_maturities(n_mat, config.levels, config.levels - 1),
        config.base_buckets << (config.levels - 1),
    )?;
    let counter_data = collect_hedge_data(model, &counter, &finest, mc)?;
    let control_data = collect_hedge_data(model, &control, &finest, mc)?;
    let max_abs_payoff = counter_data.claim.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut residuals = ResidualsByLevel { counterexample: vec![], control: vec![] };
    let mut hedges = Vec::new();
    for level in 0..config.levels {
        let basis = HedgeBasis::new(level_maturities(n_mat, config.levels, level), config.base_buckets << level)?;
        let c = least_squares_hedge(&counter_data, &basis, config.regularization, model, &counter.label)?;
        let b = least_squares_hedge(&control_data, &basis, config.regularization, model, &control.label)?;
        residuals.counterexample.push(c.residual_l2);
        residuals.control.push(b.residual_l2);
        hedges.push(c);
        hedges.push(b);
    }

    let grid = model.grid();
    let last_mat = model.maturity_index()[last];
    let snapshots = map_indices(config.snapshots, |j| -> Result<MomentCertificate> {
        let path = mc.path(&model.spec().triplet, j);
        let surface = model.evolve(&path)?;
        let i = (j * last_mat) / config.snapshots.max(1);
        moment_certificate(&g, nu, &SurfaceSnapshot::from_surface(model, &surface, &path, i.min(grid.len() - 2)), pairs)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    Ok(IncompletenessReport {
        y0: witness.y0,
        epsilons: witness.epsilons.clone(),
        annulus_masses: witness.annulus_masses.clone(),
        k0,
        k0_from_pilot: from_pilot,
        lhs: initial.lhs.clone(),
        rhs: initial.rhs.clone(),
        ratio: initial.ratio.clone(),
        k_min: initial.k_min,
        snapshots,
        residuals_by_level: residuals,
        control_claim_l2: hedges[1].claim_l2,
        counterexample_claim_l2: hedges[0].claim_l2,
        hedges,
        max_abs_payoff,
    })
}
