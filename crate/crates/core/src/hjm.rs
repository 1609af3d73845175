//! Forward-rate surfaces driven by a Lévy process, the drift condition that
//! makes discounted bonds martingales under a given measure, and the
//! discounted-price dynamics under that measure.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::girsanov::{DensityEngine, GeneratingPair};
use crate::jump_calculus::{gauss_partial, GAUSS2};
use crate::levy::{CadlagPath, EventKind, History, LevyPath, LevyTriplet, TimeGrid};
use crate::mc::{accumulate, Estimate, McConfig};
use crate::quadrature::{self, QuadConfig};
use crate::sets::JumpSet;

/// Deterministic forward-rate volatility `sigma(s, T)`, zero for `s >= T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VolatilitySpec {
    Zero,
    Constant { sigma: f64 },
    /// `sigma e^{-kappa (T - s)}`
    Exponential { sigma: f64, kappa: f64 },
}

impl VolatilitySpec {
    pub fn validate(&self, bound: f64) -> Result<()> {
        let (sigma, kappa) = match *self {
            Self::Zero => return Ok(()),
            Self::Constant { sigma } => (sigma, 0.0),
            Self::Exponential { sigma, kappa } => (sigma, kappa),
        };
        if !sigma.is_finite() || !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::validation("vol", "sigma must be finite and kappa >= 0"));
        }
        if sigma.abs() > bound {
            return Err(Error::Bound(format!("|sigma| = {} exceeds the declared bound {bound}", sigma.abs())));
        }
        Ok(())
    }

    /// `sup |sigma|`.
    pub fn sup(&self) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant { sigma } | Self::Exponential { sigma, .. } => sigma.abs(),
        }
    }

    pub fn sigma(&self, s: f64, maturity: f64) -> f64 {
        if s >= maturity {
            return 0.0;
        }
        match *self {
            Self::Zero => 0.0,
            Self::Constant { sigma } => sigma,
            Self::Exponential { sigma, kappa } => sigma * (-kappa * (maturity - s)).exp(),
        }
    }

    /// `Σ(s, T) = ∫_s^T sigma(s, v) dv`.
    pub fn big_sigma(&self, s: f64, maturity: f64) -> f64 {
        if s >= maturity {
            return 0.0;
        }
        let d = maturity - s;
        match *self {
            Self::Zero => 0.0,
            Self::Constant { sigma } => sigma * d,
            Self::Exponential { sigma, kappa } if kappa == 0.0 => sigma * d,
            Self::Exponential { sigma, kappa } => -sigma * (-kappa * d).exp_m1() / kappa,
        }
    }
}

/// Initial forward curve `f(0, T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCurve {
    Flat { rate: f64 },
    /// Linear between nodes, flat outside.
    Tabulated { maturities: Vec<f64>, rates: Vec<f64> },
}

impl InitialCurve {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Flat { rate } if rate.is_finite() => Ok(()),
            Self::Flat { .. } => Err(Error::validation("market.curve.rate", "must be finite")),
            Self::Tabulated { maturities, rates } => {
                if maturities.is_empty() || maturities.len() != rates.len() {
                    return Err(Error::validation("market.curve", "need equally many maturities and rates"));
                }
                if maturities.windows(2).any(|w| w[1] <= w[0]) || maturities[0] < 0.0 {
                    return Err(Error::validation("market.curve.maturities", "must be nonnegative and increasing"));
                }
                if rates.iter().any(|r| !r.is_finite()) {
                    return Err(Error::validation("market.curve.rates", "must be finite"));
                }
                Ok(())
            }
        }
    }

    pub fn forward(&self, maturity: f64) -> f64 {
        match self {
            Self::Flat { rate } => *rate,
            Self::Tabulated { maturities, rates } => {
                let k = maturities.partition_point(|&m| m <= maturity);
                if k == 0 {
                    rates[0]
                } else if k == maturities.len() {
                    rates[k - 1]
                } else {
                    let w = (maturity - maturities[k - 1]) / (maturities[k] - maturities[k - 1]);
                    rates[k - 1] * (1.0 - w) + rates[k] * w
                }
            }
        }
    }

    /// `∫_0^T f(0, u) du`, exact for the piecewise-linear curve.
    pub fn integral(&self, maturity: f64) -> f64 {
        match self {
            Self::Flat { rate } => rate * maturity,
            Self::Tabulated { maturities, .. } => {
                let mut nodes = vec![0.0];
                nodes.extend(maturities.iter().copied().filter(|&m| m > 0.0 && m < maturity));
                nodes.push(maturity);
                nodes.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (self.forward(w[0]) + self.forward(w[1]))).sum()
            }
        }
    }
}

/// A martingale measure candidate: the driving triplet, the generating pair
/// and the volatility.
#[derive(Debug, Clone)]
pub struct MartingaleMeasureSpec {
    pub triplet: LevyTriplet,
    pub pair: GeneratingPair,
    pub vol: VolatilitySpec,
    quad: QuadConfig,
}

impl MartingaleMeasureSpec {
    /// The generating pair must be deterministic so that drifts can be
    /// tabulated once.
    pub fn new(triplet: LevyTriplet, pair: GeneratingPair, vol: VolatilitySpec) -> Result<Self> {
        if !pair.is_deterministic() {
            return Err(Error::Domain("market drift needs a deterministic generating pair".into()));
        }
        Ok(Self { triplet, pair, vol, quad: QuadConfig::default() })
    }

    fn phi(&self, s: f64) -> f64 {
        self.pair.phi().eval(s, &History::empty())
    }

    fn moment(e: Error) -> Error {
        match e {
            Error::Divergence(m) => Error::Moment(m),
            e => e,
        }
    }

    /// `κ(s, T) = ∫ (e^{-Σ y} - 1) e^psi nu(dy)` over the simulated measure.
    pub fn kappa(&self, s: f64, maturity: f64) -> Result<f64> {
        let sig = self.vol.big_sigma(s, maturity);
        if sig == 0.0 {
            return Ok(0.0);
        }
        let psi = self.pair.psi();
        let h = History::empty();
        self.triplet
            .nu()
            .integrate_simulated(|y| (-sig * y).exp_m1() * psi.eval(s, y, &h).exp(), &JumpSet::all(), psi.breaks(), &self.quad)
            .map_err(Self::moment)
    }

    /// `A(s, T)` from the drift condition.
    pub fn drift(&self, s: f64, maturity: f64) -> Result<f64> {
        let sig = self.vol.big_sigma(s, maturity);
        if sig == 0.0 {
            return Ok(0.0);
        }
        let (a, q) = (self.triplet.a(), self.triplet.q());
        Ok(-sig * a + 0.5 * q * sig * sig - q * self.phi(s) * sig
            + self.kappa(s, maturity)?
            + sig * self.triplet.small_jump_mean())
    }

    /// `alpha(s, T) = ∂_T A(s, T)`, differentiated analytically.
    pub fn alpha(&self, s: f64, maturity: f64) -> Result<f64> {
        let sigma = self.vol.sigma(s, maturity);
        if sigma == 0.0 {
            return Ok(0.0);
        }
        let sig = self.vol.big_sigma(s, maturity);
        let (a, q) = (self.triplet.a(), self.triplet.q());
        let psi = self.pair.psi();
        let h = History::empty();
        let tilted_mean = if self.triplet.nu().is_zero() {
            0.0
        } else {
            self.triplet
                .nu()
                .integrate_simulated(|y| -y * (psi.eval(s, y, &h) - sig * y).exp(), &JumpSet::all(), psi.breaks(), &self.quad)
                .map_err(Self::moment)?
        };
        Ok(sigma * (-a + q * sig - q * self.phi(s) + self.triplet.small_jump_mean() + tilted_mean))
    }
}

pub fn hjm_drift(spec: &MartingaleMeasureSpec, s: f64, maturity: f64) -> Result<f64> {
    spec.drift(s, maturity)
}

pub fn hjm_alpha(spec: &MartingaleMeasureSpec, s: f64, maturity: f64) -> Result<f64> {
    spec.alpha(s, maturity)
}

/// Forward-rate drift used to evolve the surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DriftMode {
    /// `alpha(s, T) = alpha` for `s < T`, so `A(s, T) = alpha (T - s)`.
    Explicit { alpha: f64 },
    /// Drift from the drift condition, with `alpha` shifted by `shift`
    /// (`A` shifted by `shift (T - s)`); `shift = 0` is the martingale drift.
    Hjm { shift: f64 },
}

/// Market on a fixed time grid and maturity set with tabulated drifts.
#[derive(Debug, Clone)]
pub struct MarketModel {
    spec: MartingaleMeasureSpec,
    curve: InitialCurve,
    maturities: Vec<f64>,
    maturity_index: Vec<usize>,
    grid: Arc<TimeGrid>,
    drift_mode: DriftMode,
    // [m][cell]: Gauss node values of the rates driving ∫_0^T f(t, u) du and f(t, T)
    big_rates: Vec<Vec<[f64; 2]>>,
    big_cum: Vec<Vec<f64>>,
    fwd_cum: Vec<Vec<f64>>,
    // [m][grid index]: κ(t_l, T_m)
    kappa_grid: OnceLock<Result<Vec<Vec<f64>>>>,
}

impl MarketModel {
    pub fn new(
        spec: MartingaleMeasureSpec,
        curve: InitialCurve,
        maturities: Vec<f64>,
        grid: Arc<TimeGrid>,
        drift_mode: DriftMode,
    ) -> Result<Self> {
        curve.validate()?;
        if maturities.is_empty() || maturities.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("market.maturities", "must be nonempty and strictly increasing"));
        }
        let times = grid.times();
        let mut maturity_index = Vec::with_capacity(maturities.len());
        for &m in &maturities {
            let i = times.partition_point(|&t| t < m);
            if i == times.len() || (times[i] - m).abs() > 1e-12 * m.abs().max(1.0) {
                return Err(Error::Maturity(format!("maturity {m} is not a grid time")));
            }
            maturity_index.push(i);
        }
        let shift_drift = spec.triplet.a() - spec.triplet.small_jump_mean();
        let mut big_rates = Vec::with_capacity(maturities.len());
        let mut fwd_rates = Vec::with_capacity(maturities.len());
        for &m in &maturities {
            let mut big = Vec::with_capacity(times.len() - 1);
            let mut fwd = Vec::with_capacity(times.len() - 1);
            for w in times.windows(2) {
                let h = w[1] - w[0];
                let mut b = [0.0; 2];
                let mut f = [0.0; 2];
                for (j, g) in GAUSS2.iter().enumerate() {
                    let s = w[0] + g * h;
                    if s >= m {
                        continue;
                    }
                    let (a_big, a_small) = match drift_mode {
                        DriftMode::Explicit { alpha } => (alpha * (m - s), alpha),
                        DriftMode::Hjm { shift } => {
                            (spec.drift(s, m)? + shift * (m - s), spec.alpha(s, m)? + shift)
                        }
                    };
                    b[j] = a_big + spec.vol.big_sigma(s, m) * shift_drift;
                    f[j] = a_small + spec.vol.sigma(s, m) * shift_drift;
                }
                big.push(b);
                fwd.push(f);
            }
            big_rates.push(big);
            fwd_rates.push(fwd);
        }
        let cum = |rates: &Vec<Vec<[f64; 2]>>| -> Vec<Vec<f64>> {
            rates
                .iter()
                .map(|r| {
                    let mut c = vec![0.0; times.len()];
                    for l in 1..times.len() {
                        c[l] = c[l - 1] + 0.5 * (times[l] - times[l - 1]) * (r[l - 1][0] + r[l - 1][1]);
                    }
                    c
                })
                .collect()
        };
        let big_cum = cum(&big_rates);
        let fwd_cum = cum(&fwd_rates);
        Ok(Self {
            spec,
            curve,
            maturities,
            maturity_index,
            grid,
            drift_mode,
            big_rates,
            big_cum,
            fwd_cum,
            kappa_grid: OnceLock::new(),
        })
    }

    pub fn spec(&self) -> &MartingaleMeasureSpec {
        &self.spec
    }

    pub fn curve(&self) -> &InitialCurve {
        &self.curve
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    /// Grid index of each maturity.
    pub fn maturity_index(&self) -> &[usize] {
        &self.maturity_index
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn drift_mode(&self) -> DriftMode {
        self.drift_mode
    }

    /// `A(s, T)` as used by the surface.
    pub fn big_drift(&self, s: f64, maturity: f64) -> Result<f64> {
        if s >= maturity {
            return Ok(0.0);
        }
        match self.drift_mode {
            DriftMode::Explicit { alpha } => Ok(alpha * (maturity - s)),
            DriftMode::Hjm { shift } => Ok(self.spec.drift(s, maturity)? + shift * (maturity - s)),
        }
    }

    /// `κ(s, T_m)`, linear between grid times.
    pub fn kappa_at(&self, m: usize, s: f64) -> Result<f64> {
        let times = self.grid.times();
        let table = self
            .kappa_grid
            .get_or_init(|| {
                self.maturities
                    .iter()
                    .map(|&mat| times.iter().map(|&t| self.spec.kappa(t, mat)).collect())
                    .collect()
            })
            .as_ref()
            .map_err(Clone::clone)?;
        let k = &table[m];
        let l = times.partition_point(|&t| t <= s).saturating_sub(1);
        if l + 1 >= times.len() || times[l] == s {
            return Ok(k[l]);
        }
        let w = (s - times[l]) / (times[l + 1] - times[l]);
        Ok(k[l] * (1.0 - w) + k[l + 1] * w)
    }

    /// `P^(0, T)`.
    pub fn initial_discounted(&self, m: usize) -> f64 {
        (-self.curve.integral(self.maturities[m])).exp()
    }

    /// Evolves the surface along one path.
    pub fn evolve(&self, path: &LevyPath) -> Result<ForwardSurface> {
        let times = self.grid.times();
        if path.grid().times() != times {
            return Err(Error::validation("path", "path grid differs from the market grid"));
        }
        let vol = &self.spec.vol;
        let w = path.brownian();
        let n_events = path.events().len();
        let mut forward = vec![vec![0.0; self.maturities.len()]; times.len()];
        let mut discounted = Vec::with_capacity(self.maturities.len());
        for (m, &mat) in self.maturities.iter().enumerate() {
            // left-point Brownian sums at grid times
            let mut big_bm = vec![0.0; times.len()];
            let mut fwd_bm = vec![0.0; times.len()];
            for l in 1..times.len() {
                let dw = w[l] - w[l - 1];
                big_bm[l] = big_bm[l - 1] + vol.big_sigma(times[l - 1], mat) * dw;
                fwd_bm[l] = fwd_bm[l - 1] + vol.sigma(times[l - 1], mat) * dw;
            }
            let f0 = self.curve.forward(mat);
            let big0 = self.curve.integral(mat);
            let mut big_jumps = 0.0;
            let mut fwd_jumps = 0.0;
            let mut left = Vec::with_capacity(n_events);
            let mut right = Vec::with_capacity(n_events);
            for e in path.events() {
                let l = times.partition_point(|&s| s <= e.time).saturating_sub(1);
                let (mut big_j, mut fwd_j) = (0.0, 0.0);
                if let EventKind::Jump(j) = e.kind {
                    let jump = path.jumps()[j];
                    big_j = vol.big_sigma(jump.time, mat) * jump.size;
                    fwd_j = vol.sigma(jump.time, mat) * jump.size;
                }
                big_jumps += big_j;
                fwd_jumps += fwd_j;
                let big_cont = if times[l] == e.time || l + 1 == times.len() {
                    self.big_cum[m][l] + big_bm[l]
                } else {
                    let h = times[l + 1] - times[l];
                    let u = (e.time - times[l]) / h;
                    self.big_cum[m][l]
                        + gauss_partial(h, u, self.big_rates[m][l])
                        + big_bm[l]
                        + vol.big_sigma(times[l], mat) * (path.brownian_at(e.time) - w[l])
                };
                let big = big0 + big_cont + big_jumps;
                right.push((-big).exp());
                left.push((-(big - big_j)).exp());
                if let EventKind::Grid(i) = e.kind {
                    forward[i][m] = f0 + self.fwd_cum[m][i] + fwd_bm[i] + fwd_jumps;
                }
            }
            discounted.push(CadlagPath {
                times: path.event_times(),
                left,
                right,
                grid_index: path.grid_events().to_vec(),
                log_linear: true,
            });
        }
        let surface = ForwardSurface {
            times: times.to_vec(),
            maturities: self.maturities.clone(),
            forward,
            discounted,
        };
        if surface.discounted.iter().any(|p| p.right.iter().any(|v| !(v.is_finite() && *v > 0.0))) {
            return Err(Error::Divergence("discounted bond price left (0, inf)".into()));
        }
        Ok(surface)
    }
}

/// `f(t, T_m)` on the grid and `P^(t, T_m)` on the event timeline of one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSurface {
    pub times: Vec<f64>,
    pub maturities: Vec<f64>,
    /// `[grid index][maturity index]`
    pub forward: Vec<Vec<f64>>,
    /// One path per maturity.
    pub discounted: Vec<CadlagPath>,
}

impl ForwardSurface {
    pub fn discounted_at_grid(&self, i: usize, m: usize) -> f64 {
        self.discounted[m].at_grid(i)
    }

    /// `f(t_i, u)`, linear in `u` between maturities and flat outside.
    pub fn forward_at(&self, i: usize, u: f64) -> f64 {
        let row = &self.forward[i];
        let k = self.maturities.partition_point(|&m| m <= u);
        if k == 0 {
            row[0]
        } else if k == self.maturities.len() {
            row[k - 1]
        } else {
            let w = (u - self.maturities[k - 1]) / (self.maturities[k] - self.maturities[k - 1]);
            row[k - 1] * (1.0 - w) + row[k] * w
        }
    }

    /// `r(t_i) = f(t_i, t_i)`.
    pub fn short_rate(&self, i: usize) -> f64 {
        self.forward_at(i, self.times[i])
    }

    /// `P(t_i, T_m) = exp(-∫_{t_i}^{T_m} f(t_i, u) du)`, trapezoid over the
    /// maturity grid with signed limits, so `P(T, T) = 1` exactly.
    pub fn bond_price(&self, i: usize, m: usize) -> f64 {
        let t = self.times[i];
        let target = self.maturities[m];
        if t == target {
            return 1.0;
        }
        let (lo, hi, sign) = if t < target { (t, target, 1.0) } else { (target, t, -1.0) };
        let mut nodes = vec![lo];
        nodes.extend(self.maturities.iter().copied().filter(|&u| u > lo && u < hi));
        nodes.push(hi);
        let integral: f64 =
            nodes.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (self.forward_at(i, w[0]) + self.forward_at(i, w[1]))).sum();
        (-sign * integral).exp()
    }
}

pub fn evolve_forward(model: &MarketModel, path: &LevyPath) -> Result<ForwardSurface> {
    model.evolve(path)
}

/// Integrates `dP^ = P^_- (-Σ dW~ + ∫(e^{-Σ y} - 1) d pi~_Q)` with Euler steps
/// between events and exact factors at jumps; returns the largest relative
/// gap to the surface's `P^` over grid times and maturities.
pub fn discounted_price_sde_check(surface: &ForwardSurface, model: &MarketModel, path: &LevyPath) -> Result<f64> {
    let spec = model.spec();
    let q = spec.triplet.q();
    let events = path.events();
    let mut worst: f64 = 0.0;
    for (m, &mat) in model.maturities().iter().enumerate() {
        let mut p = model.initial_discounted(m);
        for k in 0..events.len() {
            if k > 0 {
                let (s, t) = (events[k - 1].time, events[k].time);
                if t > s {
                    let sig = spec.vol.big_sigma(s, mat);
                    let dw_tilde = path.brownian_at(t) - path.brownian_at(s) - q * spec.phi(s) * (t - s);
                    p *= 1.0 - sig * dw_tilde - model.kappa_at(m, s)? * (t - s);
                }
            }
            if let EventKind::Jump(j) = events[k].kind {
                let jump = path.jumps()[j];
                p *= (-spec.vol.big_sigma(jump.time, mat) * jump.size).exp();
            }
            if matches!(events[k].kind, EventKind::Grid(_)) {
                let exact = surface.discounted[m].right[k];
                worst = worst.max(((p - exact) / exact).abs());
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// `∫_0^{T*} ∫_{|y|<=1} |e^psi - 1| nu(dy) ds`
    pub cond1: f64,
    /// `∫_0^{T*} ∫_{|y|>1} e^{-Σ(s,T) y} e^psi nu(dy) ds` per maturity.
    pub cond2: Vec<f64>,
    /// Largest `|A_model - A_hjm|` over the (grid time, maturity) lattice.
    pub drift_formula_residual: f64,
    pub moment_error: Option<String>,
}

impl ConditionReport {
    pub fn into_result(self) -> Result<Self> {
        match &self.moment_error {
            Some(m) => Err(Error::Moment(m.clone())),
            None => Ok(self),
        }
    }
}

/// Evaluates both integrability conditions and the drift-formula residual.
pub fn check_martingale_conditions(model: &MarketModel) -> Result<ConditionReport> {
    let spec = model.spec();
    let nu = spec.triplet.nu();
    let psi = spec.pair.psi();
    let horizon = model.grid().horizon();
    let cfg = QuadConfig::with_rel_tol(1e-8);
    let h = History::empty();
    let mut moment_error = None;
    let cond1 = quadrature::integrate_fallible(
        |s| nu.integrate_with_breaks(|y| psi.eval(s, y, &h).exp_m1().abs(), &JumpSet::abs_at_most(1.0), psi.breaks(), &cfg),
        0.0,
        horizon,
        &cfg,
    )
    .unwrap_or_else(|e| {
        moment_error.get_or_insert(format!("condition 1: {e}"));
        f64::INFINITY
    });
    let mut cond2 = Vec::new();
    for &mat in model.maturities() {
        let v = quadrature::integrate_fallible(
            |s| {
                let sig = spec.vol.big_sigma(s, mat);
                nu.integrate_with_breaks(
                    |y| (-sig * y + psi.eval(s, y, &h)).exp(),
                    &JumpSet::abs_greater(1.0),
                    psi.breaks(),
                    &cfg,
                )
            },
            0.0,
            horizon,
            &cfg,
        )
        .unwrap_or_else(|e| {
            moment_error.get_or_insert(format!("condition 2 at T = {mat}: {e}"));
            f64::INFINITY
        });
        cond2.push(v);
    }
    let mut residual: f64 = 0.0;
    if moment_error.is_none() {
        for &s in model.grid().times() {
            for &mat in model.maturities() {
                residual = residual.max((model.big_drift(s, mat)? - spec.drift(s, mat)?).abs());
            }
        }
    } else {
        residual = f64::NAN;
    }
    Ok(ConditionReport { cond1, cond2, drift_formula_residual: residual, moment_error })
}

/// `rho`-weighted means of `P^(t, T_m)` at every grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTest {
    pub times: Vec<f64>,
    pub maturities: Vec<f64>,
    pub initial: Vec<f64>,
    /// `[maturity][grid index]`
    pub mean: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub n_paths: usize,
    pub seed: u64,
}

impl MartingaleTest {
    /// `(mean - P^(0, T)) / se`, with `se` floored at rounding level so that
    /// deterministic checkpoints (t = 0, zero vol) do not blow up.
    pub fn z(&self, m: usize, i: usize) -> f64 {
        let se = self.se[m][i].max(1e-12 * self.initial[m]);
        Estimate { mean: self.mean[m][i], se, n: self.n_paths }.z_score(self.initial[m])
    }

    pub fn max_abs_z(&self) -> f64 {
        (0..self.maturities.len())
            .flat_map(|m| (0..self.times.len()).map(move |i| (m, i)))
            .map(|(m, i)| self.z(m, i).abs())
            .fold(0.0, f64::max)
    }

    /// True when every mean is within `k` standard errors of `P^(0, T)`.
    pub fn holds(&self, k: f64) -> bool {
        self.max_abs_z() <= k
    }

    /// A maturity whose mean moves away from `P^(0, T)` monotonically over
    /// the quarter-horizon checkpoints and ends more than `k` SE away.
    pub fn drift_detected(&self, k: f64) -> bool {
        let n = self.times.len() - 1;
        let checkpoints = [n / 4, n / 2, 3 * n / 4, n];
        (0..self.maturities.len()).any(|m| {
            let gaps: Vec<f64> = checkpoints.iter().map(|&i| self.mean[m][i] - self.initial[m]).collect();
            let increasing = gaps.windows(2).all(|w| w[1] > w[0]);
            let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
            (increasing || decreasing) && self.z(m, n).abs() > k
        })
    }
}

/// Monte Carlo test of the `Q`-martingale property of discounted bonds,
/// weighting `P`-paths by `rho_t`.
pub fn discounted_martingale_test(model: &MarketModel, mc: &McConfig) -> Result<MartingaleTest> {
    let spec = model.spec();
    let density = DensityEngine::new(&spec.pair, &spec.triplet)?;
    let (nt, nm) = (model.grid().len(), model.maturities().len());
    let moments = accumulate(mc.n_paths, nt * nm, |i| {
        let path = mc.path(&spec.triplet, i);
        let surface = model.evolve(&path)?;
        let rho = density.density(&path)?.rho;
        let mut out = Vec::with_capacity(nt * nm);
        for m in 0..nm {
            for g in 0..nt {
                out.push(rho.at_grid(g) * surface.discounted_at_grid(g, m));
            }
        }
        Ok::<_, Error>(out)
    })?;
    let mut mean = vec![vec![0.0; nt]; nm];
    let mut se = vec![vec![0.0; nt]; nm];
    for m in 0..nm {
        for g in 0..nt {
            let e = moments.estimate(m * nt + g);
            mean[m][g] = e.mean;
            se[m][g] = e.se;
        }
    }
    Ok(MartingaleTest {
        times: model.grid().times().to_vec(),
        maturities: model.maturities().to_vec(),
        initial: (0..nm).map(|m| model.initial_discounted(m)).collect(),
        mean,
        se,
        n_paths: mc.n_paths,
        seed: mc.seed,
    })
}
