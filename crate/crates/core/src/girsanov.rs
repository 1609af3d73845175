//! Equivalent measures generated by a pair `(phi, psi)`: the density process,
//! its reciprocal, the tilted compensator and the decomposition of `Z` under
//! the new measure.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{JumpField, TimeField};
use crate::jump_calculus::{
    class_check, cumulative_rate, Compensator, GeneralIntegrand, IntegrandClass, JumpIntegrator, RateKind,
};
use crate::levy::{CadlagPath, EventKind, History, LevyMeasure, LevyPath, LevyTriplet};
use crate::quadrature::QuadConfig;
use crate::sets::JumpSet;

/// Processes `(phi, psi)` defining `Q` through the density SDE
/// `d rho = rho_- [phi dW + ∫ (e^psi - 1) d pi~]`.
#[derive(Debug, Clone)]
pub struct GeneratingPair {
    phi: TimeField,
    psi: JumpField,
    psi_bound: f64,
}

impl GeneratingPair {
    /// `psi_bound` is a declared upper bound of `psi` on `{|y| <= 1}`.
    pub fn new(phi: TimeField, psi: JumpField, psi_bound: f64) -> Result<Self> {
        if !psi_bound.is_finite() {
            return Err(Error::validation("girsanov.psi_bound", "must be finite"));
        }
        let pair = Self { phi, psi, psi_bound };
        if pair.psi.is_deterministic() {
            pair.check_bound(1.0)?;
        }
        Ok(pair)
    }

    /// `Q = P`.
    pub fn identity() -> Self {
        Self { phi: TimeField::zero(), psi: JumpField::zero(), psi_bound: 0.0 }
    }

    /// Constant jump tilt `psi = theta`, no Brownian drift.
    pub fn tilt(theta: f64) -> Self {
        Self { phi: TimeField::zero(), psi: JumpField::constant(theta), psi_bound: theta }
    }

    pub fn with_phi(mut self, phi: TimeField) -> Self {
        self.phi = phi;
        self
    }

    pub fn phi(&self) -> &TimeField {
        &self.phi
    }

    pub fn psi(&self) -> &JumpField {
        &self.psi
    }

    pub fn psi_bound(&self) -> f64 {
        self.psi_bound
    }

    pub fn is_deterministic(&self) -> bool {
        self.phi.is_deterministic() && self.psi.is_deterministic()
    }

    pub fn is_time_homogeneous(&self) -> bool {
        self.phi.is_deterministic() && self.psi.is_time_homogeneous()
    }

    /// Probes `psi <= psi_bound` on a lattice of `[0, horizon] × [-1, 1]`.
    pub fn check_bound(&self, horizon: f64) -> Result<()> {
        let h = History::empty();
        for i in 0..=16 {
            let s = horizon * i as f64 / 16.0;
            for j in 0..=200 {
                let y = -1.0 + j as f64 / 100.0;
                let v = self.psi.eval(s, y, &h);
                if v > self.psi_bound + 1e-12 * self.psi_bound.abs().max(1.0) {
                    return Err(Error::validation(
                        "girsanov.psi",
                        format!("psi({s}, {y}) = {v} exceeds the declared bound {}", self.psi_bound),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `e^psi - 1`.
    pub fn tilt_field(&self) -> JumpField {
        self.psi.map("e^psi - 1", f64::exp_m1)
    }
}

/// `Y` and `rho = e^Y` on the event timeline of one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPath {
    pub y: CadlagPath,
    pub rho: CadlagPath,
}

/// Density computations for one generating pair and triplet, with the
/// compensator of `e^psi - 1` prepared once.
#[derive(Debug)]
pub struct DensityEngine {
    pair: GeneratingPair,
    q: f64,
    tilt: JumpIntegrator,
}

impl DensityEngine {
    pub fn new(pair: &GeneratingPair, triplet: &LevyTriplet) -> Result<Self> {
        let tilt_field = pair.tilt_field();
        if tilt_field.is_deterministic() {
            let report = class_check(&tilt_field, triplet.nu(), None, IntegrandClass::Psi12, 1.0, None)?;
            if !report.ok {
                return Err(Error::Class(format!("e^psi - 1 is not in the hybrid class: {:?}", report.detail)));
            }
        }
        let tilt = JumpIntegrator::new(
            &GeneralIntegrand::new(tilt_field, IntegrandClass::Psi12),
            triplet.nu(),
            Compensator::Physical,
        )?;
        Ok(Self { pair: pair.clone(), q: triplet.q(), tilt })
    }

    pub fn pair(&self) -> &GeneratingPair {
        &self.pair
    }

    fn has_brownian_part(&self) -> bool {
        self.q > 0.0 && !self.pair.phi.is_zero()
    }

    /// `∫ phi dW` (left-point sums on the grid) and `∫ phi^2 ds` at every
    /// event, linear in time between grid points.
    fn brownian_terms(&self, path: &LevyPath) -> (Vec<f64>, Vec<f64>) {
        let n = path.events().len();
        if !self.has_brownian_part() {
            return (vec![0.0; n], vec![0.0; n]);
        }
        let times = path.grid().times();
        let w = path.brownian();
        let mut ito = vec![0.0; times.len()];
        let mut energy = vec![0.0; times.len()];
        for i in 1..times.len() {
            let phi = self.pair.phi.eval(times[i - 1], &path.history_through(times[i - 1]));
            ito[i] = ito[i - 1] + phi * (w[i] - w[i - 1]);
            energy[i] = energy[i - 1] + phi * phi * (times[i] - times[i - 1]);
        }
        let interp = |v: &[f64], t: f64| {
            let i = times.partition_point(|&s| s <= t).saturating_sub(1);
            if i + 1 >= times.len() || times[i] == t {
                return v[i];
            }
            let u = (t - times[i]) / (times[i + 1] - times[i]);
            v[i] * (1.0 - u) + v[i + 1] * u
        };
        path.events().iter().map(|e| (interp(&ito, e.time), interp(&energy, e.time))).unzip()
    }

    fn psi_at_jumps(&self, path: &LevyPath) -> Vec<f64> {
        path.events()
            .iter()
            .map(|e| match e.kind {
                EventKind::Jump(j) => {
                    let jump = path.jumps()[j];
                    self.pair.psi.eval(jump.time, jump.size, &path.history_before(jump.time))
                }
                EventKind::Grid(_) => 0.0,
            })
            .collect()
    }

    /// `Y = ∫phi dW - q/2 ∫phi^2 ds + ∫∫(e^psi - 1) d pi~ - ∫∫(e^psi - 1 - psi) d pi`.
    pub fn density(&self, path: &LevyPath) -> Result<DensityPath> {
        let (ito, energy) = self.brownian_terms(path);
        let comp = self.tilt.compensator(path)?;
        let psi = self.psi_at_jumps(path);
        let n = comp.len();
        let (mut left, mut right) = (Vec::with_capacity(n), Vec::with_capacity(n));
        // The two jump sums combine to Σ psi over the jumps.
        let mut jumps = 0.0;
        for k in 0..n {
            let cont = ito[k] - 0.5 * self.q * energy[k] - comp[k];
            jumps += psi[k];
            right.push(cont + jumps);
            left.push(cont + jumps - psi[k]);
        }
        let y = CadlagPath { times: path.event_times(), left, right, grid_index: path.grid_events().to_vec(), log_linear: false };
        let rho = CadlagPath {
            times: y.times.clone(),
            left: y.left.iter().map(|v| v.exp()).collect(),
            right: y.right.iter().map(|v| v.exp()).collect(),
            grid_index: y.grid_index.clone(),
            log_linear: true,
        };
        if rho.right.iter().chain(&rho.left).any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Divergence("density left (0, inf)".into()));
        }
        Ok(DensityPath { y, rho })
    }

    /// Forward recursion of the density SDE: between events the continuous
    /// part is stepped by its exact exponential, at a jump `rho` is
    /// multiplied by `1 + (e^psi - 1)`.
    pub fn density_sde(&self, path: &LevyPath) -> Result<CadlagPath> {
        let (ito, energy) = self.brownian_terms(path);
        let comp = self.tilt.compensator(path)?;
        let psi = self.psi_at_jumps(path);
        let mut left = Vec::with_capacity(comp.len());
        let mut right = Vec::with_capacity(comp.len());
        let mut rho = 1.0;
        for k in 0..comp.len() {
            if k > 0 {
                let d = (ito[k] - ito[k - 1]) - 0.5 * self.q * (energy[k] - energy[k - 1]) - (comp[k] - comp[k - 1]);
                rho *= d.exp();
            }
            left.push(rho);
            rho *= 1.0 + psi[k].exp_m1();
            right.push(rho);
        }
        Ok(CadlagPath { times: path.event_times(), left, right, grid_index: path.grid_events().to_vec(), log_linear: true })
    }

    /// `1/rho = 1 - ∫∫ rho_-^{-1}(e^psi - 1) d pi~ + ∫∫ rho_-^{-1}(e^{-psi} + e^psi - 2) d pi`
    /// by forward recursion; requires a model without Brownian tilt.
    pub fn reciprocal(&self, path: &LevyPath, rho: &DensityPath) -> Result<CadlagPath> {
        if self.has_brownian_part() {
            return Err(Error::Domain("reciprocal density is implemented for phi = 0 or q = 0".into()));
        }
        if rho.rho.len() != path.events().len() {
            return Err(Error::validation("rho", "density path belongs to a different path"));
        }
        let comp = self.tilt.compensator(path)?;
        let psi = self.psi_at_jumps(path);
        let mut left = Vec::with_capacity(comp.len());
        let mut right = Vec::with_capacity(comp.len());
        let mut r = 1.0;
        for k in 0..comp.len() {
            if k > 0 {
                // d(1/rho) = (1/rho_-) (∫ (e^psi - 1) nu) ds between jumps
                r *= (comp[k] - comp[k - 1]).exp();
            }
            left.push(r);
            let (e, inv) = (psi[k].exp(), (-psi[k]).exp());
            r = r - r * (e - 1.0) + r * (inv + e - 2.0);
            right.push(r);
        }
        Ok(CadlagPath { times: path.event_times(), left, right, grid_index: path.grid_events().to_vec(), log_linear: true })
    }
}

pub fn density_path(pair: &GeneratingPair, triplet: &LevyTriplet, path: &LevyPath) -> Result<DensityPath> {
    DensityEngine::new(pair, triplet)?.density(path)
}

pub fn reciprocal_density(
    pair: &GeneratingPair,
    triplet: &LevyTriplet,
    path: &LevyPath,
    rho: &DensityPath,
) -> Result<CadlagPath> {
    DensityEngine::new(pair, triplet)?.reciprocal(path, rho)
}

/// `∫_A e^{psi(s, y)} nu(dy)`.
pub fn q_compensator(pair: &GeneratingPair, nu: &LevyMeasure, s: f64, set: &JumpSet, past: &History) -> Result<f64> {
    if !set.separated_from_zero() {
        return Err(Error::Domain("set must be separated from zero".into()));
    }
    nu.integrate_with_breaks(|y| pair.psi.eval(s, y, past).exp(), set, pair.psi.breaks(), &QuadConfig::default())
}

/// Components of `Z` under `Q` at the grid times; they sum to `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZqDecomposition {
    pub times: Vec<f64>,
    /// `a t + q ∫phi ds + ∫∫_{|y|<=1} y (e^psi - 1) ds nu(dy)`
    pub a_tilde: Vec<f64>,
    /// `W - q ∫phi ds`
    pub w_tilde: Vec<f64>,
    /// `∫∫_{|y|<=1} y d pi~_Q`
    pub small_jumps: Vec<f64>,
    /// `∫∫_{|y|>1} y d pi`
    pub big_jumps: Vec<f64>,
}

impl ZqDecomposition {
    pub fn sum(&self) -> Vec<f64> {
        (0..self.times.len())
            .map(|i| self.a_tilde[i] + self.w_tilde[i] + self.small_jumps[i] + self.big_jumps[i])
            .collect()
    }
}

/// `∫_0^t phi ds` at every event.
pub(crate) fn phi_integral(phi: &TimeField, path: &LevyPath) -> Result<Vec<f64>> {
    if phi.is_zero() {
        return Ok(vec![0.0; path.events().len()]);
    }
    let kind = if phi.is_deterministic() { RateKind::Deterministic } else { RateKind::Adapted };
    cumulative_rate(path, kind, None, &|s, past| Ok(phi.eval(s, past)))
}

pub fn z_under_q_decomposition(pair: &GeneratingPair, triplet: &LevyTriplet, path: &LevyPath) -> Result<ZqDecomposition> {
    let small = JumpField::homogeneous("y 1{|y|<=1}", |y| if y.abs() <= 1.0 { y } else { 0.0 })
        .with_breaks(vec![-1.0, 1.0]);
    let psi = pair.psi.clone();
    let shift_field = {
        let psi = psi.clone();
        let f = move |s: f64, y: f64, past: &History| if y.abs() <= 1.0 { y * psi.eval(s, y, past).exp_m1() } else { 0.0 };
        let field = if pair.psi.is_time_homogeneous() {
            let h = History::empty();
            let psi = pair.psi.clone();
            JumpField::homogeneous("y (e^psi - 1) 1{|y|<=1}", move |y| {
                if y.abs() <= 1.0 { y * psi.eval(0.0, y, &h).exp_m1() } else { 0.0 }
            })
        } else if pair.psi.is_deterministic() {
            JumpField::deterministic("y (e^psi - 1) 1{|y|<=1}", move |s, y| f(s, y, &History::empty()))
        } else {
            JumpField::adapted("y (e^psi - 1) 1{|y|<=1}", f)
        };
        let mut breaks = vec![-1.0, 1.0];
        breaks.extend_from_slice(pair.psi.breaks());
        field.with_breaks(breaks)
    };
    let shift = JumpIntegrator::new(&GeneralIntegrand::new(shift_field, IntegrandClass::Psi1), triplet.nu(), Compensator::Physical)?
        .compensator(path)?;
    let small_q = JumpIntegrator::new(&GeneralIntegrand::new(small, IntegrandClass::Psi2Q), triplet.nu(), Compensator::Tilted(psi))?
        .integrate(path)?;
    let phi_int = phi_integral(&pair.phi, path)?;
    let q = triplet.q();
    let mut out = ZqDecomposition {
        times: Vec::new(),
        a_tilde: Vec::new(),
        w_tilde: Vec::new(),
        small_jumps: Vec::new(),
        big_jumps: Vec::new(),
    };
    for (i, &k) in path.grid_events().iter().enumerate() {
        let t = path.grid().times()[i];
        let big: f64 = path.jumps().iter().filter(|j| j.time <= t && j.size.abs() > 1.0).map(|j| j.size).sum();
        out.times.push(t);
        out.a_tilde.push(triplet.a() * t + q * phi_int[k] + shift[k]);
        out.w_tilde.push(path.brownian()[i] - q * phi_int[k]);
        out.small_jumps.push(small_q.right[k]);
        out.big_jumps.push(big);
    }
    Ok(out)
}

/// Integrand of a `Q`-martingale with respect to `pi~_Q`, together with the
/// worst pathwise mismatch of its reconstruction.
#[derive(Debug, Clone)]
pub struct QRepresentation {
    pub field: JumpField,
    pub reconstruction_error: f64,
}

/// Tolerance on the pathwise reconstruction of `M`.
pub const RECONSTRUCTION_TOL: f64 = 1e-8;

/// Turns the `P`-representation `psi_m` of `rho M` into the `Q`-representation
/// `M_- e^{-psi}(1 - e^psi) + rho_-^{-1} e^{-psi} psi_m` of `M`, then checks
/// that `M_0 + ∫∫ (result) d pi~_Q` reproduces `M` along the path.
pub fn transform_representation(
    pair: &GeneratingPair,
    triplet: &LevyTriplet,
    path: &LevyPath,
    rho: &DensityPath,
    m: &CadlagPath,
    psi_m: &JumpField,
) -> Result<QRepresentation> {
    if triplet.q() > 0.0 && !pair.phi.is_zero() {
        return Err(Error::Domain("representation transform needs a model without Brownian tilt".into()));
    }
    let n = path.events().len();
    if m.len() != n || rho.rho.len() != n {
        return Err(Error::validation("m", "martingale and density must live on the path's event timeline"));
    }
    let (m_path, rho_path) = (Arc::new(m.clone()), Arc::new(rho.rho.clone()));
    let (psi, psi_m_field) = (pair.psi.clone(), psi_m.clone());
    let field = JumpField::adapted("transformed representation", move |s, y, past| {
        let p = psi.eval(s, y, past);
        let m_before = m_path.before(s, past);
        let rho_before = rho_path.before(s, past);
        m_before * (-p).exp() * (-p.exp_m1()) + (-p).exp() * psi_m_field.eval(s, y, past) / rho_before
    })
    .with_breaks(pair.psi.breaks().iter().chain(psi_m.breaks()).copied().collect());

    let report = class_check(&field, triplet.nu(), Some(&pair.psi), IntegrandClass::Psi12Q, path.horizon(), Some(path))?;
    if !report.ok {
        return Err(Error::Class(format!("transformed integrand: {:?}", report.detail)));
    }
    let g = GeneralIntegrand::new(field.clone(), IntegrandClass::Psi12Q);
    let rebuilt = JumpIntegrator::new(&g, triplet.nu(), Compensator::Tilted(pair.psi.clone()))?.integrate(path)?;
    let m0 = m.left[0];
    let err = (0..n)
        .map(|k| (m0 + rebuilt.right[k] - m.right[k]).abs().max((m0 + rebuilt.left[k] - m.left[k]).abs()))
        .fold(0.0, f64::max);
    if !(err <= RECONSTRUCTION_TOL) {
        return Err(Error::Reconstruction(format!("pathwise mismatch {err:e}")));
    }
    Ok(QRepresentation { field, reconstruction_error: err })
}
