use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, QuadConfig};
use crate::sets::{Interval, JumpSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub rate: f64,
}

/// Supported Lévy measure families. All of them have finite total mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureKind {
    Atomic { atoms: Vec<Atom> },
    /// `rate * [p * eta_plus * e^{-eta_plus y} 1{y>0} + (1-p) * eta_minus * e^{eta_minus y} 1{y<0}]`
    DoubleExponential { rate: f64, p: f64, eta_plus: f64, eta_minus: f64 },
    /// Uniform density on `[lower, upper] \ (-hole, hole)` with total mass `rate`.
    TruncatedUniform { lower: f64, upper: f64, hole: f64, rate: f64 },
}

/// A Lévy measure together with the simulation truncation level.
///
/// Jumps with `|y| < eps_trunc` are dropped by the sampler and every
/// compensator used against simulated paths is taken over the truncated
/// ("simulated") measure so that pathwise identities stay exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyMeasure {
    kind: MeasureKind,
    eps_trunc: f64,
}

// Density pieces: (lo, hi) with an analytic density on each.
#[derive(Debug, Clone, Copy)]
struct Piece {
    lo: f64,
    hi: f64,
}

impl LevyMeasure {
    pub fn new(kind: MeasureKind, eps_trunc: f64) -> Result<Self> {
        if !(eps_trunc >= 0.0 && eps_trunc.is_finite()) {
            return Err(Error::validation("eps_trunc", "must be finite and >= 0"));
        }
        match &kind {
            MeasureKind::Atomic { atoms } => {
                for (i, a) in atoms.iter().enumerate() {
                    if !a.location.is_finite() || a.location == 0.0 {
                        return Err(Error::validation(
                            format!("atoms[{i}].location"),
                            "atom locations must be finite and nonzero",
                        ));
                    }
                    if !(a.rate > 0.0 && a.rate.is_finite()) {
                        return Err(Error::validation(format!("atoms[{i}].rate"), "rate must be > 0"));
                    }
                    if atoms[..i].iter().any(|b| b.location == a.location) {
                        return Err(Error::validation(
                            format!("atoms[{i}].location"),
                            "atom locations must be distinct",
                        ));
                    }
                }
            }
            MeasureKind::DoubleExponential { rate, p, eta_plus, eta_minus } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return Err(Error::validation("rate", "must be > 0"));
                }
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::validation("p", "must lie in [0, 1]"));
                }
                if !(*eta_plus > 0.0 && eta_plus.is_finite()) {
                    return Err(Error::validation("eta_plus", "must be > 0"));
                }
                if !(*eta_minus > 0.0 && eta_minus.is_finite()) {
                    return Err(Error::validation("eta_minus", "must be > 0"));
                }
            }
            MeasureKind::TruncatedUniform { lower, upper, hole, rate } => {
                if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                    return Err(Error::validation("lower", "need finite lower < upper"));
                }
                if !(*hole >= 0.0 && hole.is_finite()) {
                    return Err(Error::validation("hole", "must be finite and >= 0"));
                }
                if !(*rate > 0.0 && rate.is_finite()) {
                    return Err(Error::validation("rate", "must be > 0"));
                }
            }
        }
        let nu = Self { kind, eps_trunc };
        if let MeasureKind::TruncatedUniform { .. } = nu.kind {
            if nu.support_length() <= 0.0 {
                return Err(Error::validation("hole", "support is empty"));
            }
        }
        if nu.simulated_rate() == 0.0 && !nu.is_zero() {
            return Err(Error::validation("eps_trunc", "truncation removes every jump"));
        }
        nu.levy_integral()?;
        Ok(nu)
    }

    pub fn zero() -> Self {
        Self { kind: MeasureKind::Atomic { atoms: Vec::new() }, eps_trunc: 0.0 }
    }

    pub fn atomic(atoms: &[(f64, f64)]) -> Result<Self> {
        let atoms = atoms.iter().map(|&(location, rate)| Atom { location, rate }).collect();
        Self::new(MeasureKind::Atomic { atoms }, 0.0)
    }

    pub fn double_exponential(rate: f64, p: f64, eta_plus: f64, eta_minus: f64) -> Result<Self> {
        Self::new(MeasureKind::DoubleExponential { rate, p, eta_plus, eta_minus }, 0.0)
    }

    pub fn truncated_uniform(lower: f64, upper: f64, hole: f64, rate: f64) -> Result<Self> {
        Self::new(MeasureKind::TruncatedUniform { lower, upper, hole, rate }, 0.0)
    }

    pub fn with_truncation(self, eps_trunc: f64) -> Result<Self> {
        Self::new(self.kind, eps_trunc)
    }

    pub fn kind(&self) -> &MeasureKind {
        &self.kind
    }

    pub fn eps_trunc(&self) -> f64 {
        self.eps_trunc
    }

    pub fn is_zero(&self) -> bool {
        matches!(&self.kind, MeasureKind::Atomic { atoms } if atoms.is_empty())
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self.kind, MeasureKind::Atomic { .. })
    }

    pub fn atoms(&self) -> &[Atom] {
        match &self.kind {
            MeasureKind::Atomic { atoms } => atoms,
            _ => &[],
        }
    }

    fn support_length(&self) -> f64 {
        match self.kind {
            MeasureKind::TruncatedUniform { lower, upper, hole, .. } => {
                let neg = (upper.min(-hole) - lower).max(0.0);
                let pos = (upper - lower.max(hole)).max(0.0);
                if hole == 0.0 {
                    upper - lower
                } else {
                    neg + pos
                }
            }
            _ => f64::NAN,
        }
    }

    /// Density with respect to Lebesgue measure (zero for atomic measures).
    pub fn density(&self, y: f64) -> f64 {
        match self.kind {
            MeasureKind::Atomic { .. } => 0.0,
            MeasureKind::DoubleExponential { rate, p, eta_plus, eta_minus } => {
                if y > 0.0 {
                    rate * p * eta_plus * (-eta_plus * y).exp()
                } else if y < 0.0 {
                    rate * (1.0 - p) * eta_minus * (eta_minus * y).exp()
                } else {
                    0.0
                }
            }
            MeasureKind::TruncatedUniform { lower, upper, hole, rate } => {
                if y >= lower && y <= upper && y.abs() >= hole {
                    rate / self.support_length()
                } else {
                    0.0
                }
            }
        }
    }

    fn pieces(&self) -> Vec<Piece> {
        match self.kind {
            MeasureKind::Atomic { .. } => Vec::new(),
            MeasureKind::DoubleExponential { p, .. } => {
                let mut v = Vec::new();
                if p < 1.0 {
                    v.push(Piece { lo: f64::NEG_INFINITY, hi: 0.0 });
                }
                if p > 0.0 {
                    v.push(Piece { lo: 0.0, hi: f64::INFINITY });
                }
                v
            }
            MeasureKind::TruncatedUniform { lower, upper, hole, .. } => {
                if hole == 0.0 {
                    return vec![Piece { lo: lower, hi: upper }];
                }
                let mut v = Vec::new();
                if lower < -hole {
                    v.push(Piece { lo: lower, hi: upper.min(-hole) });
                }
                if upper > hole {
                    v.push(Piece { lo: lower.max(hole), hi: upper });
                }
                v
            }
        }
    }

    fn restrict(&self, set: &JumpSet, simulated: bool) -> JumpSet {
        if simulated && self.eps_trunc > 0.0 {
            set.intersect(&JumpSet::abs_at_least(self.eps_trunc))
        } else {
            set.clone()
        }
    }

    // Closed-form mass of one interval under the density families.
    fn density_mass(&self, iv: &Interval) -> f64 {
        let mut total = 0.0;
        for piece in self.pieces() {
            let lo = iv.lo.max(piece.lo);
            let hi = iv.hi.min(piece.hi);
            if lo >= hi {
                continue;
            }
            total += match self.kind {
                MeasureKind::DoubleExponential { rate, p, eta_plus, eta_minus } => {
                    if piece.lo >= 0.0 {
                        rate * p * ((-eta_plus * lo).exp() - (-eta_plus * hi).exp())
                    } else {
                        rate * (1.0 - p) * ((eta_minus * hi).exp() - (eta_minus * lo).exp())
                    }
                }
                MeasureKind::TruncatedUniform { rate, .. } => rate * (hi - lo) / self.support_length(),
                MeasureKind::Atomic { .. } => 0.0,
            };
        }
        total
    }

    fn mass_of(&self, set: &JumpSet) -> f64 {
        match &self.kind {
            MeasureKind::Atomic { atoms } => atoms
                .iter()
                .filter(|a| set.contains(a.location))
                .map(|a| a.rate)
                .sum(),
            _ => set.intervals().iter().map(|iv| self.density_mass(iv)).sum(),
        }
    }

    /// `nu(A)` for a set separated from zero, by closed form.
    pub fn mass(&self, set: &JumpSet) -> Result<f64> {
        if !set.separated_from_zero() {
            return Err(Error::Domain("set must be separated from zero".into()));
        }
        if !set.is_internally_disjoint() {
            return Err(Error::Domain("set intervals must not overlap".into()));
        }
        Ok(self.mass_of(set))
    }

    /// Mass of `A` under the simulated (truncated) measure.
    pub fn simulated_mass(&self, set: &JumpSet) -> Result<f64> {
        self.mass(&self.restrict(set, true))
    }

    /// Total jump intensity of the simulated measure, `nu(|y| >= eps_trunc)`.
    pub fn simulated_rate(&self) -> f64 {
        self.mass_of(&self.restrict(&JumpSet::all(), true))
    }

    fn integrate_region<F: Fn(f64) -> f64>(
        &self,
        f: &F,
        set: &JumpSet,
        breaks: &[f64],
        cfg: &QuadConfig,
    ) -> Result<f64> {
        match &self.kind {
            MeasureKind::Atomic { atoms } => Ok(atoms
                .iter()
                .filter(|a| set.contains(a.location))
                .map(|a| f(a.location) * a.rate)
                .sum()),
            _ => {
                let mut total = 0.0;
                for iv in set.intervals() {
                    for piece in self.pieces() {
                        let lo = iv.lo.max(piece.lo);
                        let hi = iv.hi.min(piece.hi);
                        if lo >= hi {
                            continue;
                        }
                        let mut nodes = vec![lo];
                        for &b in [-1.0, 0.0, 1.0].iter().chain(breaks) {
                            if b > lo && b < hi {
                                nodes.push(b);
                            }
                        }
                        nodes.push(hi);
                        nodes.sort_by(f64::total_cmp);
                        nodes.dedup();
                        for w in nodes.windows(2) {
                            // a vanishing density wins over an overflowing integrand
                            let g = |y: f64| match self.density(y) {
                                0.0 => 0.0,
                                d => f(y) * d,
                            };
                            total += quadrature::integrate(g, w[0], w[1], cfg)?;
                        }
                    }
                }
                Ok(total)
            }
        }
    }

    /// `∫_A f dnu` over the declared measure. `A` may touch zero.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, set: &JumpSet, cfg: &QuadConfig) -> Result<f64> {
        self.integrate_region(&f, set, &[], cfg)
    }

    /// `∫_A f dnu` over the declared measure with extra quadrature breakpoints.
    pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
        &self,
        f: F,
        set: &JumpSet,
        breaks: &[f64],
        cfg: &QuadConfig,
    ) -> Result<f64> {
        self.integrate_region(&f, set, breaks, cfg)
    }

    /// `∫_A f dnu` over the simulated measure, with extra quadrature breakpoints
    /// (discontinuities of `f`).
    pub fn integrate_simulated<F: Fn(f64) -> f64>(
        &self,
        f: F,
        set: &JumpSet,
        breaks: &[f64],
        cfg: &QuadConfig,
    ) -> Result<f64> {
        self.integrate_region(&f, &self.restrict(set, true), breaks, cfg)
    }

    /// `∫ (|y|^2 ∧ 1) nu(dy)`; divergence is reported as an error.
    pub fn levy_integral(&self) -> Result<f64> {
        self.integrate(|y| (y * y).min(1.0), &JumpSet::all(), &QuadConfig::default())
    }

    /// `∫_{eps_trunc <= |y| <= 1} y nu(dy)`, the compensator of the small jumps
    /// that are actually simulated.
    pub fn small_jump_mean(&self) -> Result<f64> {
        self.integrate_simulated(|y| y, &JumpSet::abs_at_most(1.0), &[], &QuadConfig::default())
    }

    /// Samples a jump size from the normalized simulated measure.
    pub fn sample_size<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let eps = self.eps_trunc;
        match &self.kind {
            MeasureKind::Atomic { atoms } => {
                let total: f64 = atoms.iter().filter(|a| a.location.abs() >= eps).map(|a| a.rate).sum();
                let mut u = rng.random::<f64>() * total;
                let mut last = 0.0;
                for a in atoms.iter().filter(|a| a.location.abs() >= eps) {
                    last = a.location;
                    if u < a.rate {
                        return a.location;
                    }
                    u -= a.rate;
                }
                last
            }
            MeasureKind::DoubleExponential { rate, p, eta_plus, eta_minus } => {
                let up = rate * p * (-eta_plus * eps).exp();
                let down = rate * (1.0 - p) * (-eta_minus * eps).exp();
                loop {
                    let positive = rng.random::<f64>() * (up + down) < up;
                    let e: f64 = Exp1.sample(rng);
                    let y = if positive { eps + e / eta_plus } else { -(eps + e / eta_minus) };
                    if y != 0.0 {
                        return y;
                    }
                }
            }
            MeasureKind::TruncatedUniform { lower, upper, hole, .. } => {
                let h = hole.max(eps);
                let neg = (upper.min(-h) - lower).max(0.0);
                let pos = (upper - lower.max(h)).max(0.0);
                loop {
                    let u = rng.random::<f64>() * (neg + pos);
                    let y = if u < neg { lower + u } else { lower.max(h) + (u - neg) };
                    if y != 0.0 {
                        return y;
                    }
                }
            }
        }
    }
}
