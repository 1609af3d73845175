use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::measure::LevyMeasure;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sets::JumpSet;

/// Characteristic triplet `(a, q, nu)`; `q` is the variance rate of `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyTriplet {
    a: f64,
    q: f64,
    nu: LevyMeasure,
    small_jump_mean: f64,
}

impl LevyTriplet {
    pub fn new(a: f64, q: f64, nu: LevyMeasure) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::validation("a", "must be finite"));
        }
        if !(q >= 0.0 && q.is_finite()) {
            return Err(Error::validation("q", "Brownian variance must be finite and >= 0"));
        }
        let small_jump_mean = nu.small_jump_mean()?;
        Ok(Self { a, q, nu, small_jump_mean })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn nu(&self) -> &LevyMeasure {
        &self.nu
    }

    /// `∫_{eps_trunc <= |y| <= 1} y nu(dy)`.
    pub fn small_jump_mean(&self) -> f64 {
        self.small_jump_mean
    }

    /// Drift of the continuous part of the simulated `Z`: `a - ∫_{|y|<=1} y nu(dy)`.
    pub fn continuous_drift(&self) -> f64 {
        self.a - self.small_jump_mean
    }
}

/// Strictly increasing simulation times starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::validation("grid", "need at least two times starting at 0"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || !times.iter().all(|t| t.is_finite()) {
            return Err(Error::validation("grid", "times must be finite and strictly increasing"));
        }
        Ok(Self { times })
    }

    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) || steps == 0 {
            return Err(Error::validation("grid", "horizon must be > 0 and steps >= 1"));
        }
        let dt = horizon / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        times[steps] = horizon;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid is nonempty")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Keeps every `factor`-th point; the number of steps must be divisible.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let steps = self.times.len() - 1;
        if factor == 0 || steps % factor != 0 {
            return Err(Error::validation("grid", "coarsening factor must divide the step count"));
        }
        Self::new(self.times.iter().step_by(factor).copied().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Grid(usize),
    Jump(usize),
}

/// A point of the merged grid/jump timeline of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

/// One simulated trajectory of `Z` with its jump record.
#[derive(Debug, Clone)]
pub struct LevyPath {
    grid: Arc<TimeGrid>,
    brownian: Vec<f64>,
    jumps: Vec<Jump>,
    z_values: Vec<f64>,
    events: Vec<Event>,
    grid_events: Vec<usize>,
    a: f64,
    small_jump_mean: f64,
}

impl LevyPath {
    /// Builds a path from explicit Brownian grid values and jumps.
    pub fn from_parts(
        triplet: &LevyTriplet,
        grid: Arc<TimeGrid>,
        brownian: Vec<f64>,
        mut jumps: Vec<Jump>,
    ) -> Result<Self> {
        if brownian.len() != grid.len() {
            return Err(Error::validation("brownian", "one value per grid time"));
        }
        if brownian[0] != 0.0 {
            return Err(Error::validation("brownian", "W(0) must be 0"));
        }
        let horizon = grid.horizon();
        for j in &jumps {
            if !(j.time > 0.0 && j.time <= horizon) || j.size == 0.0 || !j.size.is_finite() {
                return Err(Error::validation("jumps", "jump times must lie in (0, T*] and sizes be nonzero"));
            }
        }
        jumps.sort_by(|x, y| x.time.total_cmp(&y.time));
        let mut path = Self {
            grid,
            brownian,
            jumps,
            z_values: Vec::new(),
            events: Vec::new(),
            grid_events: Vec::new(),
            a: triplet.a(),
            small_jump_mean: triplet.small_jump_mean(),
        };
        path.build_events();
        path.z_values = path
            .grid
            .times()
            .iter()
            .enumerate()
            .map(|(i, &t)| path.z_from_parts(t, path.brownian[i], true))
            .collect();
        Ok(path)
    }

    fn build_events(&mut self) {
        let mut events: Vec<Event> = self
            .grid
            .times()
            .iter()
            .enumerate()
            .map(|(i, &t)| Event { time: t, kind: EventKind::Grid(i) })
            .chain(
                self.jumps
                    .iter()
                    .enumerate()
                    .map(|(j, jump)| Event { time: jump.time, kind: EventKind::Jump(j) }),
            )
            .collect();
        // A jump sharing a grid time is processed first so grid values are càdlàg.
        events.sort_by(|x, y| {
            x.time.total_cmp(&y.time).then_with(|| {
                let rank = |k: &EventKind| match k {
                    EventKind::Jump(j) => (0, *j),
                    EventKind::Grid(i) => (1, *i),
                };
                rank(&x.kind).cmp(&rank(&y.kind))
            })
        });
        self.grid_events = events
            .iter()
            .enumerate()
            .filter_map(|(k, e)| matches!(e.kind, EventKind::Grid(_)).then_some(k))
            .collect();
        self.events = events;
    }

    // Discrete Lévy–Itô identity evaluated at time t.
    fn z_from_parts(&self, t: f64, w: f64, inclusive: bool) -> f64 {
        let jump_sum: f64 = self
            .jumps
            .iter()
            .filter(|j| if inclusive { j.time <= t } else { j.time < t })
            .map(|j| j.size)
            .sum();
        self.a * t + w - t * self.small_jump_mean + jump_sum
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn shared_grid(&self) -> Arc<TimeGrid> {
        Arc::clone(&self.grid)
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn brownian(&self) -> &[f64] {
        &self.brownian
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn z_values(&self) -> &[f64] {
        &self.z_values
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Event indices of the grid times, in grid order.
    pub fn grid_events(&self) -> &[usize] {
        &self.grid_events
    }

    pub fn event_times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.time).collect()
    }

    /// `W(t)`; between grid points the Brownian part is linearly interpolated.
    pub fn brownian_at(&self, t: f64) -> f64 {
        let times = self.grid.times();
        if t <= 0.0 {
            return 0.0;
        }
        if t >= self.horizon() {
            return *self.brownian.last().unwrap();
        }
        let i = times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (times[i], times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        self.brownian[i] * (1.0 - w) + self.brownian[i + 1] * w
    }

    /// `Z(t)` (right-continuous) at any time.
    pub fn z_at(&self, t: f64) -> f64 {
        self.z_from_parts(t, self.brownian_at(t), true)
    }

    /// `Z(t-)`.
    pub fn z_before(&self, t: f64) -> f64 {
        self.z_from_parts(t, self.brownian_at(t), false)
    }

    /// Same jumps and Brownian values on every `factor`-th grid point.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let grid = Arc::new(self.grid.coarsen(factor)?);
        let brownian = self.brownian.iter().step_by(factor).copied().collect();
        let mut path = Self {
            grid,
            brownian,
            jumps: self.jumps.clone(),
            z_values: Vec::new(),
            events: Vec::new(),
            grid_events: Vec::new(),
            a: self.a,
            small_jump_mean: self.small_jump_mean,
        };
        path.build_events();
        path.z_values = path
            .grid
            .times()
            .iter()
            .enumerate()
            .map(|(i, &t)| path.z_from_parts(t, path.brownian[i], true))
            .collect();
        Ok(path)
    }

    pub fn history_before(&self, cutoff: f64) -> History<'_> {
        History { path: Some(self), cutoff, inclusive: false }
    }

    pub fn history_through(&self, cutoff: f64) -> History<'_> {
        History { path: Some(self), cutoff, inclusive: true }
    }
}

/// Samples a path of `Z` on `grid`.
///
/// Jump times are exact (not snapped to the grid); the Brownian part is
/// sampled as independent Gaussian increments with variance `q dt`.
pub fn simulate_path(triplet: &LevyTriplet, grid: Arc<TimeGrid>, stream: RngStream) -> LevyPath {
    let horizon = grid.horizon();
    let nu = triplet.nu();
    let rate = nu.simulated_rate();
    let mut jumps = Vec::new();
    if rate > 0.0 {
        let mut rng = stream.jump_rng();
        let count = Poisson::new(rate * horizon)
            .expect("positive Poisson mean")
            .sample(&mut rng) as usize;
        jumps.reserve(count);
        for _ in 0..count {
            // uniform on (0, T*]
            let time = horizon * (1.0 - rng.random::<f64>());
            let size = nu.sample_size(&mut rng);
            jumps.push(Jump { time, size });
        }
    }
    let mut brownian = vec![0.0; grid.len()];
    if triplet.q() > 0.0 {
        let mut rng = stream.brownian_rng();
        let times = grid.times();
        for i in 1..times.len() {
            let z: f64 = StandardNormal.sample(&mut rng);
            brownian[i] = brownian[i - 1] + (triplet.q() * (times[i] - times[i - 1])).sqrt() * z;
        }
    }
    LevyPath::from_parts(triplet, grid, brownian, jumps).expect("simulated parts are valid")
}

/// `pi(t, A)`: number of jumps up to time `t` with size in `A`.
pub fn jump_counting(path: &LevyPath, t: f64, set: &JumpSet) -> Result<usize> {
    if !set.separated_from_zero() {
        return Err(Error::Domain("set must be separated from zero".into()));
    }
    if !(0.0..=path.horizon()).contains(&t) {
        return Err(Error::Domain(format!("time {t} outside [0, T*]")));
    }
    Ok(path
        .jumps()
        .iter()
        .filter(|j| j.time <= t && set.contains(j.size))
        .count())
}

/// Information available strictly before (or up to and including) a cutoff
/// time. Predictable integrands only ever see a `History`.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    path: Option<&'a LevyPath>,
    cutoff: f64,
    inclusive: bool,
}

impl<'a> History<'a> {
    /// No path information; for deterministic evaluations.
    pub fn empty() -> Self {
        History { path: None, cutoff: 0.0, inclusive: false }
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn is_inclusive(&self) -> bool {
        self.inclusive
    }

    pub fn path(&self) -> Option<&'a LevyPath> {
        self.path
    }

    fn visible(&self, t: f64) -> bool {
        if self.inclusive {
            t <= self.cutoff
        } else {
            t < self.cutoff
        }
    }

    pub fn jumps(&self) -> &'a [Jump] {
        match self.path {
            Some(p) => {
                let n = p.jumps().partition_point(|j| self.visible(j.time));
                &p.jumps()[..n]
            }
            None => &[],
        }
    }

    /// Brownian values at the grid times visible in this history.
    pub fn brownian(&self) -> &'a [f64] {
        match self.path {
            Some(p) => {
                let n = p.grid().times().partition_point(|&t| self.visible(t));
                &p.brownian()[..n]
            }
            None => &[],
        }
    }

    /// Index of the last path event visible in this history.
    pub fn last_event(&self) -> Option<usize> {
        let p = self.path?;
        let n = p.events().partition_point(|e| self.visible(e.time));
        n.checked_sub(1)
    }
}

/// Values of a càdlàg process on a path's event timeline: the left limit and
/// the value at each event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadlagPath {
    pub times: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub grid_index: Vec<usize>,
    /// Interpolate `ln X` instead of `X` between events; for positive
    /// processes whose continuous part is exponential.
    #[serde(default)]
    pub log_linear: bool,
}

impl CadlagPath {
    pub fn constant(path: &LevyPath, value: f64) -> Self {
        let n = path.events().len();
        Self {
            times: path.event_times(),
            left: vec![value; n],
            right: vec![value; n],
            grid_index: path.grid_events().to_vec(),
            log_linear: false,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn terminal(&self) -> f64 {
        *self.right.last().expect("nonempty path")
    }

    pub fn initial(&self) -> f64 {
        self.right[0]
    }

    pub fn at_grid(&self, i: usize) -> f64 {
        self.right[self.grid_index[i]]
    }

    pub fn grid_values(&self) -> Vec<f64> {
        self.grid_index.iter().map(|&k| self.right[k]).collect()
    }

    /// Value at time `t` (right-continuous), interpolating the continuous
    /// part linearly between events.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.left[0];
        }
        let k = k - 1;
        if self.times[k] == t || k + 1 == self.times.len() {
            return self.right[k];
        }
        self.interpolate(k, t)
    }

    fn interpolate(&self, k: usize, s: f64) -> f64 {
        if k + 1 >= self.times.len() {
            return self.right[k];
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        if s <= t0 {
            return self.right[k];
        }
        if s >= t1 {
            return self.left[k + 1];
        }
        let w = (s - t0) / (t1 - t0);
        if self.log_linear {
            return self.right[k] * (self.left[k + 1] / self.right[k]).powf(w);
        }
        self.right[k] * (1.0 - w) + self.left[k + 1] * w
    }

    /// `X_{s-}` as seen from `past`: the value after the last visible event,
    /// carried continuously up to `s`.
    pub fn before(&self, s: f64, past: &History) -> f64 {
        let visible = |t: f64| if past.is_inclusive() { t <= past.cutoff() } else { t < past.cutoff() };
        let n = self.times.partition_point(|&t| visible(t));
        if n == 0 {
            return self.left[0];
        }
        self.interpolate(n - 1, s)
    }

    pub fn max_abs_diff(&self, other: &CadlagPath) -> f64 {
        self.right
            .iter()
            .zip(&other.right)
            .chain(self.left.iter().zip(&other.left))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Arc<TimeGrid> {
        Arc::new(TimeGrid::uniform(1.0, 10).unwrap())
    }

    #[test]
    fn drift_only_path_is_deterministic() {
        let t = LevyTriplet::new(2.0, 0.0, LevyMeasure::zero()).unwrap();
        for i in 0..5 {
            let p = simulate_path(&t, grid(), RngStream::new(1, i));
            assert!(p.jumps().is_empty());
            assert_eq!(*p.z_values().last().unwrap(), 2.0);
        }
    }

    #[test]
    fn pure_brownian_has_no_jumps() {
        let t = LevyTriplet::new(0.0, 1.0, LevyMeasure::zero()).unwrap();
        let p = simulate_path(&t, grid(), RngStream::new(3, 0));
        assert!(p.jumps().is_empty());
        assert_eq!(p.z_values(), p.brownian());
    }

    #[test]
    fn counting_on_hand_built_path() {
        let t = LevyTriplet::new(0.0, 0.0, LevyMeasure::atomic(&[(1.0, 1.0), (-2.0, 1.0)]).unwrap()).unwrap();
        let jumps = vec![Jump { time: 0.7, size: -2.0 }, Jump { time: 0.3, size: 1.0 }];
        let p = LevyPath::from_parts(&t, grid(), vec![0.0; 11], jumps).unwrap();
        assert_eq!(jump_counting(&p, 0.5, &JumpSet::abs_at_least(0.5)).unwrap(), 1);
        assert_eq!(jump_counting(&p, 1.0, &JumpSet::abs_at_least(0.5)).unwrap(), 2);
        assert!(jump_counting(&p, 0.5, &JumpSet::closed(-1.0, 1.0)).is_err());
        let empty = LevyPath::from_parts(&t, grid(), vec![0.0; 11], vec![]).unwrap();
        assert_eq!(jump_counting(&empty, 1.0, &JumpSet::abs_at_least(0.1)).unwrap(), 0);
    }

    #[test]
    fn events_put_jumps_before_coinciding_grid_times() {
        let t = LevyTriplet::new(0.0, 0.0, LevyMeasure::atomic(&[(1.0, 1.0)]).unwrap()).unwrap();
        let g = Arc::new(TimeGrid::new(vec![0.0, 0.5, 1.0]).unwrap());
        let p = LevyPath::from_parts(&t, g, vec![0.0; 3], vec![Jump { time: 0.5, size: 1.0 }]).unwrap();
        let kinds: Vec<_> = p.events().iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::Grid(0), EventKind::Jump(0), EventKind::Grid(1), EventKind::Grid(2)]);
        // compensated value: t * (0 - 1) + jumps
        assert!((p.z_values()[1] - (1.0 - 0.5)).abs() < 1e-15);
        assert!((p.z_before(0.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn history_hides_the_present() {
        let t = LevyTriplet::new(0.0, 0.0, LevyMeasure::atomic(&[(1.0, 1.0)]).unwrap()).unwrap();
        let p = LevyPath::from_parts(&t, grid(), vec![0.0; 11], vec![Jump { time: 0.35, size: 1.0 }]).unwrap();
        assert!(p.history_before(0.35).jumps().is_empty());
        assert_eq!(p.history_through(0.35).jumps().len(), 1);
        assert_eq!(p.history_before(0.36).jumps().len(), 1);
    }
}
