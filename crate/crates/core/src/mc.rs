//! Monte Carlo helpers: order-preserving parallel maps and sample statistics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result as CrateResult;
use crate::levy::{simulate_path, LevyPath, LevyTriplet, TimeGrid};
use crate::rng::RngStream;

/// Path count, seed and grid of a Monte Carlo run. Path `i` uses stream `i`.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub grid: Arc<TimeGrid>,
}

impl McConfig {
    pub fn new(n_paths: usize, seed: u64, grid: Arc<TimeGrid>) -> Self {
        Self { n_paths, seed, grid }
    }

    pub fn path(&self, triplet: &LevyTriplet, i: usize) -> LevyPath {
        simulate_path(triplet, Arc::clone(&self.grid), RngStream::new(self.seed, i as u64))
    }

    /// Simulates every path and applies `f`, results in path order.
    pub fn run<T, F>(&self, triplet: &LevyTriplet, f: F) -> CrateResult<Vec<T>>
    where
        T: Send,
        F: Fn(&LevyPath) -> CrateResult<T> + Sync + Send,
    {
        try_map_indices(self.n_paths, |i| f(&self.path(triplet, i)))
    }
}

/// Maps `f` over `0..n`, returning results in index order regardless of how
/// work is scheduled.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Fallible variant of [`map_indices`]; the first error in index order wins.
pub fn try_map_indices<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indices(n, f).into_iter().collect()
}

/// Sums with a fixed pairwise tree so the result does not depend on threads.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Paths per reduction chunk. Fixed, so sums do not depend on thread count.
pub const CHUNK: usize = 256;

/// Per-coordinate sums of a vector-valued sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Self { n: 0, sum: vec![0.0; dim], sum_sq: vec![0.0; dim] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        for (j, v) in x.iter().enumerate() {
            self.sum[j] += v;
            self.sum_sq[j] += v * v;
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        for j in 0..self.sum.len() {
            self.sum[j] += other.sum[j];
            self.sum_sq[j] += other.sum_sq[j];
        }
    }

    pub fn estimate(&self, j: usize) -> Estimate {
        let n = self.n as f64;
        let mean = self.sum[j] / n;
        let var = if self.n > 1 { ((self.sum_sq[j] - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        Estimate { mean, se: (var / n).sqrt(), n: self.n }
    }
}

/// Streams `f(i)` for `i in 0..n` into per-coordinate moments without
/// storing samples. Chunks run in parallel and merge in chunk order.
pub fn accumulate<E, F>(n: usize, dim: usize, f: F) -> Result<Moments, E>
where
    E: Send,
    F: Fn(usize) -> Result<Vec<f64>, E> + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let parts = try_map_indices(chunks, |c| {
        let mut m = Moments::new(dim);
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            m.push(&f(i)?);
        }
        Ok(m)
    })?;
    let mut total = Moments::new(dim);
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = pairwise_sum(xs) / n as f64;
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if n > 1 { pairwise_sum(&dev) / (n - 1) as f64 } else { 0.0 };
        Self { mean, se: (var / n as f64).sqrt(), n }
    }

    /// Sample variance of the underlying draws.
    pub fn variance(&self) -> f64 {
        self.se * self.se * self.n as f64
    }

    /// `|mean - target| <= k * se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }

    pub fn z_score(&self, target: f64) -> f64 {
        if self.se == 0.0 {
            if self.mean == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - target) / self.se
        }
    }
}

/// Sample variance with its standard error, from fourth central moments.
pub fn variance_estimate(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let d2: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let m2 = pairwise_sum(&d2) / n;
    let d4: Vec<f64> = d2.iter().map(|d| d * d).collect();
    let m4 = pairwise_sum(&d4) / n;
    let var = m2 * n / (n - 1.0);
    Estimate { mean: var, se: ((m4 - m2 * m2) / n).max(0.0).sqrt(), n: xs.len() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_of_constant_has_zero_se() {
        let e = Estimate::from_samples(&[2.0; 10]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.se, 0.0);
        assert!(e.within(2.0, 4.0));
    }

    #[test]
    fn ordered_map() {
        let v = map_indices(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn pairwise_matches_naive_sum_on_integers() {
        let xs: Vec<f64> = (0..1001).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }
}
