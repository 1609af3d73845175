//! Adaptive Gauss–Kronrod (7/15) quadrature with a hard subdivision cap.
//!
//! Non-convergence within the cap is reported as [`Error::Divergence`], which is
//! how integrability checks detect divergent integrals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the odd Kronrod nodes (indices 1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl QuadConfig {
    pub const fn with_rel_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol: 1e-14,
            max_subdivisions: 4000,
        }
    }
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self::with_rel_tol(1e-10)
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<(f64, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        kron += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let value = kron * half;
    let error = ((kron - gauss) * half).abs();
    if !value.is_finite() || !error.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite integrand on [{a}, {b}]"
        )));
    }
    Ok((value, error))
}

/// Integrates `f` over the finite interval `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, cfg: &QuadConfig) -> Result<f64> {
    integrate_dyn(&f, a, b, cfg)
}

/// Like [`integrate`] for integrands that can fail; the first failure is
/// returned as is.
pub fn integrate_fallible<F: Fn(f64) -> Result<f64>>(f: F, a: f64, b: f64, cfg: &QuadConfig) -> Result<f64> {
    let failure = std::cell::RefCell::new(None);
    let wrapped = |x: f64| match f(x) {
        Ok(v) => v,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let out = integrate_dyn(&wrapped, a, b, cfg);
    match failure.into_inner() {
        Some(e) => Err(e),
        None => out,
    }
}

fn integrate_dyn(f: &dyn Fn(f64) -> f64, a: f64, b: f64, cfg: &QuadConfig) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return integrate_dyn(f, b, a, cfg).map(|v| -v);
    }
    if !a.is_finite() || !b.is_finite() {
        return integrate_infinite(f, a, b, cfg);
    }
    let (value, error) = kronrod(&f, a, b)?;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    let mut total = value;
    let mut total_err = error;
    let mut splits = 0;
    loop {
        if total_err <= cfg.abs_tol.max(cfg.rel_tol * total.abs()) {
            return Ok(total);
        }
        if splits >= cfg.max_subdivisions {
            return Err(Error::Divergence(format!(
                "no convergence on [{a}, {b}] after {splits} subdivisions (estimate {total:e}, error {total_err:e})"
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(Error::Divergence(format!(
                "interval [{}, {}] cannot be subdivided further",
                worst.a, worst.b
            )));
        }
        let (v1, e1) = kronrod(&f, worst.a, mid)?;
        let (v2, e2) = kronrod(&f, mid, worst.b)?;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
        splits += 1;
        // Refresh the running error to avoid drift from repeated subtraction.
        if splits % 64 == 0 {
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
}

// Maps (a, inf) onto (0, 1] via y = a + (1 - t) / t, and (-inf, b) likewise.
fn integrate_infinite(f: &dyn Fn(f64) -> f64, a: f64, b: f64, cfg: &QuadConfig) -> Result<f64> {
    match (a.is_finite(), b.is_finite()) {
        (true, false) => integrate_dyn(
            &|t: f64| {
                let y = a + (1.0 - t) / t;
                f(y) / (t * t)
            },
            0.0,
            1.0,
            cfg,
        ),
        (false, true) => integrate_dyn(
            &|t: f64| {
                let y = b - (1.0 - t) / t;
                f(y) / (t * t)
            },
            0.0,
            1.0,
            cfg,
        ),
        _ => {
            let left = integrate_infinite(f, f64::NEG_INFINITY, 0.0, cfg)?;
            let right = integrate_infinite(f, 0.0, f64::INFINITY, cfg)?;
            Ok(left + right)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, &QuadConfig::default()).unwrap();
        assert!((v - 0.0).abs() < 1e-13);
    }

    #[test]
    fn exponential_tail() {
        let v = integrate(|x: f64| (-x).exp(), 1.0, f64::INFINITY, &QuadConfig::default()).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn whole_line_gaussian() {
        let v = integrate(
            |x: f64| (-0.5 * x * x).exp(),
            f64::NEG_INFINITY,
            f64::INFINITY,
            &QuadConfig::default(),
        )
        .unwrap();
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn divergent_singularity_is_reported() {
        let r = integrate(|x: f64| 1.0 / (x * x), 0.0, 1.0, &QuadConfig::default());
        assert!(matches!(r, Err(Error::Divergence(_))));
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let cfg = QuadConfig::default();
        let a = integrate(f64::sin, 0.0, 1.0, &cfg).unwrap();
        let b = integrate(f64::sin, 1.0, 0.0, &cfg).unwrap();
        assert_eq!(a, -b);
    }
}
