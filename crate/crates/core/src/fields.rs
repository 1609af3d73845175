//! Predictable evaluators: time processes `phi(s)` and jump fields `g(s, y)`.
//!
//! Both see the path only through a [`History`], so an evaluator cannot
//! depend on information at or after the evaluation time.

use std::fmt;
use std::sync::Arc;

use crate::levy::History;
use crate::sets::JumpSet;

type JumpFn = dyn Fn(f64, f64, &History) -> f64 + Send + Sync;
type TimeFn = dyn Fn(f64, &History) -> f64 + Send + Sync;

/// A field `g(s, y, past)` on `[0, T*] x R`.
#[derive(Clone)]
pub struct JumpField {
    f: Arc<JumpFn>,
    deterministic: bool,
    time_homogeneous: bool,
    breaks: Vec<f64>,
    label: String,
}

impl fmt::Debug for JumpField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpField")
            .field("label", &self.label)
            .field("deterministic", &self.deterministic)
            .field("time_homogeneous", &self.time_homogeneous)
            .finish()
    }
}

impl JumpField {
    /// Path-dependent field.
    pub fn adapted<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64, f64, &History) -> f64 + Send + Sync + 'static,
    {
        Self { f: Arc::new(f), deterministic: false, time_homogeneous: false, breaks: Vec::new(), label: label.into() }
    }

    pub fn deterministic<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(move |s, y, _: &History| f(s, y)),
            deterministic: true,
            time_homogeneous: false,
            breaks: Vec::new(),
            label: label.into(),
        }
    }

    /// Field depending on the jump size only.
    pub fn homogeneous<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(move |_, y, _: &History| f(y)),
            deterministic: true,
            time_homogeneous: true,
            breaks: Vec::new(),
            label: label.into(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::homogeneous(format!("constant({c})"), move |_| c)
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `c * 1_A(y)`.
    pub fn indicator(set: JumpSet, c: f64) -> Self {
        let breaks = set.intervals().iter().flat_map(|i| [i.lo, i.hi]).filter(|x| x.is_finite()).collect();
        Self::homogeneous(format!("indicator({c})"), move |y| if set.contains(y) { c } else { 0.0 })
            .with_breaks(breaks)
    }

    /// `c * y`.
    pub fn linear(c: f64) -> Self {
        Self::homogeneous(format!("linear({c})"), move |y| c * y)
    }

    /// Step function in `y`: `values[i]` on `[breaks[i], breaks[i + 1])`, zero
    /// outside. Callers check `breaks` is increasing and one longer than `values`.
    pub fn piecewise(breaks: Vec<f64>, values: Vec<f64>) -> Self {
        let b = breaks.clone();
        Self::homogeneous(format!("piecewise({} cells)", values.len()), move |y| {
            match b.partition_point(|&x| x <= y) {
                0 => 0.0,
                k if k == b.len() => 0.0,
                k => values[k - 1],
            }
        })
        .with_breaks(breaks)
    }

    /// Points where the field may be discontinuous in `y`; quadrature splits there.
    pub fn with_breaks(mut self, breaks: Vec<f64>) -> Self {
        self.breaks = breaks;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    pub fn is_time_homogeneous(&self) -> bool {
        self.time_homogeneous
    }

    #[inline]
    pub fn eval(&self, s: f64, y: f64, past: &History) -> f64 {
        (self.f)(s, y, past)
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &JumpField, beta: f64) -> JumpField {
        let (f, g) = (Arc::clone(&self.f), Arc::clone(&other.f));
        let mut breaks = self.breaks.clone();
        breaks.extend_from_slice(&other.breaks);
        JumpField {
            f: Arc::new(move |s, y, h: &History| alpha * f(s, y, h) + beta * g(s, y, h)),
            deterministic: self.deterministic && other.deterministic,
            time_homogeneous: self.time_homogeneous && other.time_homogeneous,
            breaks,
            label: format!("{alpha}*{} + {beta}*{}", self.label, other.label),
        }
    }

    /// Applies `h` pointwise to the field values.
    pub fn map<F>(&self, label: impl Into<String>, h: F) -> JumpField
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let f = Arc::clone(&self.f);
        JumpField {
            f: Arc::new(move |s, y, past: &History| h(f(s, y, past))),
            deterministic: self.deterministic,
            time_homogeneous: self.time_homogeneous,
            breaks: self.breaks.clone(),
            label: label.into(),
        }
    }
}

/// A process `phi(s, past)` on `[0, T*]`.
#[derive(Clone)]
pub struct TimeField {
    f: Arc<TimeFn>,
    deterministic: bool,
    zero: bool,
    label: String,
}

impl fmt::Debug for TimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeField").field("label", &self.label).field("deterministic", &self.deterministic).finish()
    }
}

impl TimeField {
    pub fn adapted<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64, &History) -> f64 + Send + Sync + 'static,
    {
        Self { f: Arc::new(f), deterministic: false, zero: false, label: label.into() }
    }

    pub fn deterministic<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self { f: Arc::new(move |s, _: &History| f(s)), deterministic: true, zero: false, label: label.into() }
    }

    pub fn constant(c: f64) -> Self {
        let mut t = Self::deterministic(format!("constant({c})"), move |_| c);
        t.zero = c == 0.0;
        t
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn eval(&self, s: f64, past: &History) -> f64 {
        (self.f)(s, past)
    }
}
