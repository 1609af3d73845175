//! Jump-size sets: finite unions of intervals and atoms on the real line.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_closed: lo.is_finite(), hi_closed: hi.is_finite() }
    }

    pub fn open(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_closed: false, hi_closed: false }
    }

    pub fn point(x: f64) -> Self {
        Self::closed(x, x)
    }

    pub fn contains(&self, y: f64) -> bool {
        let above = if self.lo_closed { y >= self.lo } else { y > self.lo };
        let below = if self.hi_closed { y <= self.hi } else { y < self.hi };
        above && below
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi && self.lo_closed && self.hi_closed
    }

    /// True when the closure of the interval does not contain zero.
    pub fn separated_from_zero(&self) -> bool {
        self.is_empty() || self.lo > 0.0 || self.hi < 0.0
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        let (lo, lo_closed) = if self.lo > other.lo {
            (self.lo, self.lo_closed)
        } else if other.lo > self.lo {
            (other.lo, other.lo_closed)
        } else {
            (self.lo, self.lo_closed && other.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < other.hi {
            (self.hi, self.hi_closed)
        } else if other.hi < self.hi {
            (other.hi, other.hi_closed)
        } else {
            (self.hi, self.hi_closed && other.hi_closed)
        };
        Interval { lo, hi, lo_closed, hi_closed }
    }
}

/// A finite union of intervals (points are degenerate closed intervals).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JumpSet {
    intervals: Vec<Interval>,
}

impl JumpSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self::from_intervals(vec![Interval::open(f64::NEG_INFINITY, f64::INFINITY)])
    }

    pub fn from_intervals(intervals: Vec<Interval>) -> Self {
        Self {
            intervals: intervals.into_iter().filter(|i| !i.is_empty()).collect(),
        }
    }

    pub fn point(x: f64) -> Self {
        Self::from_intervals(vec![Interval::point(x)])
    }

    pub fn points(xs: &[f64]) -> Self {
        Self::from_intervals(xs.iter().map(|&x| Interval::point(x)).collect())
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        Self::from_intervals(vec![Interval::closed(lo, hi)])
    }

    pub fn open(lo: f64, hi: f64) -> Self {
        Self::from_intervals(vec![Interval::open(lo, hi)])
    }

    /// `(r, inf)`
    pub fn above(r: f64) -> Self {
        Self::open(r, f64::INFINITY)
    }

    /// `{ |y| >= r }`
    pub fn abs_at_least(r: f64) -> Self {
        Self::from_intervals(vec![
            Interval { lo: f64::NEG_INFINITY, hi: -r, lo_closed: false, hi_closed: true },
            Interval { lo: r, hi: f64::INFINITY, lo_closed: true, hi_closed: false },
        ])
    }

    /// `{ |y| > r }`
    pub fn abs_greater(r: f64) -> Self {
        Self::from_intervals(vec![
            Interval::open(f64::NEG_INFINITY, -r),
            Interval::open(r, f64::INFINITY),
        ])
    }

    /// `{ |y| <= r }`
    pub fn abs_at_most(r: f64) -> Self {
        Self::closed(-r, r)
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn contains(&self, y: f64) -> bool {
        self.intervals.iter().any(|i| i.contains(y))
    }

    pub fn separated_from_zero(&self) -> bool {
        self.intervals.iter().all(Interval::separated_from_zero)
    }

    pub fn union(&self, other: &JumpSet) -> JumpSet {
        let mut intervals = self.intervals.clone();
        intervals.extend_from_slice(&other.intervals);
        JumpSet { intervals }
    }

    pub fn intersect(&self, other: &JumpSet) -> JumpSet {
        let mut out = Vec::new();
        for a in &self.intervals {
            for b in &other.intervals {
                let c = a.intersect(b);
                if !c.is_empty() {
                    out.push(c);
                }
            }
        }
        JumpSet { intervals: out }
    }

    pub fn is_disjoint(&self, other: &JumpSet) -> bool {
        self.intersect(other).intervals.is_empty()
    }

    /// True when the member intervals do not overlap, so that integrals over the
    /// union can be accumulated piece by piece.
    pub fn is_internally_disjoint(&self) -> bool {
        for (i, a) in self.intervals.iter().enumerate() {
            for b in &self.intervals[i + 1..] {
                if !a.intersect(b).is_empty() {
                    return false;
                }
            }
        }
        true
    }
}
