//! Concave piecewise-linear under-estimator of the standard normal CDF on
//! `[0, ∞)`.
//!
//! The approximation is the pointwise minimum of `S` affine pieces
//! `a_s·x + b_s`. The first `S − 1` pieces are chords of Φ between
//! consecutive breakpoints `t_0 = 0 < t_1 < … < t_{S−1}`; the last piece is
//! the horizontal line `Φ(t_{S−1})`. Because Φ is concave on `[0, ∞)`, every
//! chord lies below Φ on its own interval and above the neighbouring chords
//! elsewhere, so the minimum reproduces the chord on each interval and never
//! exceeds Φ.
//!
//! Breakpoints are placed by a greedy forward sweep: starting from the
//! previous breakpoint, the next one is the furthest point whose chord stays
//! within `δ` of Φ. The sweep stops as soon as the remaining tail mass
//! `1 − Φ(t)` is at most `δ`, at which point the horizontal tail is within
//! tolerance as well.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Search horizon for breakpoints. Φ(10) rounds to 1 in double precision.
const T_HORIZON: f64 = 10.0;
const BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlCdf {
    pub delta: f64,
    /// Breakpoints `t_0 = 0 < … < t_{S−1}`.
    pub t: Vec<f64>,
    /// Slopes `a_1 … a_S`; `a_S = 0`.
    pub a: Vec<f64>,
    /// Intercepts `b_1 … b_S`; `b_S = Φ(t_{S−1})`.
    pub b: Vec<f64>,
}

/// Largest gap `Φ(x) − chord(x)` over `[lo, hi]` for the chord through
/// `(lo, Φ(lo))` and `(hi, Φ(hi))`.
///
/// The gap is concave on the interval, so its maximum sits where `φ(x)`
/// equals the chord slope, which has the closed form
/// `x = sqrt(−2 ln(slope·√(2π)))`.
fn chord_gap(lo: f64, hi: f64) -> f64 {
    let (flo, fhi) = (normal::cdf(lo), normal::cdf(hi));
    let slope = (fhi - flo) / (hi - lo);
    let arg = -2.0 * (slope * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let x = if arg > 0.0 {
        arg.sqrt().clamp(lo, hi)
    } else {
        lo
    };
    (normal::cdf(x) - (flo + slope * (x - lo))).max(0.0)
}

impl PwlCdf {
    /// Builds the under-estimator for tolerance `delta ∈ (0, 0.5)`.
    pub fn build(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "pwl tolerance must lie in (0, 0.5), got {delta}"
            )));
        }
        let mut t = vec![0.0];
        loop {
            let last = *t.last().expect("non-empty");
            if normal::sf(last) <= delta {
                break;
            }
            let next = if chord_gap(last, T_HORIZON) <= delta {
                T_HORIZON
            } else {
                // chord_gap(last, ·) is increasing, so bisect on the admissible
                // frontier.
                let (mut lo, mut hi) = (last, T_HORIZON);
                for _ in 0..BISECTION_STEPS {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if chord_gap(last, mid) <= delta {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            };
            if next <= last {
                return Err(Error::InvalidArgument(format!(
                    "pwl construction stalled at t = {last} for delta = {delta}"
                )));
            }
            t.push(next);
            if next >= T_HORIZON {
                break;
            }
        }
        Ok(Self::from_breakpoints(delta, t))
    }

    /// Chord slopes/intercepts through the given breakpoints plus the
    /// horizontal tail.
    pub fn from_breakpoints(delta: f64, t: Vec<f64>) -> Self {
        let mut a = Vec::with_capacity(t.len());
        let mut b = Vec::with_capacity(t.len());
        for w in t.windows(2) {
            let (f0, f1) = (normal::cdf(w[0]), normal::cdf(w[1]));
            let slope = (f1 - f0) / (w[1] - w[0]);
            a.push(slope);
            b.push(f1 - slope * w[1]);
        }
        a.push(0.0);
        b.push(normal::cdf(*t.last().expect("at least t_0")));
        PwlCdf { delta, t, a, b }
    }

    /// Number of affine pieces, including the horizontal tail.
    pub fn segments(&self) -> usize {
        self.a.len()
    }

    /// `min_s (a_s·x + b_s)`; defined for `x ≥ 0` only.
    pub fn eval(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0, "pwl CDF evaluated at negative argument {x}");
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| a * x + b)
            .fold(f64::INFINITY, f64::min)
    }

    /// Pieces as `(slope, intercept)` pairs.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.a.iter().copied().zip(self.b.iter().copied())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pwl serializes")
    }
}
