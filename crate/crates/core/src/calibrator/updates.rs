//! Scalar interval construction and the per-cell update rules.

use crate::error::{Error, Result};
use crate::quantile::higher_quantile_sorted;

/// A closed interval or the empty set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Interval {
    Empty,
    Closed { lo: f64, hi: f64 },
}

impl Interval {
    pub fn width(&self) -> f64 {
        match *self {
            Interval::Empty => 0.0,
            Interval::Closed { lo, hi } => hi - lo,
        }
    }

    /// Closed membership; the empty set covers nothing.
    pub fn contains(&self, y: f64) -> bool {
        match *self {
            Interval::Empty => false,
            Interval::Closed { lo, hi } => lo <= y && y <= hi,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Interval::Empty)
    }
}

/// `[yhat - qhat - a, yhat + qhat + a]`, or empty when `qhat + a <= 0`.
pub fn build_interval(yhat: f64, qhat: f64, a: f64) -> Interval {
    let half = qhat + a;
    if half <= 0.0 {
        Interval::Empty
    } else {
        Interval::Closed {
            lo: yhat - half,
            hi: yhat + half,
        }
    }
}

#[inline]
fn miss(covered: bool) -> f64 {
    if covered {
        0.0
    } else {
        1.0
    }
}

/// `a + gamma (1 - 1{covered} - alpha)`: a miss widens by `gamma (1 - alpha)`,
/// a cover narrows by `gamma alpha`.
pub fn ffdci_update(a: f64, covered: bool, gamma: f64, alpha: f64) -> f64 {
    a + gamma * (miss(covered) - alpha)
}

/// Adaptive-rate variant: the step is `gamma / sqrt(G)` where `G` accumulates
/// squared gradients `(1 - 1{covered} - alpha)^2`. Returns `(a', G')`.
pub fn sfogd_update(a: f64, covered: bool, gamma: f64, alpha: f64, g_sum: f64) -> (f64, f64) {
    let g = miss(covered) - alpha;
    let g_next = g_sum + g * g;
    (a + gamma / g_next.sqrt() * g, g_next)
}

/// Derivative of `f(x) = 1 / (1 + c e^{-x})`, evaluated as `f (1 - f)` to
/// stay finite for large `|x|`.
pub fn eci_sigmoid_derivative(x: f64, c: f64) -> f64 {
    let u = x - c.ln();
    let f = if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    };
    f * (1.0 - f)
}

/// Bracketed increment of the smoothed update, evaluated at the threshold
/// `q` the resolved interval was issued with.
pub fn eci_increment(q: f64, s: f64, alpha: f64, c: f64) -> f64 {
    let err = if s > q { 1.0 } else { 0.0 };
    let x = s - q;
    err - alpha - x * eci_sigmoid_derivative(x, c)
}

/// `q + gamma (err - alpha - (s - q) f'(s - q))` with `err = 1{s > q}`.
pub fn eci_update(q: f64, s: f64, gamma: f64, alpha: f64, c: f64) -> f64 {
    q + gamma * eci_increment(q, s, alpha, c)
}

/// Miscoverage-level recursion `level + gamma (alpha - 1{miss})`, clamped to
/// `[0, 1]`.
pub fn aci_update(level: f64, covered: bool, gamma: f64, alpha: f64) -> f64 {
    (level + gamma * (alpha - miss(covered))).clamp(0.0, 1.0)
}

/// Half-width for a miscoverage level over an ascending score history:
/// the `(1 - level)` higher quantile, zero (empty interval) when
/// `level >= 1`.
pub fn aci_halfwidth(sorted_history: &[f64], level: f64) -> Option<f64> {
    if sorted_history.is_empty() {
        return None;
    }
    Some(higher_quantile_sorted(sorted_history, 1.0 - level).unwrap_or(0.0))
}

/// Fixed split-conformal half-width: the `(1 - alpha)` higher quantile of
/// the calibration errors.
pub fn cp_halfwidth(calibration_errors: &[f64], alpha: f64) -> Result<f64> {
    let mut sorted = calibration_errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    higher_quantile_sorted(&sorted, 1.0 - alpha)
        .ok_or_else(|| Error::InsufficientData("no calibration errors".into()))
}
