//! Closed-form guarantees for the adjustment recursion.

/// Worst-case gap between empirical coverage of horizon `j` (1-based) over
/// `steps` deployment steps and `1 - alpha`, for errors and predicted
/// quantiles bounded by `m`: `2 ((m + gamma) / (steps gamma) + (j + 1) / steps)`.
pub fn coverage_gap_bound(m: f64, gamma: f64, steps: usize, j: usize) -> f64 {
    debug_assert!(m > 0.0 && gamma > 0.0 && steps > 0);
    let t = steps as f64;
    2.0 * ((m + gamma) / (t * gamma) + (j as f64 + 1.0) / t)
}

/// Right-hand side `c_scale * sqrt(sigma_fit + m (j + 1) / steps)` of the
/// mean-absolute-coverage-error bound. The constant is not identifiable, so
/// this is for ordering and monotonicity checks only.
pub fn mace_bound_rhs(sigma_fit: f64, m: f64, j: usize, steps: usize, c_scale: f64) -> f64 {
    debug_assert!(sigma_fit >= 0.0 && m >= 0.0 && steps > 0 && c_scale >= 0.0);
    c_scale * (sigma_fit + m * (j as f64 + 1.0) / steps as f64).sqrt()
}

/// Band `[-m - gamma, m + gamma]` that bounds the adjustment when errors and
/// predicted quantiles are bounded by `m` and feedback arrives one step late.
pub fn adjustment_band(m: f64, gamma: f64) -> (f64, f64) {
    (-m - gamma, m + gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_gap_reference_values() {
        assert!((coverage_gap_bound(10.0, 0.002, 10_000, 0) - 1.0004).abs() < 1e-12);
        assert!((coverage_gap_bound(10.0, 0.002, 1_000_000, 0) - 0.010004).abs() < 1e-12);
    }

    #[test]
    fn coverage_gap_decreasing_in_steps() {
        let mut prev = f64::INFINITY;
        for t in [10, 100, 1_000, 10_000, 100_000] {
            let b = coverage_gap_bound(10.0, 0.002, t, 3);
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn mace_rhs_limits_and_monotonicity() {
        assert!(mace_bound_rhs(0.0, 10.0, 0, usize::MAX, 1.0) < 1e-8);
        let mut prev = -1.0;
        for k in 0..20 {
            let b = mace_bound_rhs(k as f64 * 0.1, 10.0, 2, 5000, 1.5);
            assert!(b > prev);
            prev = b;
        }
    }
}
