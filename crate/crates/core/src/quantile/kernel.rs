use crate::error::{Error, Result};
use crate::panel::ErrorTensor;
use crate::tensor::Tensor;

/// Empirical quantile using the "higher" order statistic: the value at
/// 1-based rank `ceil(level * n)`. Returns `None` for an empty input or a
/// level that selects no element (`level <= 0`).
pub fn higher_quantile(values: &[f64], level: f64) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    higher_quantile_sorted(&sorted, level)
}

/// As [`higher_quantile`] on an already ascending slice.
pub fn higher_quantile_sorted(sorted: &[f64], level: f64) -> Option<f64> {
    let n = sorted.len();
    if n == 0 || level <= 0.0 {
        return None;
    }
    // The small offset keeps products like 0.9 * 10 from rounding up a rank.
    let rank = ((level * n as f64) - 1e-9).ceil();
    let rank = (rank.max(1.0) as usize).min(n);
    Some(sorted[rank - 1])
}

/// Per-(variate, horizon) `(1 - alpha)` quantile of the errors over time,
/// shape `[p][d1]`.
pub fn constant_quantile_model(errors: &ErrorTensor, alpha: f64) -> Result<Tensor> {
    super::pinball::check_alpha(alpha)?;
    let shape = errors.tensor().shape();
    let (steps, p, d1) = (shape[0], shape[1], shape[2]);
    if steps == 0 {
        return Err(Error::InsufficientData("no error rows".into()));
    }
    let mut out = Vec::with_capacity(p * d1);
    let mut column = Vec::with_capacity(steps);
    for i in 0..p {
        for j in 0..d1 {
            column.clear();
            column.extend((0..steps).map(|t| errors.at(t, i, j)));
            column.sort_by(f64::total_cmp);
            out.push(higher_quantile_sorted(&column, 1.0 - alpha).expect("nonempty column"));
        }
    }
    Tensor::new(vec![p, d1], out)
}
