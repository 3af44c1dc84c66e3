use crate::error::{Error, Result};

/// Pinball loss `max((1 - alpha)(s - q), alpha (q - s))`. Its population
/// minimizer over `q` is the `(1 - alpha)` quantile of `s`.
pub fn pinball_loss(s: f64, qhat: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(pinball_unchecked(s, qhat, alpha))
}

#[inline]
pub(crate) fn pinball_unchecked(s: f64, qhat: f64, alpha: f64) -> f64 {
    ((1.0 - alpha) * (s - qhat)).max(alpha * (qhat - s))
}

/// Derivative of the pinball loss with respect to `qhat`. At the kink
/// `s == qhat` the over-prediction branch (`+alpha`) is taken.
#[inline]
pub fn pinball_grad(s: f64, qhat: f64, alpha: f64) -> f64 {
    if s > qhat {
        -(1.0 - alpha)
    } else {
        alpha
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}
