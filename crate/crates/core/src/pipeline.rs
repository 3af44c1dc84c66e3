//! Glue between a panel, a fitted quantile model and a calibrator run.

use crate::calibrator::{CalibrationSet, Calibrator, CalibratorConfig, Observation, Trace};
use crate::error::{Error, Result};
use crate::panel::{compute_errors, PanelDataset};
use crate::quantile::QuantileNet;
use crate::tensor::Tensor;

/// Consecutive calibration and deployment segments of one panel.
#[derive(Clone, Debug)]
pub struct Split {
    pub calibration: PanelDataset,
    pub test: PanelDataset,
}

/// Splits at `round(steps * calibration_fraction)` issuance steps.
pub fn split(ds: &PanelDataset, calibration_fraction: f64) -> Result<Split> {
    if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "calibration fraction must lie in (0, 1), got {calibration_fraction}"
        )));
    }
    let steps = ds.dims().steps;
    let cut = (steps as f64 * calibration_fraction).round() as usize;
    split_at(ds, cut)
}

pub fn split_at(ds: &PanelDataset, cut: usize) -> Result<Split> {
    let steps = ds.dims().steps;
    if cut == 0 || cut >= steps {
        return Err(Error::InsufficientData(format!(
            "cannot split {steps} steps at {cut}"
        )));
    }
    Ok(Split {
        calibration: ds.slice_steps(0, cut)?,
        test: ds.slice_steps(cut, steps)?,
    })
}

/// Network quantile predictions for every `(t, i)` row, shape `[T][p][d1]`.
pub fn predict_quantiles(net: &QuantileNet, ds: &PanelDataset) -> Result<Tensor> {
    let d = ds.dims();
    let cfg = net.config();
    if cfg.input_dim != d.d2 || cfg.output_dim != d.d1 {
        return Err(Error::dim(format!(
            "net maps {} -> {}, panel has d2={} d1={}",
            cfg.input_dim, cfg.output_dim, d.d2, d.d1
        )));
    }
    let mut out = Vec::with_capacity(d.steps * d.p * d.d1);
    for t in 0..d.steps {
        for i in 0..d.p {
            out.extend(net.forward(ds.features().row3(t, i))?);
        }
    }
    Tensor::new(vec![d.steps, d.p, d.d1], out)
}

/// Streams `test` through a calibrator. Interval `(t, i, j)` is resolved at
/// step `t + j + 1` against `targets[t][i][j]`; the last `d1` issuances stay
/// partly unresolved.
pub fn deploy(
    test: &PanelDataset,
    qhat: Option<&Tensor>,
    config: CalibratorConfig,
    calibration: Option<CalibrationSet>,
) -> Result<Trace> {
    let d = test.dims();
    if config.dims.p != d.p || config.dims.d1 != d.d1 {
        return Err(Error::dim(format!(
            "calibrator is ({}, {}), panel is ({}, {})",
            config.dims.p, config.dims.d1, d.p, d.d1
        )));
    }
    if let Some(q) = qhat {
        if q.shape() != [d.steps, d.p, d.d1] {
            return Err(Error::dim(format!(
                "qhat shape {:?} does not match panel [{}, {}, {}]",
                q.shape(),
                d.steps,
                d.p,
                d.d1
            )));
        }
    }
    let (p, d1) = (d.p, d.d1);
    let mut cal = Calibrator::new(config, calibration)?;
    let mut trace = Trace::new(p, d1);
    trace.records.reserve(d.steps);
    let mut observed = vec![0.0; p * d1];
    let targets = test.targets();
    for t in 0..d.steps {
        let obs = if t > 0 {
            for h in 1..=d1.min(t) {
                for i in 0..p {
                    observed[i * d1 + h - 1] = targets.at3(t - h, i, h - 1);
                }
            }
            Some(Observation::Cells(&observed))
        } else {
            None
        };
        let yhat = &test.predictions().data()[t * p * d1..(t + 1) * p * d1];
        let q = qhat.map(|q| &q.data()[t * p * d1..(t + 1) * p * d1]);
        let out = cal.step(t, yhat, q, obs)?;
        if let Some(done) = out.completed {
            trace.records.push(done);
        }
    }
    trace.records.extend(cal.finish());
    Ok(trace)
}

/// Calibration-split errors per cell, for the methods that need them.
pub fn calibration_set(calibration: &PanelDataset) -> Result<CalibrationSet> {
    CalibrationSet::from_errors(&compute_errors(calibration)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrator::Method;

    fn panel(steps: usize) -> PanelDataset {
        let preds = Tensor::from_fn3([steps, 1, 2], |t, _, j| (t + j) as f64);
        let targets = Tensor::from_fn3([steps, 1, 2], |t, _, j| (t + j) as f64 + 0.5);
        let feats = Tensor::from_fn3([steps, 1, 1], |_, _, _| 0.0);
        PanelDataset::new(preds, targets, feats).unwrap()
    }

    #[test]
    fn trace_has_one_record_per_step_and_tail_unresolved() {
        let ds = panel(10);
        let cfg = CalibratorConfig::new(Method::FfdciNoUpdate, ds.dims());
        let q = Tensor::from_fn3([10, 1, 2], |_, _, _| 1.0);
        let tr = deploy(&ds, Some(&q), cfg, None).unwrap();
        assert_eq!(tr.steps(), 10);
        assert!(tr.records.iter().enumerate().all(|(t, r)| r.t == t));
        // Horizon j of step t resolves iff t + j + 1 < 10.
        for r in &tr.records {
            for j in 0..2 {
                assert_eq!(r.cell(0, j).covered.is_some(), r.t + j + 1 < 10);
                if let Some(c) = r.cell(0, j).covered {
                    assert!(c);
                }
            }
        }
    }

    #[test]
    fn split_bounds() {
        let ds = panel(10);
        let s = split(&ds, 0.5).unwrap();
        assert_eq!(s.calibration.dims().steps, 5);
        assert_eq!(s.test.dims().steps, 5);
        assert!(split(&ds, 1.0).is_err());
        assert!(split_at(&ds, 10).is_err());
    }
}
