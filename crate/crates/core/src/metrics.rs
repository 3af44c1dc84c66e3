//! Coverage and width metrics over an interval trace.
//!
//! Only resolved cells enter coverage statistics; the final `d1` issuances
//! of a run are partly unresolved and are skipped rather than imputed.
//! Width statistics use every issued cell.

use crate::calibrator::Trace;
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 100;

/// How local-coverage windows tile the resolved stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WindowMode {
    /// Consecutive non-overlapping blocks; a trailing partial block is dropped.
    #[default]
    Disjoint,
    /// Every window start position (stride 1).
    Sliding,
}

/// Hit/total counters per axis.
#[derive(Clone, Debug, Default)]
struct Counts {
    hits: u64,
    total: u64,
}

impl Counts {
    fn add(&mut self, covered: bool) {
        self.hits += u64::from(covered);
        self.total += 1;
    }

    fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }
}

fn tally(trace: &Trace) -> (Counts, Vec<Counts>, Vec<Counts>) {
    let mut all = Counts::default();
    let mut dims = vec![Counts::default(); trace.p];
    let mut horizons = vec![Counts::default(); trace.d1];
    for r in &trace.records {
        for i in 0..r.p {
            for j in 0..r.d1 {
                if let Some(c) = r.cell(i, j).covered {
                    all.add(c);
                    dims[i].add(c);
                    horizons[j].add(c);
                }
            }
        }
    }
    (all, dims, horizons)
}

fn no_resolved() -> Error {
    Error::InsufficientData("trace has no resolved cells".into())
}

/// Fraction of resolved cells whose realized value fell inside the interval.
pub fn global_coverage(trace: &Trace) -> Result<f64> {
    tally(trace).0.rate().ok_or_else(no_resolved)
}

/// Mean width over every issued cell; empty intervals count as zero.
pub fn mean_width(trace: &Trace) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in &trace.records {
        for c in &r.cells {
            sum += c.width();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData("trace has no issued cells".into()));
    }
    Ok(sum / n as f64)
}

/// Coverage of each variate, pooled over steps and horizons.
pub fn per_dim_coverage(trace: &Trace) -> Result<Vec<f64>> {
    tally(trace)
        .1
        .iter()
        .map(|c| c.rate().ok_or_else(no_resolved))
        .collect()
}

/// Coverage of each horizon, pooled over steps and variates.
pub fn per_horizon_coverage(trace: &Trace) -> Result<Vec<f64>> {
    tally(trace)
        .2
        .iter()
        .map(|c| c.rate().ok_or_else(no_resolved))
        .collect()
}

fn min_of(v: &[f64]) -> Result<f64> {
    v.iter().copied().reduce(f64::min).ok_or_else(no_resolved)
}

pub fn min_dim_coverage(trace: &Trace) -> Result<f64> {
    min_of(&per_dim_coverage(trace)?)
}

pub fn min_horizon_coverage(trace: &Trace) -> Result<f64> {
    min_of(&per_horizon_coverage(trace)?)
}

/// Per-cell coverage of consecutive resolved steps, one series per
/// `(i, j)` in row-major order.
pub fn local_coverage(trace: &Trace, window: usize, mode: WindowMode) -> Result<Vec<Vec<f64>>> {
    if window == 0 {
        return Err(Error::Parameter("window must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(trace.p * trace.d1);
    for i in 0..trace.p {
        for j in 0..trace.d1 {
            out.push(window_rates(&trace.resolved_series(i, j), window, mode));
        }
    }
    Ok(out)
}

fn window_rates(hits: &[bool], window: usize, mode: WindowMode) -> Vec<f64> {
    if hits.len() < window {
        return Vec::new();
    }
    let w = window as f64;
    match mode {
        WindowMode::Disjoint => hits
            .chunks_exact(window)
            .map(|b| b.iter().filter(|&&h| h).count() as f64 / w)
            .collect(),
        WindowMode::Sliding => {
            let mut count = hits[..window].iter().filter(|&&h| h).count();
            let mut out = Vec::with_capacity(hits.len() - window + 1);
            out.push(count as f64 / w);
            for k in window..hits.len() {
                count += usize::from(hits[k]);
                count -= usize::from(hits[k - window]);
                out.push(count as f64 / w);
            }
            out
        }
    }
}

/// Mean absolute deviation of window coverages from `1 - alpha`;
/// `None` for an empty series.
pub fn approx_mace(local: &[f64], alpha: f64) -> Option<f64> {
    if local.is_empty() {
        return None;
    }
    let target = 1.0 - alpha;
    Some(local.iter().map(|c| (c - target).abs()).sum::<f64>() / local.len() as f64)
}

/// Root-mean-square gap between oracle and predicted quantiles.
pub fn sigma_fit(qstar: &[f64], qhat: &[f64]) -> Result<f64> {
    if qstar.len() != qhat.len() {
        return Err(Error::dim(format!(
            "qstar has {} values, qhat {}",
            qstar.len(),
            qhat.len()
        )));
    }
    if qstar.is_empty() {
        return Err(Error::InsufficientData("empty quantile series".into()));
    }
    let ss: f64 = qstar.iter().zip(qhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / qstar.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub alpha: f64,
    pub window: usize,
    pub cov: f64,
    pub mean_width: f64,
    pub min_d: f64,
    pub min_t: f64,
    pub per_dim_cov: Vec<f64>,
    pub per_horizon_cov: Vec<f64>,
    /// Row-major over `(i, j)`.
    pub local_cov: Vec<Vec<f64>>,
    /// Per-cell approximate MACE; `None` where no full window resolved.
    pub cell_mace: Vec<Option<f64>>,
    /// Mean of the defined per-cell values; `None` if there are none.
    pub approx_mace: Option<f64>,
    pub resolved_count: u64,
}

impl MetricsReport {
    pub fn compute(trace: &Trace, alpha: f64, window: usize, mode: WindowMode) -> Result<Self> {
        let (all, dims, horizons) = tally(trace);
        let cov = all.rate().ok_or_else(no_resolved)?;
        let per_dim_cov: Vec<f64> = dims.iter().map(|c| c.rate().unwrap_or(f64::NAN)).collect();
        let per_horizon_cov: Vec<f64> = horizons
            .iter()
            .map(|c| c.rate().unwrap_or(f64::NAN))
            .collect();
        if per_dim_cov
            .iter()
            .chain(&per_horizon_cov)
            .any(|v| v.is_nan())
        {
            return Err(Error::InsufficientData(
                "some variate or horizon has no resolved cells".into(),
            ));
        }
        let local_cov = local_coverage(trace, window, mode)?;
        let cell_mace: Vec<Option<f64>> = local_cov.iter().map(|s| approx_mace(s, alpha)).collect();
        let defined: Vec<f64> = cell_mace.iter().flatten().copied().collect();
        let approx =
            (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        Ok(Self {
            alpha,
            window,
            cov,
            mean_width: mean_width(trace)?,
            min_d: min_of(&per_dim_cov)?,
            min_t: min_of(&per_horizon_cov)?,
            per_dim_cov,
            per_horizon_cov,
            local_cov,
            cell_mace,
            approx_mace: approx,
            resolved_count: all.total,
        })
    }

    /// Scalar metrics as `(name, value)` pairs in a fixed order.
    pub fn scalar_rows(&self) -> Vec<(String, f64)> {
        let mut rows = vec![
            ("cov".to_string(), self.cov),
            ("mean_width".to_string(), self.mean_width),
            ("min_d".to_string(), self.min_d),
            ("min_t".to_string(), self.min_t),
            (
                "approx_mace".to_string(),
                self.approx_mace.unwrap_or(f64::NAN),
            ),
            ("resolved_count".to_string(), self.resolved_count as f64),
        ];
        for (i, c) in self.per_dim_cov.iter().enumerate() {
            rows.push((format!("cov_dim_{i}"), *c));
        }
        for (j, c) in self.per_horizon_cov.iter().enumerate() {
            rows.push((format!("cov_horizon_{j}"), *c));
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrator::{build_interval, IntervalCell, IntervalRecord};

    fn trace_from(cov: &[Vec<Vec<Option<bool>>>], width: f64) -> Trace {
        let p = cov[0].len();
        let d1 = cov[0][0].len();
        let mut tr = Trace::new(p, d1);
        for (t, layer) in cov.iter().enumerate() {
            let mut cells = Vec::new();
            for row in layer {
                for &c in row {
                    let mut cell =
                        IntervalCell::new(0.0, build_interval(0.0, width / 2.0, 0.0), 0.0);
                    cell.covered = c;
                    cells.push(cell);
                }
            }
            tr.records.push(IntervalRecord { t, p, d1, cells });
        }
        tr
    }

    #[test]
    fn small_examples() {
        let tr = trace_from(
            &[
                vec![vec![Some(true), Some(true)]],
                vec![vec![Some(true), Some(false)]],
            ],
            2.0,
        );
        assert_eq!(global_coverage(&tr).unwrap(), 0.75);
        assert_eq!(mean_width(&tr).unwrap(), 2.0);
        assert_eq!(min_dim_coverage(&tr).unwrap(), 0.75);
        assert_eq!(min_horizon_coverage(&tr).unwrap(), 0.5);
    }

    #[test]
    fn unresolved_cells_are_excluded() {
        let tr = trace_from(
            &[vec![vec![Some(false), None]], vec![vec![None, None]]],
            1.0,
        );
        assert_eq!(global_coverage(&tr).unwrap(), 0.0);
        let tr = trace_from(&[vec![vec![None]]], 1.0);
        assert!(matches!(
            global_coverage(&tr),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn empty_intervals_have_zero_width() {
        let tr = trace_from(&[vec![vec![Some(false)]]], 0.0);
        assert!(tr.records[0].cells[0].empty);
        assert_eq!(mean_width(&tr).unwrap(), 0.0);
    }

    #[test]
    fn local_blocks() {
        let mut hits = vec![true; 100];
        hits.extend((0..100).map(|k| k % 2 == 0));
        hits.extend([true; 40]);
        assert_eq!(
            window_rates(&hits, 100, WindowMode::Disjoint),
            vec![1.0, 0.5]
        );
        assert!(window_rates(&hits, 1000, WindowMode::Disjoint).is_empty());
        let s = window_rates(&[true, false, true, true], 2, WindowMode::Sliding);
        assert_eq!(s, vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn mace_examples() {
        assert!((approx_mace(&[0.88, 0.92], 0.1).unwrap() - 0.02).abs() < 1e-12);
        assert_eq!(approx_mace(&[0.9, 0.9], 0.1), Some(0.0));
        assert_eq!(approx_mace(&[], 0.1), None);
    }

    #[test]
    fn sigma_fit_examples() {
        assert_eq!(sigma_fit(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(sigma_fit(&[3.0, 4.0, 5.0], &[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert!(sigma_fit(&[1.0], &[]).is_err());
    }

    #[test]
    fn zero_window_rejected() {
        let tr = trace_from(&[vec![vec![Some(true)]]], 1.0);
        assert!(local_coverage(&tr, 0, WindowMode::Disjoint).is_err());
    }
}
