//! Online interval calibration with lagged feedback.
//!
//! Every `(variate, horizon)` cell runs an independent state machine. At
//! step `t` the calibrator first resolves, for each horizon `j` (1-based),
//! the interval issued at `t - j` against the value realized now and
//! updates that cell's state; it then issues the intervals for step `t`.

mod bounds;
mod trace;
mod updates;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

pub use bounds::{adjustment_band, coverage_gap_bound, mace_bound_rhs};
pub use trace::{IntervalCell, IntervalRecord, Trace, TRACE_HEADER};
pub use updates::{
    aci_halfwidth, aci_update, build_interval, cp_halfwidth, eci_increment, eci_sigmoid_derivative,
    eci_update, ffdci_update, sfogd_update, Interval,
};

use crate::error::{Error, Result};
use crate::panel::{ErrorTensor, PanelDims};
use crate::quantile::higher_quantile_sorted;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ffdci,
    FfdciSfogd,
    Aci,
    Eci,
    Cp,
    FfdciNoUpdate,
    FfdciNoFeature,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ffdci,
        Method::FfdciSfogd,
        Method::Aci,
        Method::Eci,
        Method::Cp,
        Method::FfdciNoUpdate,
        Method::FfdciNoFeature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ffdci => "FFDCI",
            Method::FfdciSfogd => "FFDCI_SFOGD",
            Method::Aci => "ACI",
            Method::Eci => "ECI",
            Method::Cp => "CP",
            Method::FfdciNoUpdate => "FFDCI_NO_UPDATE",
            Method::FfdciNoFeature => "FFDCI_NO_FEATURE",
        }
    }

    /// Whether issuance needs per-step predicted quantiles from the network.
    pub fn uses_quantile_net(self) -> bool {
        matches!(
            self,
            Method::Ffdci | Method::FfdciSfogd | Method::FfdciNoUpdate
        )
    }

    /// Whether the method needs calibration-split errors.
    pub fn uses_calibration_errors(self) -> bool {
        matches!(
            self,
            Method::Aci | Method::Eci | Method::Cp | Method::FfdciNoFeature
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Which scores ACI takes its quantile over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AciHistory {
    /// The calibration-split errors only.
    Calibration,
    /// Calibration errors followed by every resolved deployment error,
    /// keeping at most `window` of the most recent when set.
    Rolling { window: Option<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibratorConfig {
    pub method: Method,
    pub alpha: f64,
    pub gamma: f64,
    pub eci_c: f64,
    pub dims: PanelDims,
    /// Clamp for predicted quantiles (bounded-input runs); off when `None`.
    pub qhat_cap: Option<f64>,
    pub aci_history: AciHistory,
}

impl CalibratorConfig {
    pub fn new(method: Method, dims: PanelDims) -> Self {
        Self {
            method,
            alpha: 0.1,
            gamma: 0.002,
            eci_c: 0.2,
            dims,
            qhat_cap: None,
            aci_history: AciHistory::Calibration,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Parameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        // ACI with gamma = 0 is allowed: it degenerates to CP.
        let gamma_ok = if self.method == Method::Aci {
            self.gamma >= 0.0
        } else {
            self.gamma > 0.0
        };
        if !gamma_ok || !self.gamma.is_finite() {
            return Err(Error::Parameter(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.eci_c > 0.0) {
            return Err(Error::Parameter(format!(
                "eci_c must be positive, got {}",
                self.eci_c
            )));
        }
        if let Some(cap) = self.qhat_cap {
            if !(cap > 0.0) {
                return Err(Error::Parameter(format!(
                    "qhat_cap must be positive, got {cap}"
                )));
            }
        }
        if let AciHistory::Rolling { window: Some(0) } = self.aci_history {
            return Err(Error::Parameter("aci window must be positive".into()));
        }
        Ok(())
    }
}

/// Calibration-split errors per cell, each sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSet {
    p: usize,
    d1: usize,
    sorted: Vec<Vec<f64>>,
}

impl CalibrationSet {
    pub fn from_errors(errors: &ErrorTensor) -> Result<Self> {
        let shape = errors.tensor().shape();
        let (steps, p, d1) = (shape[0], shape[1], shape[2]);
        if steps == 0 {
            return Err(Error::InsufficientData("empty calibration split".into()));
        }
        let mut sorted = Vec::with_capacity(p * d1);
        for i in 0..p {
            for j in 0..d1 {
                let mut col: Vec<f64> = (0..steps).map(|t| errors.at(t, i, j)).collect();
                col.sort_by(f64::total_cmp);
                sorted.push(col);
            }
        }
        Ok(Self { p, d1, sorted })
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        &self.sorted[i * self.d1 + j]
    }

    /// Higher-convention quantile of cell `(i, j)` at `level`.
    pub fn quantile(&self, i: usize, j: usize, level: f64) -> Option<f64> {
        higher_quantile_sorted(self.cell(i, j), level)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.p, self.d1)
    }
}

/// Realized values delivered at a step.
#[derive(Clone, Copy, Debug)]
pub enum Observation<'a> {
    /// The wall-clock value of each variate, shared by every horizon
    /// resolving at this step. Length `p`.
    Series(&'a [f64]),
    /// Per-cell realized targets, row-major `[i][j]`: entry `(i, j)` is the
    /// target of the interval issued `j + 1` steps ago. Length `p * d1`.
    Cells(&'a [f64]),
}

#[derive(Clone, Debug)]
enum CellState {
    Adjust {
        a: f64,
    },
    Sfogd {
        a: f64,
        g_sum: f64,
    },
    Aci {
        level: f64,
        history: Vec<f64>,
        arrivals: VecDeque<f64>,
    },
    Eci {
        q: f64,
    },
    Fixed {
        halfwidth: f64,
    },
}

/// Output of one [`Calibrator::step`].
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// Intervals issued at this step (coverage unresolved).
    pub issued: IntervalRecord,
    /// The record issued `d1` steps ago, now resolved for every horizon.
    pub completed: Option<IntervalRecord>,
}

pub struct Calibrator {
    config: CalibratorConfig,
    step: usize,
    cells: Vec<CellState>,
    /// Constant per-cell quantile for the no-feature ablation.
    constant_qhat: Option<Vec<f64>>,
    calibration: Option<CalibrationSet>,
    pending: VecDeque<IntervalRecord>,
}

impl Calibrator {
    pub fn new(config: CalibratorConfig, calibration: Option<CalibrationSet>) -> Result<Self> {
        config.validate()?;
        let PanelDims { p, d1, .. } = config.dims;
        let method = config.method;
        if method.uses_calibration_errors() {
            match &calibration {
                None => {
                    return Err(Error::Config(format!(
                        "{method} needs calibration-split errors"
                    )))
                }
                Some(c) if c.shape() != (p, d1) => {
                    return Err(Error::dim(format!(
                        "calibration set is {:?}, calibrator is ({p}, {d1})",
                        c.shape()
                    )))
                }
                _ => {}
            }
        }
        let alpha = config.alpha;
        let mut cells = Vec::with_capacity(p * d1);
        let mut constant = Vec::new();
        for i in 0..p {
            for j in 0..d1 {
                let calib_q = calibration
                    .as_ref()
                    .map(|c| c.quantile(i, j, 1.0 - alpha).expect("nonempty calibration"));
                let state = match method {
                    Method::Ffdci | Method::FfdciNoUpdate => CellState::Adjust { a: 0.0 },
                    Method::FfdciNoFeature => {
                        constant.push(calib_q.expect("checked above"));
                        CellState::Adjust { a: 0.0 }
                    }
                    Method::FfdciSfogd => CellState::Sfogd { a: 0.0, g_sum: 0.0 },
                    Method::Aci => {
                        let history = calibration.as_ref().expect("checked").cell(i, j).to_vec();
                        CellState::Aci {
                            level: alpha,
                            arrivals: history.iter().copied().collect(),
                            history,
                        }
                    }
                    Method::Eci => CellState::Eci {
                        q: calib_q.expect("checked above"),
                    },
                    Method::Cp => CellState::Fixed {
                        halfwidth: calib_q.expect("checked above"),
                    },
                };
                cells.push(state);
            }
        }
        if let (Method::Aci, AciHistory::Calibration) = (method, config.aci_history) {
            // Arrival order is only needed for windowed rolling histories.
            for c in &mut cells {
                if let CellState::Aci { arrivals, .. } = c {
                    arrivals.clear();
                }
            }
        }
        Ok(Self {
            constant_qhat: (method == Method::FfdciNoFeature).then_some(constant),
            calibration,
            pending: VecDeque::with_capacity(d1 + 1),
            cells,
            step: 0,
            config,
        })
    }

    pub fn config(&self) -> &CalibratorConfig {
        &self.config
    }

    /// Index of the next step to be issued.
    pub fn next_step(&self) -> usize {
        self.step
    }

    /// Current scalar state of cell `(i, j)`; see [`IntervalCell::state`].
    pub fn state(&self, i: usize, j: usize) -> f64 {
        Self::state_value(&self.cells[i * self.config.dims.d1 + j])
    }

    fn state_value(c: &CellState) -> f64 {
        match c {
            CellState::Adjust { a } | CellState::Sfogd { a, .. } => *a,
            CellState::Aci { level, .. } => *level,
            CellState::Eci { q } => *q,
            CellState::Fixed { .. } => 0.0,
        }
    }

    /// Advances one step. `yhat` and `qhat` are row-major `[i][j]` of length
    /// `p * d1`; `qhat` is required for methods that use the quantile
    /// network and ignored otherwise. `observed` may be `None` only at
    /// step 0, when nothing is due for resolution.
    pub fn step(
        &mut self,
        t: usize,
        yhat: &[f64],
        qhat: Option<&[f64]>,
        observed: Option<Observation<'_>>,
    ) -> Result<StepOutput> {
        let PanelDims { p, d1, .. } = self.config.dims;
        if t != self.step {
            return Err(Error::Protocol(format!(
                "step {t} called but calibrator expects step {}",
                self.step
            )));
        }
        if yhat.len() != p * d1 {
            return Err(Error::dim(format!(
                "yhat has {} entries, expected {}",
                yhat.len(),
                p * d1
            )));
        }
        let qhat = if self.config.method.uses_quantile_net() {
            let q = qhat.ok_or_else(|| {
                Error::Protocol(format!("{} needs predicted quantiles", self.config.method))
            })?;
            if q.len() != p * d1 {
                return Err(Error::dim(format!(
                    "qhat has {} entries, expected {}",
                    q.len(),
                    p * d1
                )));
            }
            if q.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Validation(
                    "qhat must be finite and nonnegative".into(),
                ));
            }
            Some(q)
        } else {
            None
        };

        if t > 0 {
            let obs = observed.ok_or_else(|| {
                Error::Protocol(format!("step {t} has intervals due but no observation"))
            })?;
            self.resolve(t, obs)?;
        }

        let completed = if t >= d1 {
            let front = self.pending.pop_front().expect("d1 records pending");
            debug_assert_eq!(front.t, t - d1);
            Some(front)
        } else {
            None
        };

        let issued = self.issue(t, yhat, qhat);
        self.pending.push_back(issued.clone());
        self.step += 1;
        Ok(StepOutput { issued, completed })
    }

    /// Records still awaiting at least one resolution, in issuance order.
    pub fn finish(self) -> Vec<IntervalRecord> {
        self.pending.into_iter().collect()
    }

    fn resolve(&mut self, t: usize, obs: Observation<'_>) -> Result<()> {
        let PanelDims { p, d1, .. } = self.config.dims;
        match obs {
            Observation::Series(y) if y.len() != p => {
                return Err(Error::dim(format!(
                    "observation has {} values, expected {p}",
                    y.len()
                )))
            }
            Observation::Cells(y) if y.len() != p * d1 => {
                return Err(Error::dim(format!(
                    "observation has {} values, expected {}",
                    y.len(),
                    p * d1
                )))
            }
            _ => {}
        }
        let (alpha, gamma, c) = (self.config.alpha, self.config.gamma, self.config.eci_c);
        let method = self.config.method;
        let aci_history = self.config.aci_history;
        let n = self.pending.len();
        for h in 1..=d1.min(t) {
            let j = h - 1;
            let record = &mut self.pending[n - h];
            debug_assert_eq!(record.t, t - h);
            for i in 0..p {
                let y = match obs {
                    Observation::Series(v) => v[i],
                    Observation::Cells(v) => v[i * d1 + j],
                };
                if !y.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite observation for cell ({i}, {j}) at step {t}"
                    )));
                }
                let cell = record.cell_mut(i, j);
                let covered = cell.interval().contains(y);
                cell.covered = Some(covered);
                let score = (y - cell.center).abs();
                let issued_state = cell.state;
                match &mut self.cells[i * d1 + j] {
                    CellState::Adjust { a } => {
                        if method != Method::FfdciNoUpdate {
                            *a = ffdci_update(*a, covered, gamma, alpha);
                        }
                    }
                    CellState::Sfogd { a, g_sum } => {
                        (*a, *g_sum) = sfogd_update(*a, covered, gamma, alpha, *g_sum);
                    }
                    CellState::Aci {
                        level,
                        history,
                        arrivals,
                    } => {
                        *level = aci_update(*level, covered, gamma, alpha);
                        if let AciHistory::Rolling { window } = aci_history {
                            let pos = history.partition_point(|v| *v < score);
                            history.insert(pos, score);
                            arrivals.push_back(score);
                            if let Some(w) = window {
                                while arrivals.len() > w {
                                    let old = arrivals.pop_front().expect("nonempty");
                                    let k = history.partition_point(|v| *v < old);
                                    history.remove(k);
                                }
                            }
                        }
                    }
                    CellState::Eci { q } => {
                        *q += gamma * eci_increment(issued_state, score, alpha, c);
                    }
                    CellState::Fixed { .. } => {}
                }
            }
        }
        Ok(())
    }

    fn issue(&self, t: usize, yhat: &[f64], qhat: Option<&[f64]>) -> IntervalRecord {
        let PanelDims { p, d1, .. } = self.config.dims;
        let mut cells = Vec::with_capacity(p * d1);
        for i in 0..p {
            for j in 0..d1 {
                let k = i * d1 + j;
                let center = yhat[k];
                let state = &self.cells[k];
                let interval = match state {
                    CellState::Adjust { a } | CellState::Sfogd { a, .. } => {
                        let q = match (&self.constant_qhat, qhat) {
                            (Some(constant), _) => constant[k],
                            (None, Some(q)) => q[k],
                            (None, None) => unreachable!("qhat validated in step"),
                        };
                        let q = self.config.qhat_cap.map_or(q, |cap| q.min(cap));
                        build_interval(center, q, *a)
                    }
                    CellState::Aci { level, history, .. } => {
                        let half = aci_halfwidth(history, *level).unwrap_or_else(|| {
                            self.calibration
                                .as_ref()
                                .and_then(|c| c.quantile(i, j, 1.0 - *level))
                                .unwrap_or(0.0)
                        });
                        build_interval(center, half, 0.0)
                    }
                    CellState::Eci { q } => build_interval(center, *q, 0.0),
                    CellState::Fixed { halfwidth } => build_interval(center, *halfwidth, 0.0),
                };
                cells.push(IntervalCell::new(
                    center,
                    interval,
                    Self::state_value(state),
                ));
            }
        }
        IntervalRecord { t, p, d1, cells }
    }
}
