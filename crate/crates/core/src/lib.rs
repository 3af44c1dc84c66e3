//! Adaptive prediction intervals for multivariate, multi-horizon forecasts.
//!
//! A feature-conditioned quantile network predicts the error scale of each
//! `(variate, horizon)` cell; an online additive adjustment, updated from
//! lagged coverage feedback, keeps long-run coverage on target. Baseline
//! calibrators (split conformal, ACI, ECI) share the same streaming
//! interface.

pub mod calibrator;
pub mod error;
pub mod metrics;
pub mod panel;
pub mod pipeline;
pub mod quantile;
pub mod synth;
pub mod tensor;

pub use calibrator::{
    CalibrationSet, Calibrator, CalibratorConfig, Interval, IntervalRecord, Method, Observation,
    Trace,
};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use panel::{ErrorTensor, PanelDataset, PanelDims};
pub use quantile::{NetConfig, QuantileNet, TrainLog};
pub use synth::{OracleConfig, OraclePanel, Regime};
pub use tensor::{DType, Tensor};
