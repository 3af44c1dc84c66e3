//! Forecast panels: predictions, realized targets and model features for
//! `T` issuance steps, `p` variates and `d1` horizons.
//!
//! A forecast issued at step `t` for horizon `j` (1-based) concerns the value
//! realized at wall-clock step `t + j`; it is stored at horizon index `j - 1`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, DType, Tensor};

pub const PREDICTIONS_FILE: &str = "predictions.ctsb";
pub const TARGETS_FILE: &str = "targets.ctsb";
pub const FEATURES_FILE: &str = "features.ctsb";
pub const DIMS_FILE: &str = "dims.txt";
pub const RAW_SERIES_FILE: &str = "raw.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PanelDims {
    /// Issuance steps.
    pub steps: usize,
    /// Variates.
    pub p: usize,
    /// Forecast horizons.
    pub d1: usize,
    /// Feature width per variate.
    pub d2: usize,
}

impl PanelDims {
    pub fn new(steps: usize, p: usize, d1: usize, d2: usize) -> Result<Self> {
        let dims = Self { steps, p, d1, d2 };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.p == 0 || self.d1 == 0 || self.d2 == 0 {
            return Err(Error::dim(format!("all dims must be positive: {self:?}")));
        }
        if self.steps < self.d1 + 2 {
            return Err(Error::dim(format!(
                "need at least d1 + 2 = {} steps, got {}",
                self.d1 + 2,
                self.steps
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.p * self.d1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanelDataset {
    dims: PanelDims,
    predictions: Tensor,
    targets: Tensor,
    features: Tensor,
}

impl PanelDataset {
    pub fn new(predictions: Tensor, targets: Tensor, features: Tensor) -> Result<Self> {
        let &[steps, p, d1] = predictions.shape() else {
            return Err(Error::dim(format!(
                "predictions must be rank 3, got {:?}",
                predictions.shape()
            )));
        };
        if targets.shape() != predictions.shape() {
            return Err(Error::dim(format!(
                "targets shape {:?} != predictions shape {:?}",
                targets.shape(),
                predictions.shape()
            )));
        }
        let &[fs, fp, d2] = features.shape() else {
            return Err(Error::dim(format!(
                "features must be rank 3, got {:?}",
                features.shape()
            )));
        };
        if fs != steps || fp != p {
            return Err(Error::dim(format!(
                "features shape {:?} does not match [{steps}][{p}][·]",
                features.shape()
            )));
        }
        let dims = PanelDims::new(steps, p, d1, d2)?;
        for (name, t) in [
            ("predictions", &predictions),
            ("targets", &targets),
            ("features", &features),
        ] {
            if !t.all_finite() {
                return Err(Error::Validation(format!("{name} contain NaN or Inf")));
            }
        }
        Ok(Self {
            dims,
            predictions,
            targets,
            features,
        })
    }

    /// Builds a panel from a raw series `[T_raw][p]`; targets are aligned
    /// with [`align_targets`] and predictions/features must cover the
    /// `T_raw - d1` issuance steps.
    pub fn from_raw(raw: &Tensor, predictions: Tensor, features: Tensor) -> Result<Self> {
        let d1 = *predictions
            .shape()
            .get(2)
            .ok_or_else(|| Error::dim("predictions must be rank 3"))?;
        let targets = align_targets(raw, d1)?;
        Self::new(predictions, targets, features)
    }

    pub fn dims(&self) -> PanelDims {
        self.dims
    }

    pub fn predictions(&self) -> &Tensor {
        &self.predictions
    }

    pub fn targets(&self) -> &Tensor {
        &self.targets
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Issuance steps `[start, end)` as a new panel.
    pub fn slice_steps(&self, start: usize, end: usize) -> Result<Self> {
        Self::new(
            self.predictions.slice_leading(start, end)?,
            self.targets.slice_leading(start, end)?,
            self.features.slice_leading(start, end)?,
        )
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_tensor(dir.join(PREDICTIONS_FILE), &self.predictions, DType::F64)?;
        write_tensor(dir.join(TARGETS_FILE), &self.targets, DType::F64)?;
        write_tensor(dir.join(FEATURES_FILE), &self.features, DType::F64)?;
        let d = self.dims;
        let path = dir.join(DIMS_FILE);
        fs::write(&path, format!("{} {} {} {}\n", d.steps, d.p, d.d1, d.d2))
            .map_err(|e| Error::io(path, e))
    }

    /// Loads a dataset directory. Targets come from `targets.ctsb` when
    /// present, otherwise they are aligned from `raw.csv`. `dims.txt`, when
    /// present, is checked against the loaded tensors.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let predictions = read_tensor(dir.join(PREDICTIONS_FILE))?;
        let features = read_tensor(dir.join(FEATURES_FILE))?;
        let targets_path = dir.join(TARGETS_FILE);
        let ds = if targets_path.exists() {
            Self::new(predictions, read_tensor(targets_path)?, features)?
        } else {
            let raw = read_csv_matrix(dir.join(RAW_SERIES_FILE))?;
            Self::from_raw(&raw, predictions, features)?
        };
        let dims_path = dir.join(DIMS_FILE);
        if dims_path.exists() {
            let text = fs::read_to_string(&dims_path).map_err(|e| Error::io(&dims_path, e))?;
            let nums: Vec<usize> = text
                .split_whitespace()
                .map(|w| w.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Validation(format!("{}: {e}", dims_path.display())))?;
            let d = ds.dims;
            if nums != [d.steps, d.p, d.d1, d.d2] {
                return Err(Error::dim(format!(
                    "dims.txt says {nums:?} but tensors have [{}, {}, {}, {}]",
                    d.steps, d.p, d.d1, d.d2
                )));
            }
        }
        Ok(ds)
    }
}

/// Absolute forecast errors `|prediction - target|`, shape `[T][p][d1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTensor(Tensor);

impl ErrorTensor {
    pub fn new(s: Tensor) -> Result<Self> {
        if s.ndim() != 3 {
            return Err(Error::dim(format!(
                "errors must be rank 3, got {:?}",
                s.shape()
            )));
        }
        if s.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Validation(
                "errors must be finite and nonnegative".into(),
            ));
        }
        Ok(Self(s))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    #[inline]
    pub fn at(&self, t: usize, i: usize, j: usize) -> f64 {
        self.0.at3(t, i, j)
    }

    pub fn steps(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn slice_steps(&self, start: usize, end: usize) -> Result<Self> {
        Ok(Self(self.0.slice_leading(start, end)?))
    }
}

/// `out[t][i][j-1] = raw[t + j][i]` for `j in 1..=d1`, with `T = T_raw - d1`.
pub fn align_targets(raw: &Tensor, d1: usize) -> Result<Tensor> {
    let &[t_raw, p] = raw.shape() else {
        return Err(Error::dim(format!(
            "raw series must be rank 2, got {:?}",
            raw.shape()
        )));
    };
    if d1 == 0 || t_raw <= d1 {
        return Err(Error::dim(format!(
            "raw series length {t_raw} must exceed horizon count {d1}"
        )));
    }
    if !raw.all_finite() {
        return Err(Error::Validation("raw series contains NaN or Inf".into()));
    }
    Ok(Tensor::from_fn3([t_raw - d1, p, d1], |t, i, j| {
        raw.at2(t + j + 1, i)
    }))
}

pub fn compute_errors(ds: &PanelDataset) -> Result<ErrorTensor> {
    let (yhat, y) = (ds.predictions(), ds.targets());
    if yhat.shape() != y.shape() {
        return Err(Error::dim("predictions/targets shape mismatch"));
    }
    let data = yhat
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).abs())
        .collect();
    ErrorTensor::new(Tensor::new(yhat.shape().to_vec(), data)?)
}

/// Reads a comma-separated numeric matrix. A single leading row starting
/// with `#` is treated as a header and skipped.
pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv_matrix(&text)
}

pub fn parse_csv_matrix(text: &str) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (idx, record) in reader.records().enumerate() {
        let row_no = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row: row_no,
            col: None,
            reason: e.to_string(),
        })?;
        if idx == 0 && record.get(0).is_some_and(|c| c.starts_with('#')) {
            continue;
        }
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    row: row_no,
                    col: None,
                    reason: format!("expected {w} columns, found {}", record.len()),
                })
            }
            _ => {}
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: row_no,
                col: Some(c + 1),
                reason: format!("not a number: {cell:?}"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Tensor::new(vec![rows, width.unwrap_or(0)], data)
}

pub fn write_csv_matrix(path: impl AsRef<Path>, m: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let &[rows, cols] = m.shape() else {
        return Err(Error::dim("csv output must be rank 2"));
    };
    let mut out = String::new();
    for r in 0..rows {
        for c in 0..cols {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&m.at2(r, c).to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
