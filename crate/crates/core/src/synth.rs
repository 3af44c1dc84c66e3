//! Synthetic panels with analytically known error quantiles.
//!
//! Errors are half-normal with a feature-driven scale, so the true
//! `(1 - alpha)` quantile of `|yhat - y|` is `sigma * Phi^{-1}(1 - alpha/2)`
//! (clipped at `m`). That oracle lets coverage guarantees and quantile-fit
//! quality be checked without real data.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::panel::{PanelDataset, PanelDims};
use crate::tensor::{read_tensor, write_tensor, DType, Tensor};

pub const QSTAR_FILE: &str = "qstar.ctsb";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Exponent clamp on the log-scale.
const LOG_SCALE_CLAMP: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Stationary,
    Heteroscedastic,
    Shift,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Stationary => "STATIONARY",
            Regime::Heteroscedastic => "HETEROSCEDASTIC",
            Regime::Shift => "SHIFT",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "STATIONARY" => Ok(Regime::Stationary),
            "HETEROSCEDASTIC" => Ok(Regime::Heteroscedastic),
            "SHIFT" => Ok(Regime::Shift),
            _ => Err(Error::Config(format!(
                "unknown regime {s:?} (expected STATIONARY, HETEROSCEDASTIC or SHIFT)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleConfig {
    pub dims: PanelDims,
    pub regime: Regime,
    /// Clip bound on errors (and on the oracle quantile).
    pub m: f64,
    /// Log-scale weights over features; `None` picks the regime default.
    pub w: Option<Vec<f64>>,
    /// First step with inflated scale under SHIFT; defaults to `steps / 2`.
    pub shift_step: Option<usize>,
    pub kappa: f64,
    pub base: f64,
    /// AR(1) coefficient of each feature over time; 0 draws features i.i.d.
    pub feature_ar: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl OracleConfig {
    pub fn new(dims: PanelDims, regime: Regime, seed: u64) -> Self {
        Self {
            dims,
            regime,
            m: 10.0,
            w: None,
            shift_step: None,
            kappa: 2.0,
            base: 1.0,
            feature_ar: 0.0,
            alpha: 0.1,
            seed,
        }
    }

    /// Zero for the stationary and shift regimes; alternating signs with
    /// unit-variance-scale `0.8` on `w . z` for the heteroscedastic one.
    pub fn effective_w(&self) -> Vec<f64> {
        if let Some(w) = &self.w {
            return w.clone();
        }
        let d2 = self.dims.d2;
        match self.regime {
            Regime::Stationary | Regime::Shift => vec![0.0; d2],
            Regime::Heteroscedastic => {
                let mag = 0.8 / (d2 as f64).sqrt();
                (0..d2)
                    .map(|k| if k % 2 == 0 { mag } else { -mag })
                    .collect()
            }
        }
    }

    pub fn effective_shift_step(&self) -> usize {
        self.shift_step.unwrap_or(self.dims.steps / 2)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(Error::Parameter(format!(
                "m must be positive, got {}",
                self.m
            )));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Parameter(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.base > 0.0 && self.base.is_finite()) {
            return Err(Error::Parameter(format!(
                "base must be positive, got {}",
                self.base
            )));
        }
        if !(0.0..1.0).contains(&self.feature_ar) {
            return Err(Error::Parameter(format!(
                "feature_ar must lie in [0, 1), got {}",
                self.feature_ar
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Parameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if let Some(w) = &self.w {
            if w.len() != self.dims.d2 || w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!(
                    "w must hold {} finite weights, got {}",
                    self.dims.d2,
                    w.len()
                )));
            }
        }
        if self.regime == Regime::Shift && self.effective_shift_step() >= self.dims.steps {
            return Err(Error::Parameter(format!(
                "shift_step {} must be below steps {}",
                self.effective_shift_step(),
                self.dims.steps
            )));
        }
        Ok(())
    }

    /// `key=value` lines describing every effective setting.
    pub fn manifest(&self) -> String {
        let d = self.dims;
        let w: Vec<String> = self.effective_w().iter().map(f64::to_string).collect();
        let mut s = String::new();
        let _ = writeln!(s, "regime={}", self.regime);
        let _ = writeln!(s, "steps={}\np={}\nd1={}\nd2={}", d.steps, d.p, d.d1, d.d2);
        let _ = writeln!(s, "m={}", self.m);
        let _ = writeln!(s, "w={}", w.join(","));
        if self.regime == Regime::Shift {
            let _ = writeln!(s, "shift_step={}", self.effective_shift_step());
            let _ = writeln!(s, "kappa={}", self.kappa);
        }
        let _ = writeln!(s, "base={}", self.base);
        let _ = writeln!(s, "feature_ar={}", self.feature_ar);
        let _ = writeln!(s, "alpha={}", self.alpha);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OraclePanel {
    pub dataset: PanelDataset,
    /// True `(1 - alpha)` quantile of `|yhat - y|` per cell, `[T][p][d1]`.
    pub qstar: Tensor,
}

/// Two-sided normal quantile: the `level` quantile of `|N(0, 1)|`.
pub fn half_normal_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + 0.5 * level)
}

fn base_signal(t: usize, i: usize, j: usize) -> f64 {
    let phase = (t + j + 1) as f64 * std::f64::consts::TAU / 48.0 + i as f64;
    5.0 * phase.sin() + 0.5 * (3.0 * phase).cos()
}

pub fn generate(config: &OracleConfig) -> Result<OraclePanel> {
    config.validate()?;
    let PanelDims { steps, p, d1, d2 } = config.dims;
    let w = config.effective_w();
    let z_level = half_normal_quantile(1.0 - config.alpha);
    let t0 = config.effective_shift_step();
    let rho = config.feature_ar;
    let innov = (1.0 - rho * rho).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut features = Vec::with_capacity(steps * p * d2);
    let mut predictions = Vec::with_capacity(steps * p * d1);
    let mut targets = Vec::with_capacity(steps * p * d1);
    let mut qstar = Vec::with_capacity(steps * p * d1);
    let mut prev = vec![0.0f64; p * d2];

    for t in 0..steps {
        for i in 0..p {
            let z = &mut prev[i * d2..(i + 1) * d2];
            for zk in z.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *zk = if t == 0 { e } else { rho * *zk + innov * e };
            }
            features.extend_from_slice(z);
            let lin: f64 = w.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
            let mut sigma = lin.clamp(-LOG_SCALE_CLAMP, LOG_SCALE_CLAMP).exp() * config.base;
            if config.regime == Regime::Shift && t >= t0 {
                sigma *= config.kappa;
            }
            for j in 0..d1 {
                let n: f64 = rng.sample(StandardNormal);
                let s = (sigma * n.abs()).min(config.m);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let yhat = base_signal(t, i, j);
                predictions.push(yhat);
                targets.push(yhat + sign * s);
                qstar.push((sigma * z_level).min(config.m));
            }
        }
    }
    let dataset = PanelDataset::new(
        Tensor::new(vec![steps, p, d1], predictions)?,
        Tensor::new(vec![steps, p, d1], targets)?,
        Tensor::new(vec![steps, p, d2], features)?,
    )?;
    Ok(OraclePanel {
        dataset,
        qstar: Tensor::new(vec![steps, p, d1], qstar)?,
    })
}

/// Fraction of cells whose error lies within the oracle quantile.
pub fn oracle_coverage_check(panel: &OraclePanel) -> f64 {
    let yhat = panel.dataset.predictions().data();
    let y = panel.dataset.targets().data();
    let q = panel.qstar.data();
    let hits = (0..q.len())
        .filter(|&k| (yhat[k] - y[k]).abs() <= q[k])
        .count();
    hits as f64 / q.len() as f64
}

impl OraclePanel {
    /// Writes the dataset directory plus `qstar.ctsb` and `manifest.txt`.
    pub fn save_dir(&self, dir: impl AsRef<Path>, config: &OracleConfig) -> Result<()> {
        let dir = dir.as_ref();
        self.dataset.save_dir(dir)?;
        write_tensor(dir.join(QSTAR_FILE), &self.qstar, DType::F64)?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, config.manifest()).map_err(|e| Error::io(path, e))
    }
}

/// Reads `qstar.ctsb` from a dataset directory if present.
pub fn read_qstar(dir: impl AsRef<Path>) -> Result<Option<Tensor>> {
    let path = dir.as_ref().join(QSTAR_FILE);
    if !path.exists() {
        return Ok(None);
    }
    read_tensor(&path).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(regime: Regime) -> OracleConfig {
        OracleConfig::new(PanelDims::new(200, 2, 3, 4).unwrap(), regime, 7)
    }

    #[test]
    fn regime_names() {
        assert_eq!("shift".parse::<Regime>().unwrap(), Regime::Shift);
        assert!("trend".parse::<Regime>().is_err());
    }

    #[test]
    fn unit_scale_oracle_quantile() {
        assert!((half_normal_quantile(0.9) - 1.6448536269514722).abs() < 1e-9);
    }

    #[test]
    fn stationary_qstar_is_constant() {
        let panel = generate(&cfg(Regime::Stationary)).unwrap();
        let q0 = panel.qstar.data()[0];
        assert!((q0 - 1.6448536269514722).abs() < 1e-9);
        assert!(panel.qstar.data().iter().all(|&q| q == q0));
    }

    #[test]
    fn shift_scales_after_t0() {
        let panel = generate(&cfg(Regime::Shift)).unwrap();
        let q = &panel.qstar;
        assert!((q.at3(150, 0, 0) / q.at3(50, 0, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_panel() {
        let a = generate(&cfg(Regime::Heteroscedastic)).unwrap();
        let b = generate(&cfg(Regime::Heteroscedastic)).unwrap();
        assert_eq!(a, b);
        let mut c2 = cfg(Regime::Heteroscedastic);
        c2.seed = 8;
        assert_ne!(a, generate(&c2).unwrap());
    }

    #[test]
    fn errors_respect_clip() {
        let mut c = cfg(Regime::Heteroscedastic);
        c.m = 0.5;
        let panel = generate(&c).unwrap();
        let d = &panel.dataset;
        for (a, b) in d.predictions().data().iter().zip(d.targets().data()) {
            assert!((a - b).abs() <= 0.5 + 1e-12);
        }
        assert!(panel.qstar.data().iter().all(|&q| q <= 0.5));
    }

    #[test]
    fn invalid_configs() {
        let mut c = cfg(Regime::Shift);
        c.shift_step = Some(200);
        assert!(generate(&c).is_err());
        let mut c = cfg(Regime::Stationary);
        c.w = Some(vec![1.0]);
        assert!(generate(&c).is_err());
        let mut c = cfg(Regime::Stationary);
        c.feature_ar = 1.0;
        assert!(generate(&c).is_err());
    }
}
