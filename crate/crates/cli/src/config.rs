//! Flat `key=value` run configuration.
//!
//! Values come from built-in defaults, then an optional `--config` file,
//! then `--key value` command-line overrides. Unknown keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use conformal_ts::calibrator::{AciHistory, CalibratorConfig, Method};
use conformal_ts::metrics::WindowMode;
use conformal_ts::synth::{OracleConfig, Regime};
use conformal_ts::{NetConfig, PanelDims};

use crate::error::{CliError, CliResult};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.txt";

/// `(key, default, description)` in output order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("out", "out", "output directory"),
    (
        "dataset",
        "",
        "panel directory; empty synthesizes one from the synth keys",
    ),
    ("seed", "0", "seed for synthesis and training"),
    (
        "regime",
        "STATIONARY",
        "synthetic regime: STATIONARY, HETEROSCEDASTIC or SHIFT",
    ),
    ("steps", "4000", "synthetic issuance steps"),
    ("p", "4", "synthetic variates"),
    ("d1", "4", "forecast horizons"),
    ("d2", "8", "features per variate"),
    ("m", "10", "error clip bound"),
    (
        "w",
        "",
        "comma-separated log-scale weights; empty uses the regime default",
    ),
    ("shift_step", "", "first shifted step; empty means steps/2"),
    ("kappa", "2", "scale multiplier after the shift"),
    ("base", "1", "error scale"),
    ("feature_ar", "0", "AR(1) coefficient of synthetic features"),
    (
        "calib_fraction",
        "0.5",
        "leading fraction of steps used for fitting and calibration",
    ),
    ("alpha", "0.1", "miscoverage level"),
    ("gamma", "0.002", "adjustment step size"),
    ("eci_c", "0.2", "ECI sigmoid constant"),
    (
        "methods",
        "FFDCI,CP,ACI,ECI",
        "comma-separated calibration methods",
    ),
    (
        "qhat_cap",
        "",
        "upper clamp on predicted quantiles; empty disables",
    ),
    (
        "aci_history",
        "calibration",
        "ACI score history: calibration or rolling",
    ),
    (
        "aci_window",
        "0",
        "rolling ACI history cap; 0 keeps everything",
    ),
    ("hidden", "512,256", "hidden layer widths"),
    ("lr", "0.001", "learning rate"),
    ("epochs", "100", "maximum training epochs"),
    ("patience", "5", "early-stopping patience"),
    (
        "split_fraction",
        "0.8",
        "training share of the fitting rows",
    ),
    ("batch_size", "256", "minibatch size"),
    (
        "checkpoint",
        "",
        "checkpoint directory; empty means <out>/checkpoint",
    ),
    ("window", "100", "local-coverage window"),
    (
        "window_mode",
        "disjoint",
        "local-coverage windows: disjoint or sliding",
    ),
    ("svg", "false", "also write local_coverage.svg"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: Vec<String>,
}

fn index_of(key: &str) -> Option<usize> {
    KEYS.iter().position(|(k, _, _)| *k == key)
}

fn bad(key: &str, value: &str, what: &str) -> CliError {
    CliError::Usage(format!("{key}={value:?}: expected {what}"))
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(_, d, _)| d.to_string()).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let k = index_of(key).ok_or_else(|| CliError::Usage(format!("unknown key {key:?}")))?;
        self.values[k] = value.trim().to_string();
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[index_of(key).unwrap_or_else(|| panic!("undeclared key {key}"))]
    }

    /// Applies every `key=value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{origin}:{}: expected key=value, got {raw:?}",
                    n + 1
                ))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn resolved(&self) -> String {
        let mut s = String::new();
        for ((k, _, _), v) in KEYS.iter().zip(&self.values) {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    fn parse<T: FromStr>(&self, key: &str, what: &str) -> CliResult<T> {
        let v = self.get(key);
        v.parse().map_err(|_| bad(key, v, what))
    }

    fn optional<T: FromStr>(&self, key: &str, what: &str) -> CliResult<Option<T>> {
        match self.get(key) {
            "" => Ok(None),
            v => v.parse().map(Some).map_err(|_| bad(key, v, what)),
        }
    }

    fn list<T: FromStr>(&self, key: &str, what: &str) -> CliResult<Vec<T>> {
        let v = self.get(key);
        v.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().map_err(|_| bad(key, v, what)))
            .collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    pub fn dataset(&self) -> Option<PathBuf> {
        match self.get("dataset") {
            "" => None,
            p => Some(PathBuf::from(p)),
        }
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        match self.get("checkpoint") {
            "" => self.out_dir().join("checkpoint"),
            p => PathBuf::from(p),
        }
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.parse("seed", "an unsigned integer")
    }

    pub fn alpha(&self) -> CliResult<f64> {
        self.parse("alpha", "a number")
    }

    pub fn m(&self) -> CliResult<f64> {
        self.parse("m", "a number")
    }

    pub fn calib_fraction(&self) -> CliResult<f64> {
        self.parse("calib_fraction", "a number")
    }

    pub fn window(&self) -> CliResult<usize> {
        self.parse("window", "a positive integer")
    }

    pub fn window_mode(&self) -> CliResult<WindowMode> {
        match self.get("window_mode").to_ascii_lowercase().as_str() {
            "disjoint" => Ok(WindowMode::Disjoint),
            "sliding" => Ok(WindowMode::Sliding),
            v => Err(bad("window_mode", v, "disjoint or sliding")),
        }
    }

    pub fn svg(&self) -> CliResult<bool> {
        self.parse("svg", "true or false")
    }

    pub fn methods(&self) -> CliResult<Vec<Method>> {
        let mut out: Vec<Method> = Vec::new();
        for name in self
            .get("methods")
            .split(',')
            .filter(|s| !s.trim().is_empty())
        {
            let m: Method = name
                .parse()
                .map_err(|_| bad("methods", name, "a known method name"))?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(CliError::Usage("methods is empty".into()));
        }
        Ok(out)
    }

    pub fn oracle_config(&self) -> CliResult<OracleConfig> {
        let dims = PanelDims::new(
            self.parse("steps", "a positive integer")?,
            self.parse("p", "a positive integer")?,
            self.parse("d1", "a positive integer")?,
            self.parse("d2", "a positive integer")?,
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
        let regime: Regime = self.get("regime").parse().map_err(|_| {
            bad(
                "regime",
                self.get("regime"),
                "STATIONARY, HETEROSCEDASTIC or SHIFT",
            )
        })?;
        let w: Vec<f64> = self.list("w", "comma-separated numbers")?;
        let mut cfg = OracleConfig::new(dims, regime, self.seed()?);
        cfg.m = self.m()?;
        cfg.w = (!w.is_empty()).then_some(w);
        cfg.shift_step = self.optional("shift_step", "an integer")?;
        cfg.kappa = self.parse("kappa", "a number")?;
        cfg.base = self.parse("base", "a number")?;
        cfg.feature_ar = self.parse("feature_ar", "a number")?;
        cfg.alpha = self.alpha()?;
        Ok(cfg)
    }

    pub fn net_config(&self, d2: usize, d1: usize) -> CliResult<NetConfig> {
        let mut cfg = NetConfig::new(d2, d1);
        cfg.hidden_dims = self.list("hidden", "comma-separated widths")?;
        cfg.alpha = self.alpha()?;
        cfg.learning_rate = self.parse("lr", "a number")?;
        cfg.max_epochs = self.parse("epochs", "an integer")?;
        cfg.patience = self.parse("patience", "an integer")?;
        cfg.split_fraction = self.parse("split_fraction", "a number")?;
        cfg.batch_size = self.parse("batch_size", "an integer")?;
        cfg.seed = self.seed()?;
        Ok(cfg)
    }

    pub fn calibrator_config(
        &self,
        method: Method,
        dims: PanelDims,
    ) -> CliResult<CalibratorConfig> {
        let mut cfg = CalibratorConfig::new(method, dims);
        cfg.alpha = self.alpha()?;
        cfg.gamma = self.parse("gamma", "a number")?;
        cfg.eci_c = self.parse("eci_c", "a number")?;
        cfg.qhat_cap = self.optional("qhat_cap", "a number")?;
        let window: usize = self.parse("aci_window", "an integer")?;
        cfg.aci_history = match self.get("aci_history").to_ascii_lowercase().as_str() {
            "calibration" => AciHistory::Calibration,
            "rolling" => AciHistory::Rolling {
                window: (window > 0).then_some(window),
            },
            v => return Err(bad("aci_history", v, "calibration or rolling")),
        };
        Ok(cfg)
    }
}
