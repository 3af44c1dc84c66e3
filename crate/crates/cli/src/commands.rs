use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use conformal_ts::calibrator::{coverage_gap_bound, CalibrationSet, Method, Trace};
use conformal_ts::metrics::{sigma_fit, MetricsReport};
use conformal_ts::panel::compute_errors;
use conformal_ts::pipeline::{self, Split};
use conformal_ts::quantile::{self, constant_quantile_model, QuantileNet};
use conformal_ts::synth::{self, OraclePanel};
use conformal_ts::tensor::{read_tensor, write_tensor, DType};
use conformal_ts::{PanelDataset, Tensor};
use rayon::prelude::*;

use crate::config::{RunConfig, RESOLVED_CONFIG_FILE};
use crate::error::{CliError, CliResult};
use crate::svg;

pub const QHAT_FILE: &str = "qhat.ctsb";
pub const QBAR_FILE: &str = "qbar.ctsb";
pub const REPORT_FILE: &str = "report.csv";
pub const AUDIT_FILE: &str = "theorem_audit.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

pub fn trace_file(method: Method) -> String {
    format!("trace_{method}.csv")
}

pub fn local_cov_file(method: Method) -> String {
    format!("local_cov_{method}.csv")
}

fn write(path: impl AsRef<Path>, text: &str) -> CliResult<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn prepare_out(cfg: &RunConfig) -> CliResult<PathBuf> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    write(out.join(RESOLVED_CONFIG_FILE), &cfg.resolved())?;
    Ok(out)
}

/// The configured panel plus its oracle quantiles when known.
fn load_panel(cfg: &RunConfig) -> CliResult<(PanelDataset, Option<Tensor>)> {
    match cfg.dataset() {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(CliError::io(
                    &dir,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        "dataset directory not found",
                    ),
                ));
            }
            let ds = PanelDataset::load_dir(&dir)?;
            let qstar = synth::read_qstar(&dir)?;
            Ok((ds, qstar))
        }
        None => {
            let OraclePanel { dataset, qstar } = synth::generate(&cfg.oracle_config()?)?;
            Ok((dataset, Some(qstar)))
        }
    }
}

fn split_panel(cfg: &RunConfig, ds: &PanelDataset) -> CliResult<Split> {
    Ok(pipeline::split(ds, cfg.calib_fraction()?)?)
}

fn load_net(cfg: &RunConfig) -> CliResult<QuantileNet> {
    let dir = cfg.checkpoint_dir();
    if !dir.join(quantile::META_FILE).is_file() {
        return Err(CliError::Usage(format!(
            "no checkpoint at {} (run `fit` first or set checkpoint=)",
            dir.display()
        )));
    }
    let net = quantile::load(&dir)?;
    if let Some(msg) = net.alpha_mismatch(cfg.alpha()?) {
        eprintln!("warning: {msg}");
    }
    Ok(net)
}

pub fn synth(cfg: &RunConfig) -> CliResult<()> {
    let oracle = cfg.oracle_config()?;
    let out = prepare_out(cfg)?;
    let panel = synth::generate(&oracle)?;
    panel.save_dir(&out, &oracle)?;
    println!("{}", out.join(synth::MANIFEST_FILE).display());
    Ok(())
}

pub fn fit(cfg: &RunConfig) -> CliResult<()> {
    let (ds, _) = load_panel(cfg)?;
    prepare_out(cfg)?;
    let split = split_panel(cfg, &ds)?;
    let d = ds.dims();
    let errors = compute_errors(&split.calibration)?;
    let (net, log) = quantile::train(&split.calibration, &errors, cfg.net_config(d.d2, d.d1)?)?;
    let dir = cfg.checkpoint_dir();
    quantile::save(&net, &dir)?;
    write(dir.join(TRAIN_LOG_FILE), &log.to_csv())?;
    println!(
        "trained {} epochs (best {}), held-out loss {} -> {}; checkpoint {}",
        log.epochs.len().saturating_sub(1),
        log.best_epoch,
        log.initial_val_loss(),
        log.best_val_loss(),
        dir.display()
    );
    Ok(())
}

/// Runs `methods` on the test split, returning traces in the given order.
fn run_methods(
    cfg: &RunConfig,
    split: &Split,
    methods: &[Method],
    out: &Path,
) -> CliResult<Vec<(Method, Trace)>> {
    let dims = split.test.dims();
    let qhat = if methods.iter().any(|m| m.uses_quantile_net()) {
        let net = load_net(cfg)?;
        let q = pipeline::predict_quantiles(&net, &split.test)?;
        write_tensor(out.join(QHAT_FILE), &q, DType::F64)?;
        Some(q)
    } else {
        None
    };
    let calibration = if methods.iter().any(|m| m.uses_calibration_errors()) {
        let errors = compute_errors(&split.calibration)?;
        let qbar = constant_quantile_model(&errors, cfg.alpha()?)?;
        write_tensor(out.join(QBAR_FILE), &qbar, DType::F64)?;
        Some(CalibrationSet::from_errors(&errors)?)
    } else {
        None
    };
    let configs = methods
        .iter()
        .map(|&m| cfg.calibrator_config(m, dims))
        .collect::<CliResult<Vec<_>>>()?;
    let results: Vec<CliResult<(Method, Trace)>> = configs
        .into_par_iter()
        .map(|c| {
            let method = c.method;
            let q = method.uses_quantile_net().then(|| qhat.as_ref()).flatten();
            let set = method
                .uses_calibration_errors()
                .then(|| calibration.clone())
                .flatten();
            Ok((method, pipeline::deploy(&split.test, q, c, set)?))
        })
        .collect();
    results.into_iter().collect()
}

pub fn calibrate(cfg: &RunConfig) -> CliResult<()> {
    let methods = cfg.methods()?;
    let (ds, _) = load_panel(cfg)?;
    let out = prepare_out(cfg)?;
    let split = split_panel(cfg, &ds)?;
    for (method, trace) in run_methods(cfg, &split, &methods, &out)? {
        let path = out.join(trace_file(method));
        trace.write_csv(&path)?;
        println!("{method}: {} steps -> {}", trace.steps(), path.display());
    }
    Ok(())
}

/// Per-cell RMS gap between oracle and model quantiles, averaged over cells.
fn mean_sigma_fit(qstar: &Tensor, qhat: impl Fn(usize, usize, usize) -> f64) -> CliResult<f64> {
    let s = qstar.shape();
    let (steps, p, d1) = (s[0], s[1], s[2]);
    let mut total = 0.0;
    for i in 0..p {
        for j in 0..d1 {
            let a: Vec<f64> = (0..steps).map(|t| qstar.at3(t, i, j)).collect();
            let b: Vec<f64> = (0..steps).map(|t| qhat(t, i, j)).collect();
            total += sigma_fit(&a, &b)?;
        }
    }
    Ok(total / (p * d1) as f64)
}

fn uses_fixed_rate_update(m: Method) -> bool {
    matches!(m, Method::Ffdci | Method::FfdciNoFeature)
}

pub fn report(cfg: &RunConfig) -> CliResult<()> {
    let methods = cfg.methods()?;
    let alpha = cfg.alpha()?;
    let (window, mode) = (cfg.window()?, cfg.window_mode()?);
    let (ds, qstar) = load_panel(cfg)?;
    let out = prepare_out(cfg)?;
    let split = split_panel(cfg, &ds)?;
    let cut = ds.dims().steps - split.test.dims().steps;
    let qstar_test = qstar
        .map(|q| q.slice_leading(cut, ds.dims().steps))
        .transpose()?;

    let mut report = String::from("method,metric,value\n");
    let mut audit = String::from(
        "method,i,j,steps,resolved,coverage,deviation,bound,max_abs_a,a_band,status\n",
    );
    let mut series = Vec::new();
    let gamma: f64 = cfg
        .calibrator_config(Method::Ffdci, split.test.dims())?
        .gamma;
    let m_bound = cfg.m()?;
    for &method in &methods {
        let trace = Trace::read_csv(out.join(trace_file(method)))?;
        let r = MetricsReport::compute(&trace, alpha, window, mode)?;
        for (name, value) in r.scalar_rows() {
            let _ = writeln!(report, "{method},{name},{value}");
        }
        if let Some(qs) = &qstar_test {
            let sf = if method.uses_quantile_net() {
                let q = read_tensor(out.join(QHAT_FILE))?;
                Some(mean_sigma_fit(qs, |t, i, j| q.at3(t, i, j))?)
            } else if matches!(method, Method::Cp | Method::FfdciNoFeature) {
                let q = read_tensor(out.join(QBAR_FILE))?;
                Some(mean_sigma_fit(qs, |_, i, j| q.at2(i, j))?)
            } else {
                None
            };
            if let Some(v) = sf {
                let _ = writeln!(report, "{method},sigma_fit,{v}");
            }
            if uses_fixed_rate_update(method) {
                audit_rows(&mut audit, method, &trace, alpha, gamma, m_bound);
            }
        }
        write(out.join(local_cov_file(method)), &local_cov_csv(&trace, &r))?;
        series.push((method, r));
    }
    write(out.join(REPORT_FILE), &report)?;
    if qstar_test.is_some() {
        write(out.join(AUDIT_FILE), &audit)?;
    }
    if cfg.svg()? {
        write(
            out.join("local_coverage.svg"),
            &svg::local_coverage_chart(&series, alpha),
        )?;
    }
    print!("{report}");
    Ok(())
}

fn audit_rows(out: &mut String, method: Method, trace: &Trace, alpha: f64, gamma: f64, m: f64) {
    let steps = trace.steps();
    let band = m + gamma;
    for i in 0..trace.p {
        for j in 0..trace.d1 {
            let hits = trace.resolved_series(i, j);
            let n = hits.len();
            let cov = hits.iter().filter(|&&h| h).count() as f64 / n.max(1) as f64;
            let dev = (cov - (1.0 - alpha)).abs();
            let bound = coverage_gap_bound(m, gamma, steps, j + 1);
            let max_a = trace
                .records
                .iter()
                .map(|r| r.cell(i, j).state.abs())
                .fold(0.0, f64::max);
            let ok = n > 0 && dev <= bound && max_a <= band;
            let _ = writeln!(
                out,
                "{method},{i},{j},{steps},{n},{cov},{dev},{bound},{max_a},{band},{}",
                if ok { "PASS" } else { "FAIL" }
            );
        }
    }
}

fn local_cov_csv(trace: &Trace, r: &MetricsReport) -> String {
    let mut s = String::from("window");
    for i in 0..trace.p {
        for j in 0..trace.d1 {
            let _ = write!(s, ",cell_{i}_{j}");
        }
    }
    s.push('\n');
    let rows = r.local_cov.iter().map(Vec::len).max().unwrap_or(0);
    for k in 0..rows {
        let _ = write!(s, "{k}");
        for cell in &r.local_cov {
            match cell.get(k) {
                Some(v) => {
                    let _ = write!(s, ",{v}");
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

pub fn ablate(cfg: &RunConfig) -> CliResult<()> {
    let methods = [Method::Ffdci, Method::FfdciNoUpdate, Method::FfdciNoFeature];
    let alpha = cfg.alpha()?;
    let (window, mode) = (cfg.window()?, cfg.window_mode()?);
    let (ds, _) = load_panel(cfg)?;
    let out = prepare_out(cfg)?;
    let split = split_panel(cfg, &ds)?;
    let traces = run_methods(cfg, &split, &methods, &out)?;
    let reports = traces
        .iter()
        .map(|(m, t)| Ok((*m, MetricsReport::compute(t, alpha, window, mode)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let base = &reports[0].1;
    let mut table = String::from("method,cov,mean_width,min_d,min_t,c_loss,l_loss\n");
    for (m, r) in &reports {
        let c_loss = 100.0 * (base.cov - r.cov);
        let l_loss = 100.0 * (r.mean_width - base.mean_width) / base.mean_width;
        let _ = writeln!(
            table,
            "{m},{},{},{},{},{c_loss},{l_loss}",
            r.cov, r.mean_width, r.min_d, r.min_t
        );
    }
    write(out.join(ABLATION_FILE), &table)?;
    print!("{table}");
    Ok(())
}
