use conformal_ts::calibrator::{CalibratorConfig, Method};
use conformal_ts::pipeline::{calibration_set, deploy, split_at};
use conformal_ts::synth::{
    generate, half_normal_quantile, oracle_coverage_check, OracleConfig, OraclePanel, Regime,
};
use conformal_ts::{PanelDataset, PanelDims};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// 0.9 quantile of |N(0,1)|, frozen from the bisection oracle below.
const Z90: f64 = 1.6448536269514722;

/// erf by its Maclaurin series; accurate to ~1e-16 for |x| < 3.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

#[test]
fn frozen_quantile_matches_bisection_oracle() {
    // P(|Z| <= z) = erf(z / sqrt 2); solve erf(z / sqrt 2) = 0.9.
    let (mut lo, mut hi) = (1.0f64, 2.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if erf_series(mid / std::f64::consts::SQRT_2) < 0.9 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((lo - Z90).abs() < 1e-13, "bisection gives {lo}");
    assert!((half_normal_quantile(0.9) - Z90).abs() < 1e-12);
}

fn cfg(steps: usize, p: usize, d1: usize, regime: Regime, seed: u64) -> OracleConfig {
    OracleConfig::new(PanelDims::new(steps, p, d1, 3).unwrap(), regime, seed)
}

#[test]
fn monte_carlo_coverage_of_analytic_quantile() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let sigma = 1.7;
    let q = sigma * Z90;
    let hits = (0..50_000)
        .filter(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z.abs() <= q
        })
        .count();
    let frac = hits as f64 / 50_000.0;
    assert!((frac - 0.9).abs() <= 0.005, "{frac}");
}

#[test]
fn oracle_self_check_over_sixty_thousand_cells() {
    let panel = generate(&cfg(5000, 3, 4, Regime::Heteroscedastic, 32)).unwrap();
    let frac = oracle_coverage_check(&panel);
    assert!((frac - 0.9).abs() <= 0.004, "{frac}");

    // Halving q* lowers coverage to P(|Z| <= 0.822) ~ 0.589.
    let mut halved = panel.clone();
    halved.qstar.data_mut().iter_mut().for_each(|q| *q *= 0.5);
    assert!(oracle_coverage_check(&halved) < 0.8);
}

#[test]
fn huge_clip_bound_saturates_coverage() {
    let mut c = cfg(500, 2, 2, Regime::Stationary, 33);
    c.m = 1e12;
    let mut panel = generate(&c).unwrap();
    panel.qstar.data_mut().iter_mut().for_each(|q| *q = 1e12);
    assert_eq!(oracle_coverage_check(&panel), 1.0);
}

#[test]
fn regimes_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    for (k, regime) in [Regime::Stationary, Regime::Heteroscedastic, Regime::Shift]
        .into_iter()
        .enumerate()
    {
        let c = cfg(100, 2, 3, regime, 40 + k as u64);
        let panel = generate(&c).unwrap();
        let d = dir.path().join(regime.name());
        panel.save_dir(&d, &c).unwrap();
        let back = OraclePanel {
            dataset: PanelDataset::load_dir(&d).unwrap(),
            qstar: conformal_ts::synth::read_qstar(&d).unwrap().unwrap(),
        };
        assert_eq!(back, panel);
        let manifest = std::fs::read(d.join("manifest.txt")).unwrap();
        assert_eq!(
            Sha256::digest(&manifest),
            Sha256::digest(c.manifest().as_bytes())
        );
    }
}

#[test]
fn frozen_quantile_interval_loses_coverage_after_shift() {
    let c = cfg(6000, 2, 2, Regime::Shift, 50);
    let panel = generate(&c).unwrap();
    let split = split_at(&panel.dataset, 2000).unwrap();
    let dims = split.test.dims();
    let set = calibration_set(&split.calibration).unwrap();
    let trace = deploy(
        &split.test,
        None,
        CalibratorConfig::new(Method::Cp, dims),
        Some(set),
    )
    .unwrap();
    // The shift sits at generator step 3000, i.e. test step 1000.
    let post: Vec<bool> = trace
        .records
        .iter()
        .filter(|r| r.t >= 1000)
        .flat_map(|r| r.cells.iter().filter_map(|c| c.covered))
        .collect();
    let cov = post.iter().filter(|&&h| h).count() as f64 / post.len() as f64;
    // P(|Z| <= z90 / 2) = 0.589.
    assert!((cov - 0.589).abs() < 0.03, "{cov}");
}
