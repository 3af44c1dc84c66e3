use conformal_ts::calibrator::{build_interval, IntervalCell, IntervalRecord, Trace};
use conformal_ts::metrics::{
    approx_mace, global_coverage, local_coverage, mean_width, min_dim_coverage,
    min_horizon_coverage, per_dim_coverage, per_horizon_coverage, sigma_fit, MetricsReport,
    WindowMode,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random trace; the last `d1` records are left partly unresolved.
fn random_trace(seed: u64, steps: usize, p: usize, d1: usize) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = Trace::new(p, d1);
    for t in 0..steps {
        let mut cells = Vec::with_capacity(p * d1);
        for _ in 0..p {
            for j in 0..d1 {
                let half = rng.random_range(-0.2..2.0);
                let mut c = IntervalCell::new(0.0, build_interval(0.0, half, 0.0), 0.0);
                if t + j + 1 < steps {
                    c.covered = Some(!c.empty && rng.random_bool(0.85));
                }
                cells.push(c);
            }
        }
        tr.records.push(IntervalRecord { t, p, d1, cells });
    }
    tr
}

#[test]
fn global_and_axis_metrics_match_flat_recount() {
    let tr = random_trace(1, 200, 3, 4);
    let (mut hits, mut n, mut wsum, mut wn) = (0.0, 0.0, 0.0, 0.0);
    let mut dim = vec![(0.0, 0.0); 3];
    let mut hor = vec![(0.0, 0.0); 4];
    for t in 0..200 {
        for i in 0..3 {
            for j in 0..4 {
                let c = tr.records[t].cells[i * 4 + j];
                wsum += if c.empty { 0.0 } else { c.hi - c.lo };
                wn += 1.0;
                if let Some(h) = c.covered {
                    let h = f64::from(u8::from(h));
                    hits += h;
                    n += 1.0;
                    dim[i].0 += h;
                    dim[i].1 += 1.0;
                    hor[j].0 += h;
                    hor[j].1 += 1.0;
                }
            }
        }
    }
    assert!((global_coverage(&tr).unwrap() - hits / n).abs() < 1e-15);
    assert!((mean_width(&tr).unwrap() - wsum / wn).abs() < 1e-12);
    let pd: Vec<f64> = dim.iter().map(|(h, n)| h / n).collect();
    let ph: Vec<f64> = hor.iter().map(|(h, n)| h / n).collect();
    assert_eq!(per_dim_coverage(&tr).unwrap(), pd);
    assert_eq!(per_horizon_coverage(&tr).unwrap(), ph);
    assert_eq!(
        min_dim_coverage(&tr).unwrap(),
        pd.iter().copied().fold(1.0, f64::min)
    );
    assert_eq!(
        min_horizon_coverage(&tr).unwrap(),
        ph.iter().copied().fold(1.0, f64::min)
    );
}

#[test]
fn single_dimension_min_equals_global() {
    let tr = random_trace(2, 50, 1, 3);
    assert_eq!(
        min_dim_coverage(&tr).unwrap(),
        global_coverage(&tr).unwrap()
    );
}

#[test]
fn local_coverage_matches_block_recount() {
    let tr = random_trace(3, 1000, 2, 2);
    let local = local_coverage(&tr, 100, WindowMode::Disjoint).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let s: Vec<bool> = tr
                .records
                .iter()
                .filter_map(|r| r.cells[i * 2 + j].covered)
                .collect();
            let expect: Vec<f64> = (0..s.len() / 100)
                .map(|b| s[b * 100..(b + 1) * 100].iter().filter(|&&h| h).count() as f64 / 100.0)
                .collect();
            assert_eq!(local[i * 2 + j], expect);
        }
    }
    assert!(local_coverage(&tr, 5000, WindowMode::Disjoint)
        .unwrap()
        .iter()
        .all(Vec::is_empty));
}

#[test]
fn sigma_fit_matches_direct_rms() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..5.0)).collect();
    let b: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..5.0)).collect();
    let mut ss = 0.0;
    for k in 0..500 {
        ss += (a[k] - b[k]).powi(2);
    }
    assert!((sigma_fit(&a, &b).unwrap() - (ss / 500.0).sqrt()).abs() < 1e-12);
    let shifted: Vec<f64> = a.iter().map(|v| v - 2.0).collect();
    assert!((sigma_fit(&a, &shifted).unwrap() - 2.0).abs() < 1e-12);
}

fn relabel(tr: &Trace, perm_p: &[usize], perm_d: &[usize]) -> Trace {
    let mut out = Trace::new(tr.p, tr.d1);
    for r in &tr.records {
        let mut cells = r.cells.clone();
        for i in 0..tr.p {
            for j in 0..tr.d1 {
                cells[perm_p[i] * tr.d1 + perm_d[j]] = *r.cell(i, j);
            }
        }
        out.records.push(IntervalRecord { cells, ..r.clone() });
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coverage_is_weighted_mean_of_axis_coverages(seed in 0u64..10_000) {
        let tr = random_trace(seed, 120, 3, 2);
        let r = MetricsReport::compute(&tr, 0.1, 20, WindowMode::Disjoint).unwrap();
        let dim_n: Vec<f64> = (0..3)
            .map(|i| (0..2).map(|j| tr.resolved_series(i, j).len() as f64).sum())
            .collect();
        let hor_n: Vec<f64> = (0..2)
            .map(|j| (0..3).map(|i| tr.resolved_series(i, j).len() as f64).sum())
            .collect();
        let total: f64 = dim_n.iter().sum();
        let via_dim: f64 = r.per_dim_cov.iter().zip(&dim_n).map(|(c, n)| c * n).sum::<f64>() / total;
        let via_hor: f64 = r.per_horizon_cov.iter().zip(&hor_n).map(|(c, n)| c * n).sum::<f64>() / total;
        prop_assert!((via_dim - r.cov).abs() < 1e-12);
        prop_assert!((via_hor - r.cov).abs() < 1e-12);
        prop_assert!(r.min_d <= r.cov + 1e-15 && r.min_t <= r.cov + 1e-15);
        if let Some(m) = r.approx_mace {
            prop_assert!((0.0..=0.9).contains(&m));
        }
    }

    #[test]
    fn mace_is_invariant_under_relabeling(seed in 0u64..10_000) {
        let tr = random_trace(seed, 300, 3, 2);
        let moved = relabel(&tr, &[2, 0, 1], &[1, 0]);
        let a = MetricsReport::compute(&tr, 0.1, 50, WindowMode::Disjoint).unwrap();
        let b = MetricsReport::compute(&moved, 0.1, 50, WindowMode::Disjoint).unwrap();
        prop_assert!((a.approx_mace.unwrap() - b.approx_mace.unwrap()).abs() < 1e-12);
        prop_assert_eq!(a.cov, b.cov);
    }

    #[test]
    fn reports_are_pure(seed in 0u64..10_000) {
        let tr = random_trace(seed, 150, 2, 2);
        let a = MetricsReport::compute(&tr, 0.1, 25, WindowMode::Sliding).unwrap();
        let b = MetricsReport::compute(&tr.clone(), 0.1, 25, WindowMode::Sliding).unwrap();
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn mace_of_constant_target_windows_is_zero(n in 1usize..50) {
        prop_assert_eq!(approx_mace(&vec![0.9; n], 0.1), Some(0.0));
    }
}
