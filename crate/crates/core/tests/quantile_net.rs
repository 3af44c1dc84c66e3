use conformal_ts::panel::compute_errors;
use conformal_ts::quantile::{self, pinball_loss, train, train_rows, NetConfig, QuantileNet};
use conformal_ts::synth::{generate, OracleConfig, Regime};
use conformal_ts::{Error, PanelDims};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn random_net(seed: u64, d2: usize, d1: usize, hidden: Vec<usize>) -> QuantileNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetConfig {
        hidden_dims: hidden,
        ..NetConfig::new(d2, d1)
    };
    let mut net = QuantileNet::init(cfg, &mut rng).unwrap();
    for l in net.layers_mut() {
        for b in &mut l.bias {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let mean = (0..d2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let std = (0..d2).map(|_| rng.random_range(0.5..2.0)).collect();
    net.set_feature_norm(mean, std).unwrap();
    net
}

/// Straight-line reference forward pass.
fn reference_forward(net: &QuantileNet, z: &[f64]) -> Vec<f64> {
    reference_raw(net, z)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect()
}

/// Reference output before the nonnegativity clamp.
fn reference_raw(net: &QuantileNet, z: &[f64]) -> Vec<f64> {
    let (mean, std) = net.feature_norm();
    let mut x: Vec<f64> = (0..z.len()).map(|k| (z[k] - mean[k]) / std[k]).collect();
    let n = net.layers().len();
    for (k, l) in net.layers().iter().enumerate() {
        let mut y = Vec::with_capacity(l.outputs);
        for o in 0..l.outputs {
            let mut acc = l.bias[o];
            for i in 0..l.inputs {
                acc += l.weights[o * l.inputs + i] * x[i];
            }
            y.push(if k + 1 < n { acc.max(0.0) } else { acc });
        }
        x = y;
    }
    x
}

#[test]
fn forward_matches_reference_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..10 {
        let net = random_net(seed, 5, 3, vec![7, 4]);
        for _ in 0..20 {
            let z: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = net.forward(&z).unwrap();
            let b = reference_forward(&net, &z);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
        }
    }
}

#[test]
fn forward_rejects_wrong_length() {
    let net = random_net(0, 3, 2, vec![4]);
    assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Dimension(_))));
}

/// Loss evaluated through the reference forward pass.
fn reference_loss(net: &QuantileNet, batch: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let alpha = net.alpha();
    batch
        .iter()
        .map(|(z, s)| {
            reference_forward(net, z)
                .iter()
                .zip(s)
                .map(|(q, s)| pinball_loss(*s, *q, alpha).unwrap())
                .sum::<f64>()
        })
        .sum::<f64>()
        / batch.len() as f64
}

#[test]
fn backward_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-5;
    let mut checked = 0;
    for seed in 0..40u64 {
        let mut net = random_net(100 + seed, 3, 2, vec![6, 5]);
        // Positive output biases keep the clamp inactive at these points.
        let last = net.layers().len() - 1;
        net.layers_mut()[last].bias = vec![1.5, 2.0];
        let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..3)
            .map(|_| {
                (
                    (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    (0..2).map(|_| rng.random_range(0.0..4.0)).collect(),
                )
            })
            .collect();
        let refs: Vec<(&[f64], &[f64])> = batch
            .iter()
            .map(|(z, s)| (z.as_slice(), s.as_slice()))
            .collect();
        let g = net.backward(&refs).unwrap();
        assert!((g.loss - reference_loss(&net, &batch)).abs() < 1e-12);
        // The clamp is flat below zero; compare only where it is inactive.
        let mut ok = batch
            .iter()
            .all(|(z, _)| reference_raw(&net, z).iter().all(|&v| v > 1e-3));
        let mut errs = Vec::new();
        for k in 0..net.layers().len() {
            let nw = net.layers()[k].weights.len();
            for idx in 0..nw + net.layers()[k].bias.len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                {
                    let (lp, lm) = (&mut plus.layers_mut()[k], &mut minus.layers_mut()[k]);
                    if idx < nw {
                        lp.weights[idx] += h;
                        lm.weights[idx] -= h;
                    } else {
                        lp.bias[idx - nw] += h;
                        lm.bias[idx - nw] -= h;
                    }
                }
                let fd =
                    (reference_loss(&plus, &batch) - reference_loss(&minus, &batch)) / (2.0 * h);
                let an = if idx < nw {
                    g.layers[k].weights[idx]
                } else {
                    g.layers[k].bias[idx - nw]
                };
                errs.push((an - fd).abs() / an.abs().max(fd.abs()).max(1e-8));
                // Points where a perturbation crosses a kink are skipped below.
                ok &= (reference_loss(&plus, &batch) + reference_loss(&minus, &batch)
                    - 2.0 * reference_loss(&net, &batch))
                .abs()
                    < 1e-9;
            }
        }
        if ok {
            checked += 1;
            let worst = errs.into_iter().fold(0.0, f64::max);
            assert!(worst < 1e-4, "net {seed}: relative error {worst}");
        }
    }
    assert!(checked >= 20, "only {checked} kink-free nets");
}

#[test]
fn constant_errors_are_learned() {
    let rows = 400;
    let features = vec![0.5; rows * 2];
    let errors = vec![3.0; rows];
    let cfg = NetConfig {
        hidden_dims: vec![8],
        learning_rate: 0.05,
        max_epochs: 200,
        patience: 20,
        batch_size: 32,
        ..NetConfig::new(2, 1)
    };
    let (net, _) = train_rows(&features, &errors, cfg).unwrap();
    let q = net.forward(&[0.5, 0.5]).unwrap()[0];
    assert!((q - 3.0).abs() < 0.1, "learned {q}");
}

fn hetero_fit(seed: u64) -> (QuantileNet, quantile::TrainLog) {
    let dims = PanelDims::new(600, 3, 2, 4).unwrap();
    let panel = generate(&OracleConfig::new(dims, Regime::Heteroscedastic, 21)).unwrap();
    let errors = compute_errors(&panel.dataset).unwrap();
    let cfg = NetConfig {
        hidden_dims: vec![16, 8],
        max_epochs: 30,
        seed,
        ..NetConfig::new(4, 2)
    };
    train(&panel.dataset, &errors, cfg).unwrap()
}

#[test]
fn heteroscedastic_training_lowers_held_out_loss() {
    let (_, log) = hetero_fit(5);
    assert!(log.best_val_loss() < log.initial_val_loss());
    assert_eq!(log.train_rows + log.val_rows, 1800);
    assert_eq!(log.train_rows, 1440);
}

#[test]
fn training_is_a_pure_function_of_seed() {
    let dir = tempfile::tempdir().unwrap();
    let digest = |seed: u64, name: &str| {
        let (net, log) = hetero_fit(seed);
        let p = dir.path().join(name);
        quantile::save(&net, &p).unwrap();
        let mut h = Sha256::new();
        h.update(std::fs::read(p.join(quantile::WEIGHTS_FILE)).unwrap());
        h.update(std::fs::read(p.join(quantile::META_FILE)).unwrap());
        h.update(log.to_csv().as_bytes());
        h.finalize()
    };
    assert_eq!(digest(9, "a"), digest(9, "b"));
    assert_ne!(digest(9, "a"), digest(10, "c"));
}

proptest! {
    #[test]
    fn outputs_are_nonnegative(seed in 0u64..1000, z in prop::collection::vec(-10.0f64..10.0, 3)) {
        let net = random_net(seed, 3, 4, vec![5]);
        prop_assert!(net.forward(&z).unwrap().iter().all(|&q| q >= 0.0));
    }
}
