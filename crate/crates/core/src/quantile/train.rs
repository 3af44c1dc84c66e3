use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{Dense, NetConfig, QuantileNet};
use super::pinball::pinball_unchecked;
use crate::error::{Error, Result};
use crate::panel::{ErrorTensor, PanelDataset};

const MIN_ROWS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Per-epoch losses are means of the elementwise pinball loss. Epoch 0 is
/// the untrained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub train_rows: usize,
    pub val_rows: usize,
    pub adam: AdamParams,
}

impl TrainLog {
    pub fn initial_val_loss(&self) -> f64 {
        self.epochs[0].val_loss
    }

    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch].val_loss
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# adam lr={} beta1={} beta2={} eps={} best_epoch={}\nepoch,train_loss,val_loss\n",
            self.adam.learning_rate,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.eps,
            self.best_epoch
        );
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{}", e.epoch, e.train_loss, e.val_loss);
        }
        out
    }
}

struct Adam {
    params: AdamParams,
    step: i32,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl Adam {
    fn new(params: AdamParams, net: &QuantileNet) -> Self {
        let zeros = || {
            net.layers()
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect::<Vec<_>>()
        };
        Self {
            params,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    fn apply(&mut self, net: &mut QuantileNet, grads: &[Dense]) {
        self.step += 1;
        let AdamParams {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.params;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for (k, layer) in net.layers_mut().iter_mut().enumerate() {
            update(
                &mut layer.weights,
                &grads[k].weights,
                &mut self.m[k].weights,
                &mut self.v[k].weights,
            );
            update(
                &mut layer.bias,
                &grads[k].bias,
                &mut self.m[k].bias,
                &mut self.v[k].bias,
            );
        }
    }
}

/// Fits the quantile network on the `T x p` rows `(features[t][i], errors[t][i])`.
pub fn train(
    ds: &PanelDataset,
    errors: &ErrorTensor,
    config: NetConfig,
) -> Result<(QuantileNet, TrainLog)> {
    let dims = ds.dims();
    if errors.tensor().shape() != [dims.steps, dims.p, dims.d1] {
        return Err(Error::dim(format!(
            "errors shape {:?} does not match panel [{}, {}, {}]",
            errors.tensor().shape(),
            dims.steps,
            dims.p,
            dims.d1
        )));
    }
    if config.input_dim != dims.d2 || config.output_dim != dims.d1 {
        return Err(Error::dim(format!(
            "net maps {} -> {}, panel has d2={} d1={}",
            config.input_dim, config.output_dim, dims.d2, dims.d1
        )));
    }
    train_rows(ds.features().data(), errors.tensor().data(), config)
}

/// Fits on flat row-major buffers: `features` holds rows of `input_dim`,
/// `errors` rows of `output_dim`.
pub fn train_rows(
    features: &[f64],
    errors: &[f64],
    config: NetConfig,
) -> Result<(QuantileNet, TrainLog)> {
    config.validate()?;
    let (d2, d1) = (config.input_dim, config.output_dim);
    if features.len() % d2 != 0 || errors.len() % d1 != 0 {
        return Err(Error::dim("feature/error buffers are not whole rows"));
    }
    let rows = features.len() / d2;
    if errors.len() / d1 != rows {
        return Err(Error::dim(format!(
            "{rows} feature rows but {} error rows",
            errors.len() / d1
        )));
    }
    if rows < MIN_ROWS {
        return Err(Error::InsufficientData(format!(
            "need at least {MIN_ROWS} rows to train, got {rows}"
        )));
    }
    let z = |r: usize| &features[r * d2..(r + 1) * d2];
    let s = |r: usize| &errors[r * d1..(r + 1) * d1];

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut rng);
    let n_train = ((rows as f64 * config.split_fraction).round() as usize).clamp(1, rows - 1);
    let (train_idx, val_idx) = order.split_at(n_train);
    let mut train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let mut net = QuantileNet::init(config.clone(), &mut rng)?;
    let (mean, std) = column_stats(train_idx.iter().map(|&r| z(r)), d2);
    net.set_feature_norm(mean, std)?;

    let alpha = config.alpha;
    let mean_loss = |net: &QuantileNet, idx: &[usize]| -> Result<f64> {
        let mut total = 0.0;
        for &r in idx {
            let q = net.forward(z(r))?;
            total += q
                .iter()
                .zip(s(r))
                .map(|(q, s)| pinball_unchecked(*s, *q, alpha))
                .sum::<f64>();
        }
        Ok(total / (idx.len() * d1) as f64)
    };

    let adam_params = AdamParams::with_rate(config.learning_rate);
    let mut adam = Adam::new(adam_params, &net);
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        train_loss: mean_loss(&net, &train_idx)?,
        val_loss: mean_loss(&net, &val_idx)?,
    }];
    let mut best = (epochs[0].val_loss, 0usize, net.clone());
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in train_idx.chunks(config.batch_size) {
            let batch: Vec<(&[f64], &[f64])> = chunk.iter().map(|&r| (z(r), s(r))).collect();
            let grads = net.backward(&batch)?;
            epoch_loss += grads.loss * chunk.len() as f64;
            adam.apply(&mut net, &grads.layers);
        }
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / (train_idx.len() * d1) as f64,
            val_loss: mean_loss(&net, &val_idx)?,
        };
        epochs.push(record);
        if record.val_loss < best.0 {
            best = (record.val_loss, epoch, net.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let log = TrainLog {
        epochs,
        best_epoch: best.1,
        train_rows: train_idx.len(),
        val_rows: val_idx.len(),
        adam: adam_params,
    };
    Ok((best.2, log))
}

fn column_stats<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut sum = vec![0.0; width];
    let mut sq = vec![0.0; width];
    for row in rows {
        n += 1;
        for k in 0..width {
            sum[k] += row[k];
            sq[k] += row[k] * row[k];
        }
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|v| v / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / n - m * m).max(0.0).sqrt())
        .collect();
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(d2: usize, d1: usize) -> NetConfig {
        NetConfig {
            hidden_dims: vec![8],
            max_epochs: 5,
            batch_size: 16,
            seed: 5,
            ..NetConfig::new(d2, d1)
        }
    }

    #[test]
    fn too_few_rows() {
        let r = train_rows(&[0.0; 9], &[1.0; 9], small_config(1, 1));
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn same_seed_same_log() {
        let feats: Vec<f64> = (0..200).map(|k| ((k * 37) % 11) as f64 - 5.0).collect();
        let errs: Vec<f64> = (0..100).map(|k| ((k * 13) % 7) as f64).collect();
        let (n1, l1) = train_rows(&feats, &errs, small_config(2, 1)).unwrap();
        let (n2, l2) = train_rows(&feats, &errs, small_config(2, 1)).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(n1, n2);
        assert_eq!(l1.to_csv(), l2.to_csv());
    }

    #[test]
    fn early_stopping_respects_patience() {
        let feats = vec![0.0; 100];
        let errs = vec![1.0; 100];
        let cfg = NetConfig {
            patience: 2,
            max_epochs: 500,
            learning_rate: 0.5,
            ..small_config(1, 1)
        };
        let (_, log) = train_rows(&feats, &errs, cfg).unwrap();
        let last = log.epochs.last().unwrap().epoch;
        assert!(last < 500, "never stopped early");
        assert!(last - log.best_epoch <= 2);
    }
}
