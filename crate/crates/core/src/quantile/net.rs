use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pinball::{check_alpha, pinball_grad, pinball_unchecked};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub alpha: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub split_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl NetConfig {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden_dims: vec![512, 256],
            alpha: 0.1,
            learning_rate: 1e-3,
            max_epochs: 100,
            patience: 5,
            split_fraction: 0.8,
            batch_size: 256,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Parameter(
                "input and output dims must be positive".into(),
            ));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Parameter(
                "hidden_dims must be nonempty with positive widths".into(),
            ));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::Parameter(
                "learning_rate and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.output_dim);
        w
    }
}

/// Affine layer; `weights` is `outputs x inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + b);
        }
    }
}

/// Shared per-variate network: standardized `d2` features, ReLU hidden
/// layers, affine output clamped at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileNet {
    pub(crate) config: NetConfig,
    pub(crate) layers: Vec<Dense>,
    pub(crate) feature_mean: Vec<f64>,
    pub(crate) feature_std: Vec<f64>,
}

/// Gradients with the same layout as [`QuantileNet::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
    /// Mean over the batch of the per-row summed pinball loss.
    pub loss: f64,
}

impl QuantileNet {
    /// Zero weights, identity normalization.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        let layers = widths
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Ok(Self {
            feature_mean: vec![0.0; config.input_dim],
            feature_std: vec![1.0; config.input_dim],
            layers,
            config,
        })
    }

    /// He-uniform weights, zero biases.
    pub fn init<R: Rng>(config: NetConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        for layer in &mut net.layers {
            let limit = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// Assembles a network from explicit parts, checking that shapes chain.
    pub fn from_parts(
        config: NetConfig,
        layers: Vec<Dense>,
        feature_mean: Vec<f64>,
        feature_std: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        if layers.len() != widths.len() - 1 {
            return Err(Error::dim(format!(
                "expected {} layers, got {}",
                widths.len() - 1,
                layers.len()
            )));
        }
        for (k, (layer, w)) in layers.iter().zip(widths.windows(2)).enumerate() {
            if layer.inputs != w[0]
                || layer.outputs != w[1]
                || layer.weights.len() != w[0] * w[1]
                || layer.bias.len() != w[1]
            {
                return Err(Error::dim(format!(
                    "layer {k} has shape {}x{}, expected {}x{}",
                    layer.outputs, layer.inputs, w[1], w[0]
                )));
            }
        }
        if feature_mean.len() != config.input_dim || feature_std.len() != config.input_dim {
            return Err(Error::dim("normalization vectors must match input_dim"));
        }
        if feature_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Validation(
                "feature std entries must be positive".into(),
            ));
        }
        Ok(Self {
            config,
            layers,
            feature_mean,
            feature_std,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn feature_norm(&self) -> (&[f64], &[f64]) {
        (&self.feature_mean, &self.feature_std)
    }

    /// Sets standardization statistics; zero-variance entries become 1.
    pub fn set_feature_norm(&mut self, mean: Vec<f64>, std: Vec<f64>) -> Result<()> {
        if mean.len() != self.config.input_dim || std.len() != self.config.input_dim {
            return Err(Error::dim("normalization vectors must match input_dim"));
        }
        self.feature_mean = mean;
        self.feature_std = std
            .into_iter()
            .map(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 })
            .collect();
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.config.alpha
    }

    /// Message for the caller when the checkpoint was fit for another level.
    pub fn alpha_mismatch(&self, alpha: f64) -> Option<String> {
        (self.config.alpha != alpha).then(|| {
            format!(
                "quantile model was fit at alpha={} but calibration requests alpha={alpha}",
                self.config.alpha
            )
        })
    }

    fn normalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.config.input_dim {
            return Err(Error::dim(format!(
                "feature row has length {}, expected {}",
                z.len(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Predicted error quantiles for one variate's feature row.
    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z)?;
        let mut x = self.normalize(z);
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&x, &mut next);
            if k < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut x, &mut next);
        }
        x.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(x)
    }

    /// Activations of every layer (index 0 is the normalized input); the
    /// last entry holds raw, unclamped outputs.
    fn forward_trace(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(self.normalize(z));
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(acts.last().expect("input pushed"), &mut out);
            if k < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    /// Mean over the batch of `sum_j pinball(s_j, qhat_j)`.
    pub fn batch_loss(&self, batch: &[(&[f64], &[f64])]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        let alpha = self.config.alpha;
        let mut total = 0.0;
        for (z, s) in batch {
            self.check_target(s)?;
            let q = self.forward(z)?;
            total += q
                .iter()
                .zip(s.iter())
                .map(|(q, s)| pinball_unchecked(*s, *q, alpha))
                .sum::<f64>();
        }
        Ok(total / batch.len() as f64)
    }

    fn check_target(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.config.output_dim {
            return Err(Error::dim(format!(
                "error row has length {}, expected {}",
                s.len(),
                self.config.output_dim
            )));
        }
        Ok(())
    }

    /// Gradient of [`batch_loss`](Self::batch_loss) with respect to every
    /// weight and bias. The output clamp at zero is passed through
    /// unchanged (straight-through), so a unit whose raw output went
    /// negative still receives the pinball gradient.
    pub fn backward(&self, batch: &[(&[f64], &[f64])]) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        let alpha = self.config.alpha;
        let mut grads: Vec<Dense> = self
            .layers
            .iter()
            .map(|l| Dense::zeros(l.inputs, l.outputs))
            .collect();
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        let last = self.layers.len() - 1;
        for (z, s) in batch {
            self.check_input(z)?;
            self.check_target(s)?;
            let acts = self.forward_trace(z);
            let raw = &acts[last + 1];
            let mut delta: Vec<f64> = raw
                .iter()
                .zip(s.iter())
                .map(|(r, s)| {
                    let q = r.max(0.0);
                    loss += pinball_unchecked(*s, q, alpha);
                    pinball_grad(*s, q, alpha) * scale
                })
                .collect();
            for k in (0..=last).rev() {
                let layer = &self.layers[k];
                let input = &acts[k];
                let g = &mut grads[k];
                for (o, d) in delta.iter().enumerate() {
                    g.bias[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, x) in row.iter_mut().zip(input) {
                        *gw += d * x;
                    }
                }
                if k == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // ReLU: acts[k] is post-activation, zero where inactive.
                for (p, a) in prev.iter_mut().zip(&acts[k]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(Gradients {
            layers: grads,
            loss: loss * scale,
        })
    }
}
