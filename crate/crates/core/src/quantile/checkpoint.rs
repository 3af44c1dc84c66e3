//! Checkpoint bundle: `meta.json` plus `weights.ctsb`.
//!
//! `weights.ctsb` holds back-to-back f64 CTSB records: feature mean,
//! feature std, then `weights [out][in]` and `bias [out]` for each layer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{Dense, NetConfig, QuantileNet};
use crate::error::{Error, Result};
use crate::tensor::{read_tensors, write_tensors, DType, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const WEIGHTS_FILE: &str = "weights.ctsb";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    input_dim: usize,
    output_dim: usize,
    hidden_dims: Vec<usize>,
    alpha: f64,
    config: NetConfig,
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
}

pub fn save(net: &QuantileNet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = net.config().clone();
    let (mean, std) = net.feature_norm();
    let meta = Meta {
        format_version: CHECKPOINT_VERSION,
        input_dim: config.input_dim,
        output_dim: config.output_dim,
        hidden_dims: config.hidden_dims.clone(),
        alpha: config.alpha,
        config,
        feature_mean: mean.to_vec(),
        feature_std: std.to_vec(),
    };
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, text + "\n").map_err(|e| Error::io(meta_path, e))?;

    let mut tensors = vec![
        Tensor::new(vec![mean.len()], mean.to_vec())?,
        Tensor::new(vec![std.len()], std.to_vec())?,
    ];
    for layer in net.layers() {
        tensors.push(Tensor::new(
            vec![layer.outputs, layer.inputs],
            layer.weights.clone(),
        )?);
        tensors.push(Tensor::new(vec![layer.outputs], layer.bias.clone())?);
    }
    let refs: Vec<&Tensor> = tensors.iter().collect();
    write_tensors(dir.join(WEIGHTS_FILE), &refs, DType::F64)
}

pub fn load(dir: impl AsRef<Path>) -> Result<QuantileNet> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", meta_path.display())))?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {} unsupported (expected {CHECKPOINT_VERSION})",
            meta.format_version
        )));
    }
    if meta.config.input_dim != meta.input_dim
        || meta.config.output_dim != meta.output_dim
        || meta.config.hidden_dims != meta.hidden_dims
        || meta.config.alpha != meta.alpha
    {
        return Err(Error::Checkpoint(
            "meta.json fields disagree with its config".into(),
        ));
    }
    let tensors = read_tensors(dir.join(WEIGHTS_FILE)).map_err(|e| match e {
        Error::Io { .. } => e,
        other => Error::Checkpoint(format!("weights: {other}")),
    })?;
    let widths = meta.config.widths();
    let n_layers = widths.len() - 1;
    if tensors.len() != 2 + 2 * n_layers {
        return Err(Error::Checkpoint(format!(
            "expected {} weight tensors, found {}",
            2 + 2 * n_layers,
            tensors.len()
        )));
    }
    let mut it = tensors.into_iter();
    let mean = it.next().expect("counted").into_data();
    let std = it.next().expect("counted").into_data();
    let mut layers = Vec::with_capacity(n_layers);
    for (k, w) in widths.windows(2).enumerate() {
        let weights = it.next().expect("counted");
        let bias = it.next().expect("counted");
        if weights.shape() != [w[1], w[0]] || bias.shape() != [w[1]] {
            return Err(Error::Checkpoint(format!(
                "layer {k}: weight shape {:?} / bias shape {:?} do not match {}x{}",
                weights.shape(),
                bias.shape(),
                w[1],
                w[0]
            )));
        }
        layers.push(Dense {
            inputs: w[0],
            outputs: w[1],
            weights: weights.into_data(),
            bias: bias.into_data(),
        });
    }
    QuantileNet::from_parts(meta.config, layers, mean, std)
        .map_err(|e| Error::Checkpoint(e.to_string()))
}
