use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Activation, Layer, ModelParams};

pub const CHECKPOINT_FORMAT: &str = "gradsup-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    seed: u64,
    layer_sizes: Vec<usize>,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// Writes `params` as JSON. Doubles are printed in shortest round-trip form,
/// so [`load_checkpoint`] restores them bit for bit.
pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        seed: params.seed(),
        layer_sizes: params.layer_sizes(),
        layers: params
            .layers()
            .iter()
            .map(|l| LayerRecord {
                inputs: l.weight.cols(),
                outputs: l.weight.rows(),
                activation: l.activation,
                weight: l.weight.data().to_vec(),
                bias: l.bias.data().to_vec(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bad = |detail: String| Error::Checkpoint { path: path.to_path_buf(), detail };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(bad(format!("unknown format {:?}", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {}", file.version)));
    }
    let layers = file
        .layers
        .into_iter()
        .map(|r| {
            Ok(Layer {
                weight: Tensor::new(r.outputs, r.inputs, r.weight)?,
                bias: Tensor::new(1, r.outputs, r.bias)?,
                activation: r.activation,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| bad(e.to_string()))?;
    let params = ModelParams::from_layers(layers, file.seed).map_err(|e| bad(e.to_string()))?;
    if params.layer_sizes() != file.layer_sizes {
        return Err(bad("layer_sizes disagree with layer shapes".into()));
    }
    Ok(params)
}
