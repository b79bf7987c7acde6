//! Versioned JSON model document. Weights are flat row-major arrays.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{AutoencoderModel, Layer, Network, TrainConfig, HIDDEN_FACTOR};
use crate::dataset::NormalizationParams;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub node_id: String,
    #[serde(rename = "F")]
    pub features: usize,
    pub hidden: usize,
    pub hyper: TrainConfig,
    pub norm: NormalizationParams,
    pub train_mae: f64,
    pub encoder: LayerFile,
    pub decoder: LayerFile,
}

fn layer_file(layer: &Layer) -> LayerFile {
    LayerFile {
        weights: layer.weights.iter().copied().collect(),
        biases: layer.biases.to_vec(),
    }
}

fn layer_from_file(name: &str, lf: &LayerFile, outputs: usize, inputs: usize) -> Result<Layer> {
    if lf.weights.len() != outputs * inputs || lf.biases.len() != outputs {
        return Err(Error::ModelFormat(format!(
            "{name}: expected {outputs}x{inputs} weights and {outputs} biases, \
             found {} weights and {} biases",
            lf.weights.len(),
            lf.biases.len()
        )));
    }
    if !lf.weights.iter().chain(&lf.biases).all(|v| v.is_finite()) {
        return Err(Error::ModelFormat(format!("{name}: non-finite parameter")));
    }
    Ok(Layer {
        weights: Array2::from_shape_vec((outputs, inputs), lf.weights.clone())
            .expect("length checked"),
        biases: Array1::from(lf.biases.clone()),
    })
}

impl From<&AutoencoderModel> for ModelFile {
    fn from(m: &AutoencoderModel) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            node_id: m.node_id.clone(),
            features: m.network.features(),
            hidden: m.network.hidden_width(),
            hyper: m.hyper.clone(),
            norm: m.norm.clone(),
            train_mae: m.train_mae,
            encoder: layer_file(&m.network.encoder),
            decoder: layer_file(&m.network.decoder),
        }
    }
}

impl TryFrom<ModelFile> for AutoencoderModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format_version {}",
                f.format_version
            )));
        }
        if f.features == 0 || f.hidden != HIDDEN_FACTOR * f.features {
            return Err(Error::ModelFormat(format!(
                "hidden width {} must be {HIDDEN_FACTOR} x F (F = {})",
                f.hidden, f.features
            )));
        }
        f.norm.check_width(f.features)?;
        if !(f.train_mae.is_finite() && f.train_mae >= 0.0) {
            return Err(Error::ModelFormat(format!(
                "invalid train_mae {}",
                f.train_mae
            )));
        }
        let network = Network {
            encoder: layer_from_file("encoder", &f.encoder, f.hidden, f.features)?,
            decoder: layer_from_file("decoder", &f.decoder, f.features, f.hidden)?,
        };
        Ok(AutoencoderModel {
            node_id: f.node_id,
            network,
            hyper: f.hyper,
            norm: f.norm,
            train_mae: f.train_mae,
        })
    }
}

impl AutoencoderModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
