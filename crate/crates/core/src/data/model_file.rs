//! JSON model files for [`MicroMlp`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Activation, DenseLayer, MicroMlp};
use crate::math::Temperature;

use super::features::check_version;
use super::{read_text, to_canonical_json, write_text, FORMAT_VERSION};

/// On-disk form. `weights[l]` is row-major: entry `i * n_in + j` is the
/// weight from input `j` to output `i` of layer `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: String,
    pub layer_dims: Vec<usize>,
    pub activation: String,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub temperature: f64,
    /// Free-form record of how the model was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl From<&MicroMlp> for ModelFile {
    fn from(m: &MicroMlp) -> Self {
        Self {
            format_version: FORMAT_VERSION.to_string(),
            layer_dims: m.layer_dims().to_vec(),
            activation: m.activation().name().to_string(),
            weights: m.layers().iter().map(|l| l.weights.clone()).collect(),
            biases: m.layers().iter().map(|l| l.biases.clone()).collect(),
            temperature: m.temperature().get(),
            provenance: None,
        }
    }
}

impl ModelFile {
    pub fn into_model(self) -> Result<MicroMlp> {
        let activation: Activation = self.activation.parse()?;
        if self.layer_dims.len() < 2 || self.weights.len() != self.layer_dims.len() - 1 || self.biases.len() != self.weights.len() {
            return Err(Error::InvalidInput(format!(
                "layer_dims {:?} need {} weight and bias arrays, found {} and {}",
                self.layer_dims,
                self.layer_dims.len().saturating_sub(1),
                self.weights.len(),
                self.biases.len()
            )));
        }
        let layers = self
            .weights
            .into_iter()
            .zip(self.biases)
            .enumerate()
            .map(|(l, (weights, biases))| DenseLayer {
                inputs: self.layer_dims[l],
                outputs: self.layer_dims[l + 1],
                weights,
                biases,
            })
            .collect();
        MicroMlp::new(self.layer_dims, layers, activation, Temperature::new(self.temperature)?)
    }
}

pub fn write_model(m: &MicroMlp, path: &Path) -> Result<()> {
    write_model_file(&ModelFile::from(m), path)
}

pub fn write_model_file(file: &ModelFile, path: &Path) -> Result<()> {
    let value = serde_json::to_value(file).expect("model serializes");
    write_text(path, &to_canonical_json(&value))
}

/// Reads a model file; any parse or consistency failure returns an error
/// and no model.
pub fn read_model(path: &Path) -> Result<MicroMlp> {
    let text = read_text(path)?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::format(path, Some(e.line()), e.to_string()))?;
    check_version(path, &raw)?;
    let file: ModelFile = serde_json::from_value(raw).map_err(|e| Error::format(path, None, e.to_string()))?;
    file.into_model().map_err(|e| Error::format(path, None, e.to_string()))
}
