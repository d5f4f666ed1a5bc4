//! On-disk model artifacts: a JSON manifest, raw little-endian θ, and the
//! vocabulary when the features came from text.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_atomic, write_json_atomic};
use crate::ingest::{load_dataset, DataSource, LoadedData, Vocabulary};
use crate::metrics::Metrics;
use crate::model::{Hyperparams, TrainedModel};

pub const MANIFEST_FILE: &str = "model.json";
pub const THETA_FILE: &str = "theta.bin";
pub const VOCAB_FILE: &str = "vocab.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub name: String,
    pub data: DataSource,
    pub hyper: Hyperparams,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub theta_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary_file: Option<String>,
    pub train_metrics: Metrics,
    pub test_metrics: Metrics,
}

pub fn encode_theta(theta: &[f64]) -> Vec<u8> {
    theta.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_theta(path: &Path, bytes: &[u8], dim: usize) -> Result<Vec<f64>> {
    if bytes.len() != dim * 8 {
        return Err(Error::Input(format!(
            "{} holds {} bytes, expected {} for dimension {dim}",
            path.display(),
            bytes.len(),
            dim * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes the artifact files into `dir`. Output is a pure function of the
/// inputs, so retraining the same config reproduces it byte for byte.
pub fn save_model(
    dir: &Path,
    manifest: &ModelManifest,
    model: &TrainedModel,
    vocabulary: Option<&Vocabulary>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(&manifest.theta_file), &encode_theta(&model.theta))?;
    if let (Some(file), Some(vocab)) = (&manifest.vocabulary_file, vocabulary) {
        write_json_atomic(&dir.join(file), vocab)?;
    }
    write_json_atomic(&dir.join(MANIFEST_FILE), manifest)
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub manifest: ModelManifest,
    pub model: TrainedModel,
}

impl LoadedModel {
    /// Re-materializes the dataset the model was trained on and checks it
    /// still has the recorded shape.
    pub fn load_data(&self) -> Result<LoadedData> {
        let data = load_dataset(&self.manifest.data)?;
        let (dim, n_train, n_test) = (data.splits.dim(), data.splits.train.len(), data.splits.test.len());
        if (dim, n_train) != (self.manifest.dim, self.manifest.n_train) || n_test != self.manifest.n_test {
            return Err(Error::Input(format!(
                "dataset no longer matches the model: expected d = {}, {} train / {} test, found d = {dim}, {n_train} / {n_test}",
                self.manifest.dim, self.manifest.n_train, self.manifest.n_test
            )));
        }
        Ok(data)
    }
}

pub fn load_model(dir: &Path) -> Result<LoadedModel> {
    let manifest: ModelManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Input(format!(
            "unsupported model format version {}",
            manifest.format_version
        )));
    }
    let theta_path = dir.join(&manifest.theta_file);
    let bytes = fs::read(&theta_path).map_err(|e| Error::io(&theta_path, e))?;
    let theta = decode_theta(&theta_path, &bytes, manifest.dim)?;
    let model = TrainedModel {
        theta,
        hyper: manifest.hyper,
        final_grad_norm: manifest.final_grad_norm,
        iterations: manifest.iterations,
    };
    Ok(LoadedModel { manifest, model })
}

pub fn manifest_for(
    name: &str,
    data: &DataSource,
    loaded: &LoadedData,
    model: &TrainedModel,
    train_metrics: Metrics,
    test_metrics: Metrics,
) -> ModelManifest {
    ModelManifest {
        format_version: FORMAT_VERSION,
        name: name.to_string(),
        data: data.clone(),
        hyper: model.hyper,
        dim: model.dim(),
        n_train: loaded.splits.train.len(),
        n_test: loaded.splits.test.len(),
        iterations: model.iterations,
        final_grad_norm: model.final_grad_norm,
        theta_file: THETA_FILE.to_string(),
        vocabulary_file: loaded.vocabulary.as_ref().map(|_| VOCAB_FILE.to_string()),
        train_metrics,
        test_metrics,
    }
}
