use serde::{Deserialize, Serialize};

use super::params::{StoredTensor, Weights};
use super::spec::ModelSpec;
use super::{NeuralError, TrainedModel, TrainingHistory};
use crate::features::{FeatureSpec, NormParams};

pub const MODEL_FILE_VERSION: &str = "1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    spec: ModelSpec,
    features: FeatureSpec,
    norm: Option<NormParams>,
    threshold: Option<f64>,
    weights: Vec<StoredTensor>,
    history: TrainingHistory,
}

pub fn save_model(model: &TrainedModel) -> String {
    let file = ModelFile {
        version: MODEL_FILE_VERSION.to_string(),
        spec: model.spec.clone(),
        features: model.features,
        norm: model.norm.clone(),
        threshold: model.threshold,
        weights: model
            .weights
            .tensors()
            .into_iter()
            .map(|t| StoredTensor {
                name: t.name,
                shape: t.shape,
                data: t.data.to_vec(),
            })
            .collect(),
        history: model.history.clone(),
    };
    serde_json::to_string_pretty(&file).expect("model is serializable")
}

pub fn load_model(text: &str) -> Result<TrainedModel, NeuralError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| NeuralError::BadJson(e.to_string()))?;
    match value.get("version").and_then(|v| v.as_str()) {
        Some(MODEL_FILE_VERSION) => {}
        Some(other) => {
            return Err(NeuralError::VersionMismatch {
                found: other.to_string(),
                expected: MODEL_FILE_VERSION.to_string(),
            })
        }
        None => return Err(NeuralError::BadJson("missing string field `version`".into())),
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| NeuralError::BadJson(e.to_string()))?;
    file.spec.validate()?;

    let mut weights = Weights::zeros(&file.spec);
    let mut slots = weights.tensors_mut();
    if slots.len() != file.weights.len() {
        return Err(NeuralError::ShapeMismatch(format!(
            "model has {} tensors, file has {}",
            slots.len(),
            file.weights.len()
        )));
    }
    for (slot, stored) in slots.iter_mut().zip(&file.weights) {
        if slot.name != stored.name || slot.shape != stored.shape || slot.data.len() != stored.data.len() {
            return Err(NeuralError::ShapeMismatch(format!(
                "tensor `{}` {:?} does not fit `{}` {:?}",
                stored.name, stored.shape, slot.name, slot.shape
            )));
        }
        slot.data.copy_from_slice(&stored.data);
    }
    drop(slots);
    if let Some(norm) = &file.norm {
        if norm.features() != file.spec.features {
            return Err(NeuralError::ShapeMismatch(
                "normalization does not match feature count".into(),
            ));
        }
    }

    Ok(TrainedModel {
        spec: file.spec,
        features: file.features,
        weights,
        norm: file.norm,
        threshold: file.threshold,
        history: file.history,
    })
}
