//! LSTM autoencoder engine: model specs and presets, batched forward and
//! backward passes, Adam, the training loop, gradient checking and model
//! files.

mod adam;
mod gradcheck;
mod io;
mod lstm;
mod model;
mod params;
mod spec;
mod train;

use ndarray::{s, ArrayView3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, adam_update, AdamState, BETA1, BETA2, EPSILON};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckReport};
pub use io::{load_model, save_model, MODEL_FILE_VERSION};
pub use model::{data_loss, forward, forward_trace, loss_and_gradients, regularization, sample_errors, Trace};
pub use params::{DenseParams, LstmParams, StoredTensor, Tensor, TensorMut, Weights};
pub use spec::{Bridge, HeadSpec, Loss, LstmLayerSpec, ModelKind, ModelSpec, Regularization};
pub use train::{evaluate_loss, train};

use crate::features::{FeatureSpec, NormParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("{}", match .epoch { Some(e) => format!("loss diverged at epoch {e}"), None => "loss is not finite".to_string() })]
    NonFiniteLoss { epoch: Option<usize> },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training parameter: {0}")]
    InvalidParameter(String),
    #[error("bad model file: {0}")]
    BadJson(String),
    #[error("unsupported model file version `{found}` (expected `{expected}`)")]
    VersionMismatch { found: String, expected: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Full-dataset training loss before the first update.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochLoss>,
}

/// A trained autoencoder together with everything needed to score raw
/// feature windows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub features: FeatureSpec,
    pub weights: Weights,
    pub norm: Option<NormParams>,
    pub threshold: Option<f64>,
    pub history: TrainingHistory,
}

/// Windows scored per forward pass. Scores do not depend on it.
pub const SCORE_BATCH: usize = 64;

impl TrainedModel {
    /// Per-window reconstruction error of windows that are already scaled.
    pub fn window_errors(&self, windows: ArrayView3<'_, f64>) -> Result<Vec<f64>, NeuralError> {
        let n = windows.len_of(Axis(0));
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(SCORE_BATCH) {
            let end = (start + SCORE_BATCH).min(n);
            let trace = forward_trace(&self.spec, &self.weights, windows.slice(s![start..end, .., ..]))?;
            out.extend(sample_errors(self.spec.loss, &trace));
        }
        Ok(out)
    }

    /// Mean error per feature and window, `windows × features`.
    pub fn feature_errors(&self, windows: ArrayView3<'_, f64>) -> Result<ndarray::Array2<f64>, NeuralError> {
        let recon = forward(&self.spec, &self.weights, windows)?;
        let diff = &recon - &windows;
        let per = diff.mapv(|d| match self.spec.loss {
            Loss::Mae => d.abs(),
            Loss::Mse => d * d,
        });
        Ok(per.mean_axis(Axis(1)).expect("timesteps >= 1"))
    }
}
