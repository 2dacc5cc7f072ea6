use serde::{Deserialize, Serialize};

use super::NeuralError;
use crate::features::{FeatureKind, FeatureSpec};
use crate::logdata::AnomalyType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Vibration,
    Attitude,
    Compass,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Vibration, ModelKind::Attitude, ModelKind::Compass];

    pub fn feature_spec(self) -> FeatureSpec {
        FeatureSpec::new(match self {
            ModelKind::Vibration => FeatureKind::VibrationXYZ,
            ModelKind::Attitude => FeatureKind::AttitudeDeltas,
            ModelKind::Compass => FeatureKind::CompassThrottleMag,
        })
    }

    pub fn anomaly_type(self) -> AnomalyType {
        match self {
            ModelKind::Vibration => AnomalyType::Vibration,
            ModelKind::Attitude => AnomalyType::Attitude,
            ModelKind::Compass => AnomalyType::CompassInterference,
        }
    }

    pub fn from_anomaly_type(t: AnomalyType) -> Option<ModelKind> {
        match t {
            AnomalyType::Vibration => Some(ModelKind::Vibration),
            AnomalyType::Attitude => Some(ModelKind::Attitude),
            AnomalyType::CompassInterference => Some(ModelKind::Compass),
            AnomalyType::GpsGlitch | AnomalyType::Power => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmLayerSpec {
    pub input_size: usize,
    pub hidden_size: usize,
    pub return_sequences: bool,
}

impl LstmLayerSpec {
    pub fn new(input_size: usize, hidden_size: usize, return_sequences: bool) -> Self {
        Self {
            input_size,
            hidden_size,
            return_sequences,
        }
    }
}

/// How the encoding is fed to the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bridge {
    /// The final encoder hidden state is the decoder input at every timestep.
    RepeatEncoding,
}

/// Per-timestep affine map from the last decoder hidden state to the features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub input_size: usize,
    pub output_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    Mae,
    Mse,
}

impl Loss {
    pub fn as_str(self) -> &'static str {
        match self {
            Loss::Mae => "MAE",
            Loss::Mse => "MSE",
        }
    }
}

/// Penalty on weight matrices (biases are never penalised).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Regularization {
    None,
    L1(f64),
    L2(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub timesteps: usize,
    pub features: usize,
    pub encoder_layers: Vec<LstmLayerSpec>,
    pub bridge: Bridge,
    pub decoder_layers: Vec<LstmLayerSpec>,
    pub output_head: HeadSpec,
    pub loss: Loss,
    pub reg: Regularization,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl ModelSpec {
    /// The published architecture for each detector.
    pub fn preset(kind: ModelKind) -> ModelSpec {
        let l = LstmLayerSpec::new;
        match kind {
            ModelKind::Vibration => ModelSpec {
                kind,
                timesteps: 200,
                features: 3,
                encoder_layers: vec![l(3, 100, true), l(100, 16, false)],
                bridge: Bridge::RepeatEncoding,
                decoder_layers: vec![l(16, 16, true), l(16, 100, true)],
                output_head: HeadSpec {
                    input_size: 100,
                    output_size: 3,
                },
                loss: Loss::Mae,
                reg: Regularization::L2(0.001),
                learning_rate: 0.001,
                batch_size: 200,
            },
            ModelKind::Attitude => ModelSpec {
                kind,
                timesteps: 200,
                features: 3,
                encoder_layers: vec![l(3, 64, false)],
                bridge: Bridge::RepeatEncoding,
                decoder_layers: vec![l(64, 64, true)],
                output_head: HeadSpec {
                    input_size: 64,
                    output_size: 3,
                },
                loss: Loss::Mae,
                reg: Regularization::L1(0.00015),
                learning_rate: 0.001,
                batch_size: 200,
            },
            ModelKind::Compass => ModelSpec {
                kind,
                timesteps: 50,
                features: 3,
                encoder_layers: vec![l(3, 8, false)],
                bridge: Bridge::RepeatEncoding,
                decoder_layers: vec![l(8, 16, true)],
                output_head: HeadSpec {
                    input_size: 16,
                    output_size: 3,
                },
                loss: Loss::Mse,
                reg: Regularization::None,
                learning_rate: 0.001,
                batch_size: 100,
            },
        }
    }

    /// Same topology with `timesteps` replaced and every hidden width halved
    /// (rounded up).
    pub fn reduced(&self, timesteps: usize) -> ModelSpec {
        let half = |n: usize| n.div_ceil(2);
        let mut spec = self.clone();
        spec.timesteps = timesteps;
        let mut input = spec.features;
        for layer in spec.encoder_layers.iter_mut().chain(spec.decoder_layers.iter_mut()) {
            layer.input_size = input;
            layer.hidden_size = half(layer.hidden_size);
            input = layer.hidden_size;
        }
        spec.output_head.input_size = input;
        spec
    }

    pub fn encoding_size(&self) -> usize {
        self.encoder_layers.last().map_or(0, |l| l.hidden_size)
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: String| Err(NeuralError::InvalidSpec(m));
        if self.timesteps == 0 || self.features == 0 || self.batch_size == 0 {
            return bad("timesteps, features and batch_size must be at least 1".into());
        }
        if self.encoder_layers.is_empty() || self.decoder_layers.is_empty() {
            return bad("encoder and decoder need at least one layer".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive".into());
        }
        match self.reg {
            Regularization::L1(f) | Regularization::L2(f) if !(f >= 0.0 && f.is_finite()) => {
                return bad("regularization factor must be non-negative".into());
            }
            _ => {}
        }
        let mut input = self.features;
        let n_enc = self.encoder_layers.len();
        for (i, layer) in self.encoder_layers.iter().enumerate() {
            if layer.input_size != input || layer.hidden_size == 0 {
                return bad(format!("encoder layer {i} does not chain (expects input {input})"));
            }
            if layer.return_sequences != (i + 1 < n_enc) {
                return bad(format!(
                    "encoder layer {i}: only the last encoder layer emits its final state"
                ));
            }
            input = layer.hidden_size;
        }
        for (i, layer) in self.decoder_layers.iter().enumerate() {
            if layer.input_size != input || layer.hidden_size == 0 {
                return bad(format!("decoder layer {i} does not chain (expects input {input})"));
            }
            if !layer.return_sequences {
                return bad(format!("decoder layer {i} must return sequences"));
            }
            input = layer.hidden_size;
        }
        if self.output_head.input_size != input || self.output_head.output_size != self.features {
            return bad("output head does not match decoder width and feature count".into());
        }
        Ok(())
    }
}
