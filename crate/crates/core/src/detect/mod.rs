//! Autoencoder and rule-based detectors producing scored time spans and
//! log-level verdicts.

mod autoencoder;
mod rules;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use autoencoder::{
    calibrate_threshold, detect_autoencoder, feature_errors, scaled_windows, window_error,
    window_errors,
};
pub use rules::{rule_detect, RuleSpec};

use crate::features::FeatureError;
use crate::logdata::AnomalyType;
use crate::neural::NeuralError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model threshold is not calibrated")]
    ThresholdUnset,
    #[error("log has {len} feature rows, fewer than the window length {timesteps}")]
    TooShort { len: usize, timesteps: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("missing channel: {0}")]
    MissingChannel(String),
    #[error("need at least {needed} aligned samples, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error(transparent)]
    Feature(FeatureError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

impl From<FeatureError> for DetectError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::MissingChannel(c) => DetectError::MissingChannel(c),
            FeatureError::TooShort { len, timesteps } => DetectError::TooShort { len, timesteps },
            other => DetectError::Feature(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Autoencoder,
    Rule,
}

/// A flagged half-open interval `[start_us, end_us)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSpan {
    #[serde(rename = "type")]
    pub anomaly_type: AnomalyType,
    pub start_us: i64,
    pub end_us: i64,
    pub score: f64,
    pub source: Source,
    /// Anomalous windows (autoencoder) or samples (rules) inside the span.
    pub windows: usize,
    /// Requirement of the anomaly type the span evidences, `"R1"` or `"R2"`.
    pub requirement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub spans: Vec<DetectionSpan>,
    pub verdict: bool,
    /// Highest window error, or highest rule exceedance; `0` when nothing
    /// exceeded.
    pub max_score: f64,
}

impl DetectionResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("detections are serializable")
    }
}

/// Log-level decision: true iff the spans hold at least `min_windows`
/// anomalous windows or samples in total.
pub fn classify_log(spans: &[DetectionSpan], min_windows: usize) -> bool {
    assert!(min_windows >= 1, "min_windows must be at least 1");
    spans.iter().map(|s| s.windows).sum::<usize>() >= min_windows
}

/// A flagged unit (window or sample) before merging.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Flag {
    pub start_us: i64,
    pub end_us: i64,
    pub score: f64,
}

/// Merges flags, sorted by start, whose intervals overlap or touch.
pub(crate) fn merge_flags(
    flags: impl IntoIterator<Item = Flag>,
    anomaly_type: AnomalyType,
    source: Source,
    requirement: &str,
) -> Vec<DetectionSpan> {
    let mut spans: Vec<DetectionSpan> = Vec::new();
    for f in flags {
        match spans.last_mut() {
            Some(last) if f.start_us <= last.end_us => {
                last.end_us = last.end_us.max(f.end_us);
                last.score = last.score.max(f.score);
                last.windows += 1;
            }
            _ => spans.push(DetectionSpan {
                anomaly_type,
                start_us: f.start_us,
                end_us: f.end_us,
                score: f.score,
                source,
                windows: 1,
                requirement: requirement.to_string(),
            }),
        }
    }
    spans
}
