//! Corpus-level workflows: load a directory of logs, train and calibrate a
//! detector on its anomaly-free logs, and score every log against the
//! annotations.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::detect::{classify_log, detect_autoencoder, rule_detect, DetectError, DetectionResult, RuleSpec};
use crate::evaluation::{evaluate, EvalError, EvalReport};
use crate::features::{build_dataset, FeatureError, WindowedDataset};
use crate::logdata::{span_overlaps, AnnotationSpan, AnomalyType, FlightLog};
use crate::logparser::{load_annotations, parse_log, AnnotationError};
use crate::neural::{train, ModelKind, ModelSpec, NeuralError, TrainedModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    BadLog { path: PathBuf, reason: String },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("no anomaly-free logs to train on")]
    NoTrainingLogs,
    #[error("no log directory at {0}")]
    MissingLogs(PathBuf),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses every `*.log` file in `dir` in file-name order; the file stem is
/// the log id. Unparseable lines are skipped with a warning.
pub fn load_logs(dir: &Path) -> Result<Vec<FlightLog>, PipelineError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "log"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_log(p, false)).collect()
}

pub fn load_log(path: &Path, strict: bool) -> Result<FlightLog, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (log, report) = parse_log(&id, &text, strict).map_err(|e| PipelineError::BadLog {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if report.skipped_lines > 0 {
        warn!("{}: skipped {} malformed lines", path.display(), report.skipped_lines);
    }
    Ok(log)
}

/// A corpus directory holds logs either in `logs/` or directly.
pub fn corpus_log_dir(dir: &Path) -> Result<PathBuf, PipelineError> {
    let nested = dir.join("logs");
    if nested.is_dir() {
        Ok(nested)
    } else if dir.is_dir() {
        Ok(dir.to_path_buf())
    } else {
        Err(PipelineError::MissingLogs(dir.to_path_buf()))
    }
}

pub fn load_annotation_file(path: &Path) -> Result<Vec<AnnotationSpan>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(load_annotations(&text)?)
}

/// True iff `log` carries an annotation of `anomaly_type` overlapping its
/// recorded time range.
pub fn is_annotated(log: &FlightLog, annotations: &[AnnotationSpan], anomaly_type: AnomalyType) -> bool {
    let Some((first, last)) = log.time_range() else {
        return false;
    };
    annotations
        .iter()
        .any(|a| a.log_id == log.log_id && a.anomaly_type == anomaly_type && span_overlaps(a, first, last + 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub spec: ModelSpec,
    pub epochs: usize,
    pub stride: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn preset(kind: ModelKind, epochs: usize, stride: usize, seed: u64) -> Self {
        Self {
            spec: ModelSpec::preset(kind),
            epochs,
            stride,
            val_fraction: 0.2,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub training_logs: Vec<String>,
    pub train_windows: usize,
    pub val_windows: usize,
    pub threshold: f64,
}

/// Trains on the logs without annotations of the model's anomaly type and
/// calibrates the threshold on all of their windows.
pub fn train_detector(
    logs: &[FlightLog],
    annotations: &[AnnotationSpan],
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainSummary), PipelineError> {
    let kind = config.spec.kind;
    let normal: Vec<FlightLog> = logs
        .iter()
        .filter(|l| !is_annotated(l, annotations, kind.anomaly_type()))
        .cloned()
        .collect();
    if normal.is_empty() {
        return Err(PipelineError::NoTrainingLogs);
    }
    info!("training {kind:?} detector on {} of {} logs", normal.len(), logs.len());
    let (train_set, val_set) = build_dataset(
        &normal,
        kind.feature_spec(),
        config.spec.timesteps,
        config.stride,
        config.val_fraction,
        config.seed,
    )?;
    let mut model = train(&config.spec, &train_set, &val_set, config.epochs, config.seed)?;
    let calibration = if val_set.is_empty() {
        train_set.clone()
    } else {
        WindowedDataset::concat(&[&train_set, &val_set])?
    };
    let threshold = crate::detect::calibrate_threshold(&mut model, &calibration)?;
    info!("calibrated threshold {threshold:.6}");
    let mut training_logs: Vec<String> = calibration.provenance.iter().map(|p| p.log_id.clone()).collect();
    training_logs.sort();
    training_logs.dedup();
    Ok((
        model,
        TrainSummary {
            training_logs,
            train_windows: train_set.len(),
            val_windows: val_set.len(),
            threshold,
        },
    ))
}

/// Runs every default rule for `anomaly_type` and pools their spans.
pub fn rule_baseline(log: &FlightLog, anomaly_type: AnomalyType) -> Result<DetectionResult, DetectError> {
    let mut spans = Vec::new();
    let mut max_score: f64 = 0.0;
    for rule in RuleSpec::for_type(anomaly_type) {
        let r = rule_detect(log, &rule)?;
        max_score = max_score.max(r.max_score);
        spans.extend(r.spans);
    }
    spans.sort_by_key(|s| (s.start_us, s.end_us));
    Ok(DetectionResult {
        verdict: !spans.is_empty(),
        spans,
        max_score,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub anomalous: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogOutcome {
    pub log: String,
    pub label: bool,
    pub lstm: Verdict,
    pub rules: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusEvaluation {
    #[serde(rename = "type")]
    pub anomaly_type: AnomalyType,
    pub lstm: EvalReport,
    pub rules: Option<EvalReport>,
    pub logs: Vec<LogOutcome>,
}

impl CorpusEvaluation {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("evaluation serializes")
    }

    /// Precision/Recall/Accuracy/F1 table with an LSTM column and, when
    /// available, a Rule column.
    pub fn table(&self) -> String {
        let mut cols = vec![("LSTM", &self.lstm)];
        if let Some(r) = &self.rules {
            cols.push(("Rule", r));
        }
        crate::evaluation::render_table(&cols)
    }
}

/// Log-level evaluation of `model` (and optionally the rule baseline)
/// against annotations of the model's anomaly type.
pub fn evaluate_corpus(
    model: &TrainedModel,
    logs: &[FlightLog],
    annotations: &[AnnotationSpan],
    stride: usize,
    min_windows: usize,
    with_rules: bool,
) -> Result<CorpusEvaluation, PipelineError> {
    let anomaly_type = model.spec.kind.anomaly_type();
    let mut outcomes = Vec::with_capacity(logs.len());
    for log in logs {
        let det = detect_autoencoder(model, log, &model.features, stride)?;
        let rules = if with_rules {
            let r = rule_baseline(log, anomaly_type)?;
            Some(Verdict {
                anomalous: r.verdict,
                score: r.max_score,
            })
        } else {
            None
        };
        outcomes.push(LogOutcome {
            log: log.log_id.clone(),
            label: is_annotated(log, annotations, anomaly_type),
            lstm: Verdict {
                anomalous: !det.spans.is_empty() && classify_log(&det.spans, min_windows),
                score: det.max_score,
            },
            rules,
        });
    }
    let labels: Vec<bool> = outcomes.iter().map(|o| o.label).collect();
    let report = |pick: &dyn Fn(&LogOutcome) -> &Verdict| -> Result<EvalReport, EvalError> {
        let preds: Vec<bool> = outcomes.iter().map(|o| pick(o).anomalous).collect();
        let scores: Vec<f64> = outcomes.iter().map(|o| pick(o).score).collect();
        evaluate(&preds, &scores, &labels)
    };
    let lstm = report(&|o| &o.lstm)?;
    let rules = if with_rules {
        Some(report(&|o| o.rules.as_ref().expect("rules scored"))?)
    } else {
        None
    };
    Ok(CorpusEvaluation {
        anomaly_type,
        lstm,
        rules,
        logs: outcomes,
    })
}
