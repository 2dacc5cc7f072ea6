use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::{merge_flags, DetectError, DetectionResult, Flag, Source};
use crate::features::{extract_features, window_matrix, FeatureSpec, WindowSource, WindowedDataset};
use crate::logdata::FlightLog;
use crate::neural::TrainedModel;

fn check_window_shape(model: &TrainedModel, t: usize, f: usize) -> Result<(), DetectError> {
    if t != model.spec.timesteps || f != model.spec.features {
        return Err(DetectError::ShapeMismatch(format!(
            "windows are {t} × {f}, model expects {} × {}",
            model.spec.timesteps, model.spec.features
        )));
    }
    Ok(())
}

/// Per-window errors of raw (unscaled) feature windows. The model's scaling
/// is applied first when it has one.
pub fn window_errors(model: &TrainedModel, windows: ArrayView3<'_, f64>) -> Result<Vec<f64>, DetectError> {
    let (_, t, f) = windows.dim();
    check_window_shape(model, t, f)?;
    match &model.norm {
        Some(norm) => {
            let mut scaled = windows.to_owned();
            norm.apply_in_place(&mut scaled)?;
            Ok(model.window_errors(scaled.view())?)
        }
        None => Ok(model.window_errors(windows)?),
    }
}

/// Reconstruction error of one raw `T × F` window, without the penalty.
pub fn window_error(model: &TrainedModel, window: ArrayView2<'_, f64>) -> Result<f64, DetectError> {
    let w = window.insert_axis(Axis(0));
    Ok(window_errors(model, w)?[0])
}

/// Mean error of each feature in each raw window, `windows × features`.
pub fn feature_errors(model: &TrainedModel, windows: ArrayView3<'_, f64>) -> Result<Array2<f64>, DetectError> {
    let (_, t, f) = windows.dim();
    check_window_shape(model, t, f)?;
    let mut scaled = windows.to_owned();
    if let Some(norm) = &model.norm {
        norm.apply_in_place(&mut scaled)?;
    }
    Ok(model.feature_errors(scaled.view())?)
}

/// Sets and returns the threshold: the largest error over the dataset's
/// windows, which carry the model's scaling already.
pub fn calibrate_threshold(model: &mut TrainedModel, train: &WindowedDataset) -> Result<f64, DetectError> {
    if train.is_empty() {
        return Err(DetectError::EmptyDataset);
    }
    if train.norm != model.norm {
        return Err(DetectError::ShapeMismatch(
            "dataset scaling differs from the model's".into(),
        ));
    }
    let (_, t, f) = train.data.dim();
    check_window_shape(model, t, f)?;
    let errors = model.window_errors(train.data.view())?;
    let threshold = errors.into_iter().fold(f64::NEG_INFINITY, f64::max);
    model.threshold = Some(threshold);
    Ok(threshold)
}

/// Extracts, scales and windows a log exactly as training data is prepared.
pub fn scaled_windows(
    model: &TrainedModel,
    log: &FlightLog,
    stride: usize,
) -> Result<(Array3<f64>, Vec<WindowSource>), DetectError> {
    let mut feats = extract_features(log, &model.features)?;
    let timesteps = model.spec.timesteps;
    if feats.data.nrows() < timesteps {
        return Err(DetectError::TooShort {
            len: feats.data.nrows(),
            timesteps,
        });
    }
    if let Some(norm) = &model.norm {
        norm.apply_in_place(&mut feats.data)?;
    }
    Ok(window_matrix(&log.log_id, &feats, timesteps, stride)?)
}

/// Scores every window of `log`; windows with error strictly above the
/// threshold are merged into spans scored by their worst window.
pub fn detect_autoencoder(
    model: &TrainedModel,
    log: &FlightLog,
    spec: &FeatureSpec,
    stride: usize,
) -> Result<DetectionResult, DetectError> {
    let threshold = model.threshold.ok_or(DetectError::ThresholdUnset)?;
    if spec.kind != model.features.kind {
        return Err(DetectError::ShapeMismatch(format!(
            "model consumes {:?} features, not {:?}",
            model.features.kind, spec.kind
        )));
    }
    let (windows, provenance) = scaled_windows(model, log, stride)?;
    let errors = model.window_errors(windows.view())?;
    let max_score = errors.iter().copied().fold(0.0, f64::max);
    let flags = errors
        .iter()
        .zip(&provenance)
        .filter(|(e, _)| **e > threshold)
        .map(|(&score, p)| Flag {
            start_us: p.start_us,
            end_us: p.end_us,
            score,
        });
    let spans = merge_flags(flags, model.spec.kind.anomaly_type(), Source::Autoencoder, "R1");
    Ok(DetectionResult {
        verdict: !spans.is_empty(),
        spans,
        max_score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::NormParams;
    use crate::logdata::AnomalyType;
    use crate::neural::{loss_and_gradients, regularization, ModelKind, ModelSpec, TrainingHistory, Weights};
    use crate::rng::seeded;
    use ndarray::Array3;
    use rand::Rng;

    fn model(kind: ModelKind, zero: bool) -> TrainedModel {
        let spec = ModelSpec::preset(kind).reduced(10);
        let weights = if zero {
            Weights::zeros(&spec)
        } else {
            Weights::init(&spec, &mut seeded(4))
        };
        TrainedModel {
            features: kind.feature_spec(),
            spec,
            weights,
            norm: None,
            threshold: None,
            history: TrainingHistory::default(),
        }
    }

    fn vibe_log(n: usize, z: impl Fn(usize) -> f64) -> FlightLog {
        let ts: Vec<i64> = (0..n as i64).map(|i| 10_000 * i).collect();
        let mut log = FlightLog::new("v");
        let c = |f: &dyn Fn(usize) -> f64| (0..n).map(f).collect::<Vec<f64>>();
        log.insert_columns(
            "VIBE",
            &["VibeX", "VibeY", "VibeZ"],
            &ts,
            &[c(&|i| (i as f64 * 0.3).sin()), c(&|i| (i as f64 * 0.2).cos()), c(&z)],
        )
        .unwrap();
        log
    }

    #[test]
    fn zero_model_unit_input() {
        let m = model(ModelKind::Attitude, true);
        let w = Array2::from_elem((10, 3), 1.0);
        assert_eq!(window_error(&m, w.view()).unwrap(), 1.0);
    }

    #[test]
    fn matches_training_loss_without_penalty() {
        let m = model(ModelKind::Vibration, false);
        let mut rng = seeded(1);
        let x = Array3::from_shape_fn((1, 10, 3), |_| rng.random_range(0.0..1.0));
        let (loss, _) = loss_and_gradients(&m.spec, &m.weights, x.view()).unwrap();
        let expected = loss - regularization(m.spec.reg, &m.weights);
        let got = window_error(&m, x.slice(ndarray::s![0, .., ..])).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn scaling_is_applied() {
        let mut m = model(ModelKind::Attitude, true);
        m.norm = Some(NormParams {
            min: vec![0.0; 3],
            max: vec![4.0; 3],
        });
        let w = Array2::from_elem((10, 3), 2.0);
        assert_eq!(window_error(&m, w.view()).unwrap(), 0.5);
        assert!(matches!(
            window_error(&m, Array2::zeros((9, 3)).view()),
            Err(DetectError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn calibration_and_detection() {
        let mut m = model(ModelKind::Vibration, false);
        let spec = m.features;
        let normal = vibe_log(60, |i| (i as f64 * 0.5).sin());
        assert_eq!(detect_autoencoder(&m, &normal, &spec, 1), Err(DetectError::ThresholdUnset));

        let (windows, provenance) = scaled_windows(&m, &normal, 1).unwrap();
        let ds = WindowedDataset {
            data: windows,
            norm: None,
            provenance,
            timesteps: 10,
            stride: 1,
            spec,
        };
        let thr = calibrate_threshold(&mut m, &ds).unwrap();
        assert_eq!(m.threshold, Some(thr));
        let quiet = detect_autoencoder(&m, &normal, &spec, 1).unwrap();
        assert!(!quiet.verdict && quiet.spans.is_empty());
        assert_eq!(quiet.max_score, thr);

        let burst = vibe_log(60, |i| if (30..34).contains(&i) { 6.0 } else { (i as f64 * 0.5).sin() });
        let hit = detect_autoencoder(&m, &burst, &spec, 1).unwrap();
        assert!(hit.verdict);
        assert_eq!(hit.spans.len(), 1);
        let s = &hit.spans[0];
        assert_eq!(s.anomaly_type, AnomalyType::Vibration);
        assert!(s.start_us <= 300_000 && s.end_us > 330_000);

        let mut higher = m.clone();
        higher.threshold = Some(hit.spans[0].score * 0.999_999);
        let fewer = detect_autoencoder(&higher, &burst, &spec, 1).unwrap();
        assert!(fewer.spans.iter().map(|s| s.windows).sum::<usize>() <= s.windows);

        let short = vibe_log(5, |_| 0.0);
        assert!(matches!(
            detect_autoencoder(&m, &short, &spec, 1),
            Err(DetectError::TooShort { .. })
        ));
        let empty = WindowedDataset {
            data: Array3::zeros((0, 10, 3)),
            ..ds
        };
        assert_eq!(calibrate_threshold(&mut m, &empty), Err(DetectError::EmptyDataset));
    }
}
