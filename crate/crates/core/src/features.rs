//! Feature extraction, min-max scaling and sliding-window datasets.

use log::warn;
use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logdata::{resample_hold, ChannelId, FlightLog, LogDataError, TimeSeries};
use crate::rng::seeded;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("missing channel: {0}")]
    MissingChannel(String),
    #[error("input is empty")]
    EmptyInput,
    #[error("shape mismatch: expected {expected} features, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("series of length {len} is shorter than window {timesteps}")]
    TooShort { len: usize, timesteps: usize },
    #[error("no log produced any window")]
    EmptyDataset,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl From<LogDataError> for FeatureError {
    fn from(e: LogDataError) -> Self {
        FeatureError::MissingChannel(e.to_string())
    }
}

/// Which derived 3-channel feature set a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    /// `VIBE.VibeX`, `VIBE.VibeY`, `VIBE.VibeZ`.
    VibrationXYZ,
    /// Desired minus actual roll, pitch and (wrapped) yaw.
    AttitudeDeltas,
    /// `CTUN.ThO` held onto the `MAG` grid, `|MAG|`, `|MAG2|`.
    CompassThrottleMag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    /// Apply min-max scaling before windowing.
    pub normalize: bool,
}

impl FeatureSpec {
    /// Attitude deltas stay in degrees; the other kinds are min-max scaled.
    pub fn new(kind: FeatureKind) -> Self {
        let normalize = !matches!(kind, FeatureKind::AttitudeDeltas);
        Self { kind, normalize }
    }

    pub fn feature_names(&self) -> [&'static str; 3] {
        match self.kind {
            FeatureKind::VibrationXYZ => ["VibeX", "VibeY", "VibeZ"],
            FeatureKind::AttitudeDeltas => ["RollDelta", "PitchDelta", "YawDelta"],
            FeatureKind::CompassThrottleMag => ["ThO", "MagNorm", "Mag2Norm"],
        }
    }

    /// Raw log channels this feature set is computed from.
    pub fn source_channels(&self) -> Vec<ChannelId> {
        let pairs: &[(&str, &str)] = match self.kind {
            FeatureKind::VibrationXYZ => &[("VIBE", "VibeX"), ("VIBE", "VibeY"), ("VIBE", "VibeZ")],
            FeatureKind::AttitudeDeltas => &[
                ("ATT", "DesRoll"),
                ("ATT", "Roll"),
                ("ATT", "DesPitch"),
                ("ATT", "Pitch"),
                ("ATT", "DesYaw"),
                ("ATT", "Yaw"),
            ],
            FeatureKind::CompassThrottleMag => &[
                ("CTUN", "ThO"),
                ("MAG", "MagX"),
                ("MAG", "MagY"),
                ("MAG", "MagZ"),
                ("MAG2", "MagX"),
                ("MAG2", "MagY"),
                ("MAG2", "MagZ"),
            ],
        };
        pairs.iter().map(|(g, f)| ChannelId::new(*g, *f)).collect()
    }
}

/// Per-feature bounds for min-max scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormParams {
    pub fn features(&self) -> usize {
        self.min.len()
    }

    fn check(&self, got: usize) -> Result<(), FeatureError> {
        if got != self.features() {
            return Err(FeatureError::ShapeMismatch {
                expected: self.features(),
                got,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn scale(&self, feature: usize, x: f64) -> f64 {
        let (lo, hi) = (self.min[feature], self.max[feature]);
        if hi > lo {
            (x - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    #[inline]
    pub fn unscale(&self, feature: usize, x: f64) -> f64 {
        let (lo, hi) = (self.min[feature], self.max[feature]);
        if hi > lo {
            x * (hi - lo) + lo
        } else {
            lo
        }
    }

    /// Scales the last axis of `data` in place.
    pub fn apply_in_place<D: ndarray::Dimension>(
        &self,
        data: &mut ndarray::Array<f64, D>,
    ) -> Result<(), FeatureError> {
        let last = data.ndim() - 1;
        self.check(data.len_of(Axis(last)))?;
        for mut lane in data.lanes_mut(Axis(last)) {
            for (f, x) in lane.iter_mut().enumerate() {
                *x = self.scale(f, *x);
            }
        }
        Ok(())
    }
}

/// Timestamped feature rows extracted from one log.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub timestamps: Vec<i64>,
    /// `rows × 3`.
    pub data: Array2<f64>,
}

/// Provenance of a window: the half-open time span of the rows it covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSource {
    pub log_id: String,
    pub start_us: i64,
    pub end_us: i64,
}

/// A stack of equally sized windows (`samples × timesteps × features`).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub data: Array3<f64>,
    pub norm: Option<NormParams>,
    pub provenance: Vec<WindowSource>,
    pub timesteps: usize,
    pub stride: usize,
    pub spec: FeatureSpec,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    /// Concatenates datasets that share window geometry and scaling.
    pub fn concat(parts: &[&WindowedDataset]) -> Result<WindowedDataset, FeatureError> {
        let first = parts.first().ok_or(FeatureError::EmptyInput)?;
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| FeatureError::InvalidParameter(e.to_string()))?;
        Ok(WindowedDataset {
            data,
            norm: first.norm.clone(),
            provenance: parts.iter().flat_map(|p| p.provenance.clone()).collect(),
            timesteps: first.timesteps,
            stride: first.stride,
            spec: first.spec,
        })
    }
}

/// Maps an angle in degrees into `(-180, 180]`.
pub fn wrap_degrees(angle: f64) -> f64 {
    let r = angle.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

fn series(log: &FlightLog, group: &str, field: &str) -> Result<TimeSeries, FeatureError> {
    Ok(log.get_series(&ChannelId::new(group, field))?)
}

/// `(DesRoll − Roll, DesPitch − Pitch, wrap(DesYaw − Yaw))`.
pub fn attitude_deltas(log: &FlightLog) -> Result<[TimeSeries; 3], FeatureError> {
    let axis = |des: &str, act: &str, name: &str, wrap: bool| -> Result<TimeSeries, FeatureError> {
        let d = series(log, "ATT", des)?;
        let a = series(log, "ATT", act)?;
        let values = d
            .values()
            .iter()
            .zip(a.values())
            .map(|(d, a)| if wrap { wrap_degrees(d - a) } else { d - a })
            .collect();
        Ok(TimeSeries::new(
            ChannelId::new("ATT", name),
            d.timestamps().to_vec(),
            values,
        )?)
    };
    Ok([
        axis("DesRoll", "Roll", "RollDelta", false)?,
        axis("DesPitch", "Pitch", "PitchDelta", false)?,
        axis("DesYaw", "Yaw", "YawDelta", true)?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MagInstance {
    Mag,
    Mag2,
}

impl MagInstance {
    pub fn group(self) -> &'static str {
        match self {
            MagInstance::Mag => "MAG",
            MagInstance::Mag2 => "MAG2",
        }
    }
}

/// Pointwise `sqrt(MagX² + MagY² + MagZ²)`.
pub fn mag_l2norm(log: &FlightLog, instance: MagInstance) -> Result<TimeSeries, FeatureError> {
    let g = instance.group();
    let x = series(log, g, "MagX")?;
    let y = series(log, g, "MagY")?;
    let z = series(log, g, "MagZ")?;
    let values = x
        .values()
        .iter()
        .zip(y.values())
        .zip(z.values())
        .map(|((x, y), z)| (x * x + y * y + z * z).sqrt())
        .collect();
    Ok(TimeSeries::new(
        ChannelId::new(g, "MagNorm"),
        x.timestamps().to_vec(),
        values,
    )?)
}

/// Holds every series onto the grid of the first one, dropping anchor points
/// that precede the start of any other series.
pub fn align_to_anchor(series: &[TimeSeries]) -> Result<(Vec<i64>, Vec<Vec<f64>>), FeatureError> {
    let anchor = series.first().ok_or(FeatureError::EmptyInput)?;
    let start = series
        .iter()
        .map(|s| s.timestamps().first().copied())
        .collect::<Option<Vec<_>>>()
        .ok_or(FeatureError::EmptyInput)?
        .into_iter()
        .max()
        .unwrap_or(i64::MIN);
    let grid: Vec<i64> = anchor
        .timestamps()
        .iter()
        .copied()
        .filter(|&t| t >= start)
        .collect();
    let columns = series
        .iter()
        .map(|s| Ok(resample_hold(s, &grid)?.values().to_vec()))
        .collect::<Result<Vec<_>, FeatureError>>()?;
    Ok((grid, columns))
}

fn columns_to_matrix(timestamps: Vec<i64>, columns: &[&[f64]]) -> FeatureMatrix {
    let rows = timestamps.len();
    let data = Array2::from_shape_fn((rows, columns.len()), |(r, c)| columns[c][r]);
    FeatureMatrix { timestamps, data }
}

/// Extracts the raw (unscaled) `rows × 3` feature matrix of a log.
pub fn extract_features(log: &FlightLog, spec: &FeatureSpec) -> Result<FeatureMatrix, FeatureError> {
    match spec.kind {
        FeatureKind::VibrationXYZ => {
            let cols: Vec<TimeSeries> = ["VibeX", "VibeY", "VibeZ"]
                .iter()
                .map(|f| series(log, "VIBE", f))
                .collect::<Result<_, _>>()?;
            let refs: Vec<&[f64]> = cols.iter().map(|s| s.values()).collect();
            Ok(columns_to_matrix(cols[0].timestamps().to_vec(), &refs))
        }
        FeatureKind::AttitudeDeltas => {
            let d = attitude_deltas(log)?;
            let refs: Vec<&[f64]> = d.iter().map(|s| s.values()).collect();
            Ok(columns_to_matrix(d[0].timestamps().to_vec(), &refs))
        }
        FeatureKind::CompassThrottleMag => {
            let mag = mag_l2norm(log, MagInstance::Mag)?;
            let mag2 = mag_l2norm(log, MagInstance::Mag2)?;
            let thr = series(log, "CTUN", "ThO")?;
            let (grid, cols) = align_to_anchor(&[mag, thr, mag2])?;
            Ok(columns_to_matrix(grid, &[&cols[1], &cols[0], &cols[2]]))
        }
    }
}

/// Per-feature min and max over all rows.
pub fn minmax_fit(data: ArrayView2<'_, f64>) -> Result<NormParams, FeatureError> {
    if data.nrows() == 0 {
        return Err(FeatureError::EmptyInput);
    }
    let fold = |f: fn(f64, f64) -> f64| -> Vec<f64> {
        data.axis_iter(Axis(1))
            .map(|col| col.iter().copied().reduce(f).expect("non-empty"))
            .collect()
    };
    Ok(NormParams {
        min: fold(f64::min),
        max: fold(f64::max),
    })
}

pub fn minmax_apply(data: ArrayView2<'_, f64>, params: &NormParams) -> Result<Array2<f64>, FeatureError> {
    let mut out = data.to_owned();
    params.apply_in_place(&mut out)?;
    Ok(out)
}

pub fn minmax_invert(data: ArrayView2<'_, f64>, params: &NormParams) -> Result<Array2<f64>, FeatureError> {
    params.check(data.ncols())?;
    let mut out = data.to_owned();
    for mut row in out.rows_mut() {
        for (f, x) in row.iter_mut().enumerate() {
            *x = params.unscale(f, *x);
        }
    }
    Ok(out)
}

/// Number of windows of `timesteps` rows at `stride` in `len` rows.
pub fn window_count(len: usize, timesteps: usize, stride: usize) -> usize {
    if len < timesteps || timesteps == 0 || stride == 0 {
        0
    } else {
        (len - timesteps) / stride + 1
    }
}

/// Window `i` covers rows `[i·stride, i·stride + timesteps)`.
pub fn sliding_windows(
    data: ArrayView2<'_, f64>,
    timesteps: usize,
    stride: usize,
) -> Result<Array3<f64>, FeatureError> {
    if timesteps == 0 || stride == 0 {
        return Err(FeatureError::InvalidParameter(
            "timesteps and stride must be at least 1".into(),
        ));
    }
    let len = data.nrows();
    if len < timesteps {
        return Err(FeatureError::TooShort { len, timesteps });
    }
    let n = window_count(len, timesteps, stride);
    let mut out = Array3::zeros((n, timesteps, data.ncols()));
    for (i, mut w) in out.outer_iter_mut().enumerate() {
        w.assign(&data.slice(s![i * stride..i * stride + timesteps, ..]));
    }
    Ok(out)
}

/// Half-open span covered by rows `[first, last]`.
pub(crate) fn rows_span(timestamps: &[i64], first: usize, last: usize) -> (i64, i64) {
    (timestamps[first], timestamps[last] + 1)
}

/// Windows one feature matrix (already scaled if the caller wants it).
pub fn window_matrix(
    log_id: &str,
    feats: &FeatureMatrix,
    timesteps: usize,
    stride: usize,
) -> Result<(Array3<f64>, Vec<WindowSource>), FeatureError> {
    let windows = sliding_windows(feats.data.view(), timesteps, stride)?;
    let provenance = (0..windows.len_of(Axis(0)))
        .map(|i| {
            let (start_us, end_us) =
                rows_span(&feats.timestamps, i * stride, i * stride + timesteps - 1);
            WindowSource {
                log_id: log_id.to_string(),
                start_us,
                end_us,
            }
        })
        .collect();
    Ok((windows, provenance))
}

/// Builds shuffled train/validation window sets from a corpus of normal logs.
///
/// Scaling bounds are fit over every extracted row of the logs that produced
/// windows and are shared by both outputs. The validation share is
/// `round(total · val_fraction)`.
pub fn build_dataset(
    logs: &[FlightLog],
    spec: FeatureSpec,
    timesteps: usize,
    stride: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<(WindowedDataset, WindowedDataset), FeatureError> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(FeatureError::InvalidParameter(format!(
            "val_fraction {val_fraction} outside [0, 1)"
        )));
    }
    if timesteps == 0 || stride == 0 {
        return Err(FeatureError::InvalidParameter(
            "timesteps and stride must be at least 1".into(),
        ));
    }
    let mut kept: Vec<(&str, FeatureMatrix)> = Vec::new();
    for log in logs {
        let feats = extract_features(log, &spec)?;
        if feats.data.nrows() < timesteps {
            warn!(
                "skipping log `{}`: {} rows < window {}",
                log.log_id,
                feats.data.nrows(),
                timesteps
            );
            continue;
        }
        kept.push((&log.log_id, feats));
    }
    if kept.is_empty() {
        return Err(FeatureError::EmptyDataset);
    }
    let norm = if spec.normalize {
        let views: Vec<_> = kept.iter().map(|(_, f)| f.data.view()).collect();
        let all = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| FeatureError::InvalidParameter(e.to_string()))?;
        Some(minmax_fit(all.view())?)
    } else {
        None
    };
    let mut windows = Vec::new();
    let mut provenance = Vec::new();
    for (log_id, mut feats) in kept {
        if let Some(norm) = &norm {
            norm.apply_in_place(&mut feats.data)?;
        }
        let (w, p) = window_matrix(log_id, &feats, timesteps, stride)?;
        windows.push(w);
        provenance.extend(p);
    }
    let views: Vec<_> = windows.iter().map(|w| w.view()).collect();
    let all = ndarray::concatenate(Axis(0), &views)
        .map_err(|e| FeatureError::InvalidParameter(e.to_string()))?;

    let total = all.len_of(Axis(0));
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut seeded(seed));
    let n_val = (total as f64 * val_fraction).round() as usize;
    let n_train = total - n_val;

    let subset = |idx: &[usize]| WindowedDataset {
        data: all.select(Axis(0), idx),
        norm: norm.clone(),
        provenance: idx.iter().map(|&i| provenance[i].clone()).collect(),
        timesteps,
        stride,
        spec,
    };
    Ok((subset(&order[..n_train]), subset(&order[n_train..])))
}

/// Sample Pearson correlation; 0 when either vector is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, FeatureError> {
    if x.len() != y.len() {
        return Err(FeatureError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(FeatureError::TooFewPoints(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation over each trailing window; entry `i` covers samples
/// `[i + 1 − window, i]` and is `None` for the first `window − 1` samples.
pub fn rolling_pearson(x: &[f64], y: &[f64], window: usize) -> Result<Vec<Option<f64>>, FeatureError> {
    if x.len() != y.len() {
        return Err(FeatureError::LengthMismatch(x.len(), y.len()));
    }
    if window < 2 {
        return Err(FeatureError::TooFewPoints(window));
    }
    if x.len() < window {
        return Err(FeatureError::TooFewPoints(x.len()));
    }
    (0..x.len())
        .map(|i| {
            if i + 1 < window {
                Ok(None)
            } else {
                let r = i + 1 - window..i + 1;
                pearson(&x[r.clone()], &y[r]).map(Some)
            }
        })
        .collect()
}
