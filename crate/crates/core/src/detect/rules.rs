use serde::{Deserialize, Serialize};

use super::{DetectError, DetectionResult, DetectionSpan, Source};
use crate::features::{align_to_anchor, attitude_deltas, mag_l2norm, rolling_pearson, MagInstance};
use crate::logdata::{AnomalyType, ChannelId, FlightLog, TimeSeries};

/// A documented check with its limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RuleSpec {
    /// Any of `VIBE.VibeX/Y/Z` above `limit` (m/s²).
    VibrationThreshold { limit: f64 },
    /// Any |desired − actual| attitude above `limit` degrees.
    AttitudeThreshold { limit: f64 },
    /// Trailing Pearson r between throttle and `|MAG|` above the threshold.
    CompassCorrelation { corr_threshold: f64, window: usize },
    /// Any clip counter advancing by more than `limit` over the log.
    ClipCount { limit: f64 },
    /// `GPS.HDop` above `limit`.
    GpsHdop { limit: f64 },
    /// Trailing Pearson r between throttle and battery drain (`−Volt`).
    PowerCorrelation { corr_threshold: f64, window: usize },
}

impl RuleSpec {
    pub const VIBRATION: RuleSpec = RuleSpec::VibrationThreshold { limit: 30.0 };
    pub const ATTITUDE: RuleSpec = RuleSpec::AttitudeThreshold { limit: 10.0 };
    pub const COMPASS: RuleSpec = RuleSpec::CompassCorrelation {
        corr_threshold: 0.30,
        window: 200,
    };
    pub const CLIPS: RuleSpec = RuleSpec::ClipCount { limit: 100.0 };
    pub const GPS: RuleSpec = RuleSpec::GpsHdop { limit: 2.0 };
    pub const POWER: RuleSpec = RuleSpec::PowerCorrelation {
        corr_threshold: 0.30,
        window: 200,
    };

    /// Every rule at its default limit.
    pub const DEFAULTS: [RuleSpec; 6] = [
        Self::VIBRATION,
        Self::ATTITUDE,
        Self::COMPASS,
        Self::CLIPS,
        Self::GPS,
        Self::POWER,
    ];

    pub fn anomaly_type(&self) -> AnomalyType {
        match self {
            RuleSpec::VibrationThreshold { .. } | RuleSpec::ClipCount { .. } => AnomalyType::Vibration,
            RuleSpec::AttitudeThreshold { .. } => AnomalyType::Attitude,
            RuleSpec::CompassCorrelation { .. } => AnomalyType::CompassInterference,
            RuleSpec::GpsHdop { .. } => AnomalyType::GpsGlitch,
            RuleSpec::PowerCorrelation { .. } => AnomalyType::Power,
        }
    }

    /// Requirement identifier within the anomaly type's requirement table.
    pub fn requirement(&self) -> &'static str {
        match self {
            RuleSpec::ClipCount { .. } => "R2",
            _ => "R1",
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RuleSpec::VibrationThreshold { .. } => "VibrationThreshold",
            RuleSpec::AttitudeThreshold { .. } => "AttitudeThreshold",
            RuleSpec::CompassCorrelation { .. } => "CompassCorrelation",
            RuleSpec::ClipCount { .. } => "ClipCount",
            RuleSpec::GpsHdop { .. } => "GpsHdop",
            RuleSpec::PowerCorrelation { .. } => "PowerCorrelation",
        }
    }

    /// Default rules whose verdicts decide `anomaly_type`.
    pub fn for_type(anomaly_type: AnomalyType) -> Vec<RuleSpec> {
        Self::DEFAULTS
            .into_iter()
            .filter(|r| r.anomaly_type() == anomaly_type)
            .collect()
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: &str| Err(DetectError::InvalidRule(format!("{}: {m}", self.name())));
        match *self {
            RuleSpec::VibrationThreshold { limit }
            | RuleSpec::AttitudeThreshold { limit }
            | RuleSpec::ClipCount { limit }
            | RuleSpec::GpsHdop { limit } => {
                if !(limit > 0.0 && limit.is_finite()) {
                    return bad("limit must be positive");
                }
            }
            RuleSpec::CompassCorrelation {
                corr_threshold,
                window,
            }
            | RuleSpec::PowerCorrelation {
                corr_threshold,
                window,
            } => {
                if !(corr_threshold > 0.0 && corr_threshold.is_finite()) {
                    return bad("correlation threshold must be positive");
                }
                if window < 2 {
                    return bad("window must be at least 2 samples");
                }
            }
        }
        Ok(())
    }
}

fn series(log: &FlightLog, group: &str, field: &str) -> Result<TimeSeries, DetectError> {
    log.get_series(&ChannelId::new(group, field))
        .map_err(|e| DetectError::MissingChannel(e.to_string()))
}

/// Indices of samples strictly above `limit` on any channel, scored by
/// their largest exceedance.
fn threshold_flags(channels: &[Vec<f64>], limit: f64) -> Vec<(usize, f64)> {
    let len = channels.first().map_or(0, |c| c.len());
    (0..len)
        .filter_map(|i| {
            let worst = channels.iter().map(|c| c[i]).fold(f64::NEG_INFINITY, f64::max);
            (worst > limit).then_some((i, worst - limit))
        })
        .collect()
}

/// Samples of the anchor grid whose trailing-window correlation between
/// `other` (held onto the grid) and the anchor, optionally negated, exceeds
/// the threshold. Returns the grid and the flagged indices.
fn correlation_flags(
    anchor: TimeSeries,
    other: TimeSeries,
    negate_anchor: bool,
    corr_threshold: f64,
    window: usize,
) -> Result<(Vec<i64>, Vec<(usize, f64)>), DetectError> {
    let (grid, cols) = align_to_anchor(&[anchor, other])?;
    if grid.len() < window {
        return Err(DetectError::TooFewPoints {
            needed: window,
            got: grid.len(),
        });
    }
    let a: Vec<f64> = if negate_anchor {
        cols[0].iter().map(|v| -v).collect()
    } else {
        cols[0].clone()
    };
    let r = rolling_pearson(&cols[1], &a, window)?;
    let flags = r
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| r.filter(|&r| r > corr_threshold).map(|r| (i, r)))
        .collect();
    Ok((grid, flags))
}

/// Joins runs of consecutive flagged samples of the grid `ts` into spans
/// `[ts[first], ts[last] + 1)`.
fn sample_spans(ts: &[i64], flags: &[(usize, f64)], rule: &RuleSpec) -> Vec<DetectionSpan> {
    let mut spans: Vec<DetectionSpan> = Vec::new();
    let mut prev: Option<usize> = None;
    for &(i, score) in flags {
        match spans.last_mut() {
            Some(last) if prev == Some(i.wrapping_sub(1)) => {
                last.end_us = ts[i] + 1;
                last.score = last.score.max(score);
                last.windows += 1;
            }
            _ => spans.push(DetectionSpan {
                anomaly_type: rule.anomaly_type(),
                start_us: ts[i],
                end_us: ts[i] + 1,
                score,
                source: Source::Rule,
                windows: 1,
                requirement: rule.requirement().to_string(),
            }),
        }
        prev = Some(i);
    }
    spans
}

/// Spans from the first to the last advance of every counter that rose by
/// more than `limit`; overlapping counters share a span.
fn clip_spans(log: &FlightLog, limit: f64, rule: &RuleSpec) -> Result<Vec<DetectionSpan>, DetectError> {
    let mut found: Vec<(i64, i64, f64, usize)> = Vec::new();
    for field in ["Clip0", "Clip1", "Clip2"] {
        let s = series(log, "VIBE", field)?;
        let (v, ts) = (s.values(), s.timestamps());
        let (Some(first), Some(last)) = (v.first(), v.last()) else {
            continue;
        };
        let total = last - first;
        if total > limit {
            let rises: Vec<usize> = (1..v.len()).filter(|&i| v[i] > v[i - 1]).collect();
            if let (Some(&a), Some(&b)) = (rises.first(), rises.last()) {
                found.push((ts[a], ts[b] + 1, total - limit, rises.len()));
            }
        }
    }
    found.sort_by_key(|f| f.0);
    let mut spans: Vec<DetectionSpan> = Vec::new();
    for (start_us, end_us, score, n) in found {
        match spans.last_mut() {
            Some(last) if start_us <= last.end_us => {
                last.end_us = last.end_us.max(end_us);
                last.score = last.score.max(score);
                last.windows = last.windows.max(n);
            }
            _ => spans.push(DetectionSpan {
                anomaly_type: rule.anomaly_type(),
                start_us,
                end_us,
                score,
                source: Source::Rule,
                windows: n,
                requirement: rule.requirement().to_string(),
            }),
        }
    }
    Ok(spans)
}

/// Applies one rule to a log. Runs of consecutive anomalous samples become
/// spans `[first, last + 1)` scored by the largest exceedance over the limit
/// (or the largest correlation).
pub fn rule_detect(log: &FlightLog, rule: &RuleSpec) -> Result<DetectionResult, DetectError> {
    rule.validate()?;
    let spans = match *rule {
        RuleSpec::VibrationThreshold { limit } => {
            let cols: Vec<TimeSeries> = ["VibeX", "VibeY", "VibeZ"]
                .iter()
                .map(|f| series(log, "VIBE", f))
                .collect::<Result<_, _>>()?;
            let vals: Vec<Vec<f64>> = cols.iter().map(|c| c.values().to_vec()).collect();
            sample_spans(cols[0].timestamps(), &threshold_flags(&vals, limit), rule)
        }
        RuleSpec::AttitudeThreshold { limit } => {
            let d = attitude_deltas(log)?;
            let vals: Vec<Vec<f64>> = d
                .iter()
                .map(|c| c.values().iter().map(|v| v.abs()).collect())
                .collect();
            sample_spans(d[0].timestamps(), &threshold_flags(&vals, limit), rule)
        }
        RuleSpec::GpsHdop { limit } => {
            let s = series(log, "GPS", "HDop")?;
            sample_spans(s.timestamps(), &threshold_flags(&[s.values().to_vec()], limit), rule)
        }
        RuleSpec::CompassCorrelation {
            corr_threshold,
            window,
        } => {
            let mag = mag_l2norm(log, MagInstance::Mag)?;
            let thr = series(log, "CTUN", "ThO")?;
            let (grid, flags) = correlation_flags(mag, thr, false, corr_threshold, window)?;
            sample_spans(&grid, &flags, rule)
        }
        RuleSpec::PowerCorrelation {
            corr_threshold,
            window,
        } => {
            let volt = series(log, "BAT", "Volt")?;
            let thr = series(log, "CTUN", "ThO")?;
            let (grid, flags) = correlation_flags(volt, thr, true, corr_threshold, window)?;
            sample_spans(&grid, &flags, rule)
        }
        RuleSpec::ClipCount { limit } => clip_spans(log, limit, rule)?,
    };
    let max_score = spans.iter().map(|s| s.score).fold(0.0, f64::max);
    Ok(DetectionResult {
        verdict: !spans.is_empty(),
        spans,
        max_score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<i64> {
        (0..n as i64).map(|i| 1_000 + 10 * i).collect()
    }

    fn vibe_log(z: Vec<f64>) -> FlightLog {
        let ts = grid(z.len());
        let flat = vec![5.0; z.len()];
        let zeros = vec![0.0; z.len()];
        let mut log = FlightLog::new("t");
        log.insert_columns(
            "VIBE",
            &["VibeX", "VibeY", "VibeZ", "Clip0", "Clip1", "Clip2"],
            &ts,
            &[flat.clone(), flat, z, zeros.clone(), zeros.clone(), zeros],
        )
        .unwrap();
        log
    }

    #[test]
    fn vibration_below_limit_is_quiet() {
        let r = rule_detect(&vibe_log(vec![29.9; 50]), &RuleSpec::VIBRATION).unwrap();
        assert!(!r.verdict);
        assert!(r.spans.is_empty());
    }

    #[test]
    fn single_sample_exceedance() {
        let mut z = vec![29.9; 50];
        z[7] = 30.1;
        let r = rule_detect(&vibe_log(z), &RuleSpec::VIBRATION).unwrap();
        assert!(r.verdict);
        assert_eq!(r.spans.len(), 1);
        let s = &r.spans[0];
        assert_eq!((s.start_us, s.end_us, s.windows), (1_070, 1_071, 1));
        assert!((s.score - 0.1).abs() < 1e-9);
    }

    #[test]
    fn runs_become_spans() {
        let mut z = vec![10.0; 40];
        for v in &mut z[5..9] {
            *v = 31.0;
        }
        z[20] = 40.0;
        let r = rule_detect(&vibe_log(z), &RuleSpec::VIBRATION).unwrap();
        let got: Vec<_> = r.spans.iter().map(|s| (s.start_us, s.end_us, s.windows)).collect();
        assert_eq!(got, vec![(1_050, 1_081, 4), (1_200, 1_201, 1)]);
        assert_eq!(r.max_score, 10.0);
    }

    #[test]
    fn clip_counter_accumulation() {
        let n = 30;
        let ts = grid(n);
        let clip0: Vec<f64> = (0..n).map(|i| if i < 10 { 0.0 } else if i < 20 { ((i - 9) * 11) as f64 } else { 110.0 }).collect();
        let z = vec![1.0; n];
        let mut log = FlightLog::new("c");
        log.insert_columns(
            "VIBE",
            &["VibeX", "VibeY", "VibeZ", "Clip0", "Clip1", "Clip2"],
            &ts,
            &[z.clone(), z.clone(), z.clone(), clip0, z.clone(), z],
        )
        .unwrap();
        let r = rule_detect(&log, &RuleSpec::CLIPS).unwrap();
        assert_eq!(r.spans.len(), 1);
        let s = &r.spans[0];
        assert_eq!((s.start_us, s.end_us), (ts[10], ts[19] + 1));
        assert_eq!(s.requirement, "R2");
        assert_eq!(s.score, 10.0);
        let quiet = rule_detect(&log, &RuleSpec::ClipCount { limit: 110.0 }).unwrap();
        assert!(!quiet.verdict);
    }

    #[test]
    fn invalid_rules_rejected() {
        let log = vibe_log(vec![1.0; 5]);
        assert!(rule_detect(&log, &RuleSpec::VibrationThreshold { limit: 0.0 }).is_err());
        assert!(matches!(
            rule_detect(&log, &RuleSpec::GPS),
            Err(DetectError::MissingChannel(_))
        ));
    }
}
