//! Deterministic synthetic flight logs with optional injected anomalies.
//!
//! Every group is sampled on one shared grid. A clean log sits well inside
//! every default rule limit, and an injection only touches samples inside its
//! interval, so the emitted annotation is exact ground truth.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{pearson, wrap_degrees};
use crate::logdata::{resample_hold, AnnotationSpan, AnomalyType, ChannelId, FlightLog, LogDataError};
use crate::logparser::{save_annotations, serialize_log};
use crate::rng::{seeded, seeded_stream, Rng};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad injection interval: {0}")]
    BadInterval(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid injection: {0}")]
    InvalidInjection(String),
    #[error(transparent)]
    Log(#[from] LogDataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Trailing window over which clean throttle must stay uncorrelated with the
/// magnetometer norm and the battery voltage.
pub const DECORRELATION_WINDOW: usize = 200;
/// Largest |r| tolerated in any decorrelation window of a clean log.
pub const DECORRELATION_LIMIT: f64 = 0.1;
const MAX_REJECTIONS: usize = 64;
/// Oscillation period in samples.
pub const OSCILLATION_PERIOD: usize = 40;
const COMPASS_OSCILLATION_PERIOD: usize = 20;
/// Samples over which a compass oscillation fades in and out.
const COMPASS_TAPER: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttitudeWave {
    pub roll_amp_deg: f64,
    pub pitch_amp_deg: f64,
    pub yaw_amp_deg: f64,
    /// Range of maneuver periods in samples.
    pub min_period: f64,
    pub max_period: f64,
    pub noise_sigma_deg: f64,
    /// Tracking noise is clipped to this magnitude.
    pub noise_clamp_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VibrationWave {
    pub mean: f64,
    pub sigma: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrottleWave {
    pub base: f64,
    pub slow_amp: f64,
    pub fast_amp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompassWave {
    pub field: f64,
    pub field2: f64,
    pub ripple_amp: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsWave {
    pub hdop_mean: f64,
    pub hdop_amp: f64,
    pub hdop_sigma: f64,
    pub sats: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryWave {
    pub start_volt: f64,
    /// Total drop of the underlying trend over the whole log.
    pub decline: f64,
    pub ripple_amp: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub duration_samples: usize,
    pub sample_period_us: i64,
    pub start_us: i64,
    pub attitude: AttitudeWave,
    pub vibration: VibrationWave,
    pub throttle: ThrottleWave,
    pub compass: CompassWave,
    pub gps: GpsWave,
    pub battery: BatteryWave,
    pub seed: u64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            duration_samples: 1000,
            sample_period_us: 10_000,
            start_us: 1_000_000,
            attitude: AttitudeWave {
                roll_amp_deg: 8.0,
                pitch_amp_deg: 6.0,
                yaw_amp_deg: 40.0,
                min_period: 300.0,
                max_period: 1000.0,
                noise_sigma_deg: 0.6,
                noise_clamp_deg: 2.5,
            },
            vibration: VibrationWave {
                mean: 8.0,
                sigma: 1.5,
                max: 20.0,
            },
            throttle: ThrottleWave {
                base: 0.45,
                slow_amp: 0.12,
                fast_amp: 0.06,
            },
            compass: CompassWave {
                field: 450.0,
                field2: 430.0,
                ripple_amp: 3.0,
                noise_sigma: 0.5,
            },
            gps: GpsWave {
                hdop_mean: 0.9,
                hdop_amp: 0.2,
                hdop_sigma: 0.02,
                sats: 12.0,
            },
            battery: BatteryWave {
                start_volt: 16.4,
                decline: 0.01,
                ripple_amp: 0.02,
                noise_sigma: 0.002,
            },
            seed: 0,
        }
    }
}

impl SynthProfile {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidProfile(m.to_string()));
        if self.duration_samples < 1 {
            return bad("duration must be at least one sample");
        }
        if self.sample_period_us < 1 {
            return bad("sample period must be at least 1 µs");
        }
        let a = &self.attitude;
        let sigmas = [
            a.noise_sigma_deg,
            self.vibration.sigma,
            self.compass.noise_sigma,
            self.gps.hdop_sigma,
            self.battery.noise_sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("noise sigmas must be finite and non-negative");
        }
        if !(a.min_period > 0.0 && a.min_period <= a.max_period) {
            return bad("maneuver periods must satisfy 0 < min <= max");
        }
        if !(a.noise_clamp_deg >= 0.0 && a.noise_clamp_deg <= 3.0) {
            return bad("attitude noise clamp must lie in [0, 3]");
        }
        if self.vibration.max < 0.0 || self.vibration.max < self.vibration.mean {
            return bad("vibration cap must be at least the mean");
        }
        let t = &self.throttle;
        if t.base - t.slow_amp.abs() - t.fast_amp.abs() < 0.2 || t.base + t.slow_amp.abs() + t.fast_amp.abs() > 0.7 {
            return bad("throttle must stay within [0.2, 0.7]");
        }
        if self.gps.hdop_mean - self.gps.hdop_amp.abs() < 0.6 || self.gps.hdop_mean + self.gps.hdop_amp.abs() > 1.2 {
            return bad("HDop must stay within [0.6, 1.2]");
        }
        if self.battery.decline < 0.0 {
            return bad("battery decline must be non-negative");
        }
        Ok(())
    }

    fn grid(&self) -> Vec<i64> {
        (0..self.duration_samples as i64)
            .map(|k| self.start_us + k * self.sample_period_us)
            .collect()
    }
}

/// Sum of sinusoids with random periods (samples) and phases.
fn smooth_wave(rng: &mut Rng, n: usize, amps: &[f64], periods: (f64, f64)) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = amps
        .iter()
        .map(|&a| {
            let p = if periods.0 < periods.1 {
                rng.random_range(periods.0..periods.1)
            } else {
                periods.0
            };
            (a, p, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    (0..n)
        .map(|k| {
            comps
                .iter()
                .map(|(a, p, phi)| a * (2.0 * PI * k as f64 / p + phi).sin())
                .sum()
        })
        .collect()
}

fn gaussian(rng: &mut Rng, n: usize, sigma: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Largest |r| over every full trailing window; 0 for logs shorter than one.
fn max_window_correlation(x: &[f64], y: &[f64]) -> f64 {
    if x.len() < DECORRELATION_WINDOW {
        return 0.0;
    }
    (DECORRELATION_WINDOW..=x.len())
        .map(|end| {
            let r = end - DECORRELATION_WINDOW..end;
            pearson(&x[r.clone()], &y[r]).map_or(0.0, f64::abs)
        })
        .fold(0.0, f64::max)
}

/// Draws `make` until its output is decorrelated from `throttle`, keeping the
/// best candidate if the budget runs out.
fn decorrelated(rng: &mut Rng, throttle: &[f64], mut make: impl FnMut(&mut Rng) -> Vec<f64>) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..MAX_REJECTIONS {
        let candidate = make(rng);
        let r = max_window_correlation(throttle, &candidate);
        if r < DECORRELATION_LIMIT {
            return candidate;
        }
        if best.as_ref().is_none_or(|(b, _)| r < *b) {
            best = Some((r, candidate));
        }
    }
    let (r, out) = best.expect("at least one draw");
    log::warn!("decorrelation budget exhausted, keeping max |r| = {r:.3}");
    out
}

fn unit_vector(rng: &mut Rng) -> [f64; 3] {
    let z: f64 = rng.random_range(-0.9..-0.3);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let rho = (1.0 - z * z).sqrt();
    [rho * phi.cos(), rho * phi.sin(), z]
}

/// A clean flight of `profile.duration_samples` samples.
pub fn generate_normal(profile: &SynthProfile) -> Result<FlightLog, SynthError> {
    profile.validate()?;
    let n = profile.duration_samples;
    let ts = profile.grid();
    let mut rng = seeded(profile.seed);
    let a = &profile.attitude;
    let periods = (a.min_period, a.max_period);

    let noise = |rng: &mut Rng| -> Vec<f64> {
        gaussian(rng, n, a.noise_sigma_deg)
            .into_iter()
            .map(|e| e.clamp(-a.noise_clamp_deg, a.noise_clamp_deg))
            .collect()
    };
    let des_roll = smooth_wave(&mut rng, n, &[a.roll_amp_deg, 0.5 * a.roll_amp_deg], periods);
    let des_pitch = smooth_wave(&mut rng, n, &[a.pitch_amp_deg, 0.5 * a.pitch_amp_deg], periods);
    let heading0: f64 = rng.random_range(-180.0..180.0);
    let des_yaw: Vec<f64> = smooth_wave(&mut rng, n, &[a.yaw_amp_deg], periods)
        .into_iter()
        .map(|y| wrap_degrees(heading0 + y))
        .collect();
    let (nr, np, ny) = (noise(&mut rng), noise(&mut rng), noise(&mut rng));
    let roll: Vec<f64> = des_roll.iter().zip(&nr).map(|(d, e)| d - e).collect();
    let pitch: Vec<f64> = des_pitch.iter().zip(&np).map(|(d, e)| d - e).collect();
    let yaw: Vec<f64> = des_yaw.iter().zip(&ny).map(|(d, e)| wrap_degrees(d - e)).collect();

    let v = &profile.vibration;
    let mut vibe = || -> Vec<f64> {
        gaussian(&mut rng, n, v.sigma)
            .into_iter()
            .map(|e| (v.mean + e).clamp(0.0, v.max))
            .collect()
    };
    let (vx, vy, vz) = (vibe(), vibe(), vibe());
    let clips = vec![0.0; n];

    let t = &profile.throttle;
    let throttle: Vec<f64> = smooth_wave(&mut rng, n, &[t.slow_amp], (400.0, 900.0))
        .into_iter()
        .zip(smooth_wave(&mut rng, n, &[t.fast_amp], (80.0, 160.0)))
        .map(|(s, f)| t.base + s + f)
        .collect();
    let alt: Vec<f64> = smooth_wave(&mut rng, n, &[3.0], (500.0, 1500.0))
        .into_iter()
        .map(|h| 30.0 + h)
        .collect();
    let climb: Vec<f64> = (0..n)
        .map(|k| if k == 0 { 0.0 } else { (alt[k] - alt[k - 1]) * 1e6 / profile.sample_period_us as f64 })
        .collect();
    let mut ctun_alt = alt.clone();
    for (h, e) in ctun_alt.iter_mut().zip(gaussian(&mut rng, n, 0.05)) {
        *h += e;
    }

    let c = &profile.compass;
    let magnetometer = |rng: &mut Rng, field: f64| -> [Vec<f64>; 3] {
        let dir = unit_vector(rng);
        let norm = decorrelated(rng, &throttle, |rng| {
            let ripple = smooth_wave(rng, n, &[c.ripple_amp], (5.0, 9.0));
            ripple
                .into_iter()
                .zip(gaussian(rng, n, c.noise_sigma))
                .map(|(r, e)| field + r + e)
                .collect()
        });
        dir.map(|d| norm.iter().map(|m| d * m).collect())
    };
    let [mx, my, mz] = magnetometer(&mut rng, c.field);
    let [m2x, m2y, m2z] = magnetometer(&mut rng, c.field2);

    let g = &profile.gps;
    let hdop: Vec<f64> = smooth_wave(&mut rng, n, &[g.hdop_amp], (300.0, 900.0))
        .into_iter()
        .zip(gaussian(&mut rng, n, g.hdop_sigma))
        .map(|(w, e)| (g.hdop_mean + w + e).clamp(0.6, 1.2))
        .collect();
    let (lat0, lng0) = (rng.random_range(-60.0..60.0), rng.random_range(-180.0..180.0));
    let lat: Vec<f64> = smooth_wave(&mut rng, n, &[2e-4], (600.0, 1500.0))
        .into_iter()
        .map(|d| lat0 + d)
        .collect();
    let lng: Vec<f64> = smooth_wave(&mut rng, n, &[2e-4], (600.0, 1500.0))
        .into_iter()
        .map(|d| lng0 + d)
        .collect();
    let sats = vec![g.sats; n];
    let mut gps_alt = alt.clone();
    for (h, e) in gps_alt.iter_mut().zip(gaussian(&mut rng, n, 0.3)) {
        *h += e;
    }

    let b = &profile.battery;
    let volt = decorrelated(&mut rng, &throttle, |rng| {
        let ripple = smooth_wave(rng, n, &[b.ripple_amp], (5.0, 9.0));
        ripple
            .into_iter()
            .zip(gaussian(rng, n, b.noise_sigma))
            .enumerate()
            .map(|(k, (r, e))| b.start_volt - b.decline * k as f64 / n as f64 + r + e)
            .collect()
    });
    let curr: Vec<f64> = throttle.iter().map(|t| 2.0 + 30.0 * t).collect();

    let mut log = FlightLog::new(format!("synth-{}", profile.seed));
    log.insert_columns(
        "ATT",
        &["DesRoll", "Roll", "DesPitch", "Pitch", "DesYaw", "Yaw"],
        &ts,
        &[des_roll, roll, des_pitch, pitch, des_yaw, yaw],
    )?;
    log.insert_columns(
        "VIBE",
        &["VibeX", "VibeY", "VibeZ", "Clip0", "Clip1", "Clip2"],
        &ts,
        &[vx, vy, vz, clips.clone(), clips.clone(), clips],
    )?;
    log.insert_columns("CTUN", &["ThO", "Alt", "CRt"], &ts, &[throttle, ctun_alt, climb])?;
    log.insert_columns("MAG", &["MagX", "MagY", "MagZ"], &ts, &[mx, my, mz])?;
    log.insert_columns("MAG2", &["MagX", "MagY", "MagZ"], &ts, &[m2x, m2y, m2z])?;
    log.insert_columns(
        "GPS",
        &["NSats", "HDop", "Lat", "Lng", "Alt"],
        &ts,
        &[sats, hdop, lat, lng, gps_alt],
    )?;
    log.insert_columns("BARO", &["Alt"], &ts, &[alt])?;
    log.insert_columns("BAT", &["Volt", "Curr"], &ts, &[volt, curr])?;
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InjectionShape {
    /// Full magnitude for the whole interval.
    Burst,
    /// Linear rise from near zero to full magnitude at the last sample.
    Ramp,
    /// Raised-cosine pulses of period [`OSCILLATION_PERIOD`] peaking at full magnitude.
    Oscillation,
}

impl InjectionShape {
    /// Envelope in [0, 1] at sample `k` of an interval of `len` samples.
    pub fn level(self, k: usize, len: usize) -> f64 {
        match self {
            InjectionShape::Burst => 1.0,
            InjectionShape::Ramp => (k + 1) as f64 / len as f64,
            InjectionShape::Oscillation => {
                0.5 * (1.0 - (2.0 * PI * k as f64 / OSCILLATION_PERIOD as f64).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub anomaly_type: AnomalyType,
    pub start_frac: f64,
    pub end_frac: f64,
    pub magnitude: f64,
    pub shape: InjectionShape,
}

impl InjectionSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let (s, e) = (self.start_frac, self.end_frac);
        if !((0.0..1.0).contains(&s) && (0.0..1.0).contains(&e) && s < e) {
            return Err(SynthError::BadInterval(format!(
                "fractions [{s}, {e}) must satisfy 0 <= start < end < 1"
            )));
        }
        if !(self.magnitude > 0.0 && self.magnitude.is_finite()) {
            return Err(SynthError::InvalidInjection(format!(
                "magnitude {} must be positive",
                self.magnitude
            )));
        }
        Ok(())
    }
}

/// Group whose grid defines the injected interval.
fn anchor_group(t: AnomalyType) -> &'static str {
    match t {
        AnomalyType::Vibration => "VIBE",
        AnomalyType::Attitude => "ATT",
        AnomalyType::CompassInterference => "MAG",
        AnomalyType::GpsGlitch => "GPS",
        AnomalyType::Power => "BAT",
    }
}

fn column(log: &FlightLog, group: &str, field: &str) -> Result<Vec<f64>, SynthError> {
    Ok(log.get_series(&ChannelId::new(group, field))?.values().to_vec())
}

fn timestamps(log: &FlightLog, group: &str) -> Vec<i64> {
    log.records(group).iter().map(|r| r.time_us).collect()
}

/// Indices of `ts` inside `[start_us, end_us)`.
fn inside(ts: &[i64], start_us: i64, end_us: i64) -> std::ops::Range<usize> {
    let lo = ts.partition_point(|&t| t < start_us);
    let hi = ts.partition_point(|&t| t < end_us);
    lo..hi
}

/// `channel` held onto the timestamps of `group`.
fn held(log: &FlightLog, channel: (&str, &str), group: &str) -> Result<Vec<f64>, SynthError> {
    let s = log.get_series(&ChannelId::new(channel.0, channel.1))?;
    Ok(resample_hold(&s, &timestamps(log, group))?.values().to_vec())
}

/// Rewrites `fields` of `group` over `[start_us, end_us)` with `edit(k, len, values)`,
/// where `values` holds the current sample of each field.
fn edit_group(
    log: &mut FlightLog,
    group: &str,
    fields: &[&str],
    start_us: i64,
    end_us: i64,
    mut edit: impl FnMut(usize, usize, usize, &mut [f64]),
) -> Result<(), SynthError> {
    let ts = timestamps(log, group);
    let range = inside(&ts, start_us, end_us);
    let mut cols = fields
        .iter()
        .map(|f| column(log, group, f))
        .collect::<Result<Vec<_>, _>>()?;
    let len = range.len();
    let mut sample = vec![0.0; fields.len()];
    for (k, i) in range.enumerate() {
        for (s, c) in sample.iter_mut().zip(&cols) {
            *s = c[i];
        }
        edit(k, len, i, &mut sample);
        for (s, c) in sample.iter().zip(cols.iter_mut()) {
            c[i] = *s;
        }
    }
    for (f, c) in fields.iter().zip(&cols) {
        log.set_values(&ChannelId::new(group, *f), c)?;
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

/// Injects one anomaly. Samples outside the returned span are untouched.
pub fn inject(log: &FlightLog, spec: &InjectionSpec, seed: u64) -> Result<(FlightLog, AnnotationSpan), SynthError> {
    spec.validate()?;
    let anchor = anchor_group(spec.anomaly_type);
    let ts = timestamps(log, anchor);
    let n = ts.len();
    let first = (spec.start_frac * n as f64).floor() as usize;
    let last = ((spec.end_frac * n as f64).floor() as usize).min(n);
    if first >= last {
        return Err(SynthError::BadInterval(format!(
            "[{}, {}) covers no sample of `{anchor}` ({n} samples)",
            spec.start_frac, spec.end_frac
        )));
    }
    let start_us = ts[first];
    let end_us = ts[last - 1] + 1;
    let m = spec.magnitude;
    let shape = spec.shape;
    let mut rng = seeded_stream(seed, 7);
    let mut out = log.clone();

    match spec.anomaly_type {
        AnomalyType::Vibration => {
            let axes = ["VibeX", "VibeY", "VibeZ"];
            let means = axes
                .iter()
                .map(|f| column(log, anchor, f).map(|c| mean(&c)))
                .collect::<Result<Vec<_>, _>>()?;
            edit_group(&mut out, anchor, &axes, start_us, end_us, |k, len, _, v| {
                let s = shape.level(k, len);
                for (x, mu) in v.iter_mut().zip(&means) {
                    *x = match shape {
                        InjectionShape::Oscillation => (1.0 - s) * *x + s * m,
                        _ => (*x + s * (m - mu)).max(0.0),
                    };
                }
            })?;
        }
        AnomalyType::Attitude => {
            let weights = [1.0, rng.random_range(0.4..0.8), rng.random_range(0.2..0.5)];
            let sign: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            edit_group(&mut out, anchor, &["Roll", "Pitch", "Yaw"], start_us, end_us, |k, len, _, v| {
                let s = shape.level(k, len);
                for (x, w) in v.iter_mut().zip(weights) {
                    *x -= sign * s * m * w;
                }
                v[2] = wrap_degrees(v[2]);
            })?;
        }
        AnomalyType::CompassInterference => {
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            for group in ["MAG", "MAG2"] {
                let thr = held(log, ("CTUN", "ThO"), group)?;
                edit_group(&mut out, group, &["MagX", "MagY", "MagZ"], start_us, end_us, |k, len, i, v| {
                    let s = match shape {
                        InjectionShape::Oscillation => {
                            let taper = (k.min(len - 1 - k) as f64 / COMPASS_TAPER).min(1.0);
                            taper * (2.0 * PI * k as f64 / COMPASS_OSCILLATION_PERIOD as f64 + phase).sin()
                        }
                        _ => shape.level(k, len),
                    };
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        let add = m * thr[i] * s / norm;
                        for x in v.iter_mut() {
                            *x += add * *x;
                        }
                    }
                })?;
            }
        }
        AnomalyType::GpsGlitch => {
            edit_group(&mut out, anchor, &["HDop", "NSats"], start_us, end_us, |k, len, _, v| {
                let s = shape.level(k, len);
                v[0] += s * m;
                v[1] = (v[1] - (4.0 * s).round()).max(0.0);
            })?;
        }
        AnomalyType::Power => {
            edit_group(&mut out, "CTUN", &["ThO"], start_us, end_us, |k, len, _, v| {
                v[0] = (v[0] + 0.1 * m * shape.level(k, len)).min(1.0);
            })?;
            let thr = held(&out, ("CTUN", "ThO"), anchor)?;
            edit_group(&mut out, anchor, &["Volt"], start_us, end_us, |k, len, i, v| {
                v[0] -= 0.5 * m * shape.level(k, len) * thr[i];
            })?;
        }
    }
    let span = AnnotationSpan {
        log_id: log.log_id.clone(),
        anomaly_type: spec.anomaly_type,
        start_us,
        end_us,
    };
    Ok((out, span))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub injection: Option<InjectionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub anomaly_type: AnomalyType,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub profile: SynthProfile,
    pub logs: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub logs: Vec<FlightLog>,
    pub annotations: Vec<AnnotationSpan>,
    pub manifest: Manifest,
}

/// Log-level ground truth: does `log_id` carry an annotation?
impl Corpus {
    pub fn is_anomalous(&self, log_id: &str) -> bool {
        self.annotations.iter().any(|a| a.log_id == log_id)
    }
}

/// Randomized injection for the `j`-th anomalous log. Even `j` stays below
/// the matching rule limit, odd `j` exceeds it.
fn benchmark_injection(t: AnomalyType, j: usize, rng: &mut Rng) -> InjectionSpec {
    use InjectionShape::*;
    let sub = j % 2 == 0;
    let (shape, lo, hi) = match (t, sub) {
        (AnomalyType::Vibration, true) => (Oscillation, 22.0, 27.0),
        (AnomalyType::Vibration, false) => (Burst, 36.0, 48.0),
        (AnomalyType::Attitude, true) => (Ramp, 4.5, 6.5),
        (AnomalyType::Attitude, false) => (Ramp, 14.0, 20.0),
        (AnomalyType::CompassInterference, true) => (Oscillation, 20.0, 40.0),
        (AnomalyType::CompassInterference, false) => (Burst, 60.0, 120.0),
        (AnomalyType::GpsGlitch, _) => (Burst, 2.5, 5.0),
        (AnomalyType::Power, _) => (Burst, 1.5, 3.0),
    };
    let magnitude = rng.random_range(lo..hi);
    let start_frac = rng.random_range(0.2..0.55);
    let length = rng.random_range(0.2..0.35);
    InjectionSpec {
        anomaly_type: t,
        start_frac,
        end_frac: start_frac + length,
        magnitude,
        shape,
    }
}

/// `n_normal` clean logs followed by `n_anomalous` logs with one injection
/// each. Log `i` (in that order) is generated from seed `seed ^ i`.
pub fn benchmark_suite_with(
    profile: &SynthProfile,
    n_normal: usize,
    n_anomalous: usize,
    anomaly_type: AnomalyType,
    seed: u64,
) -> Result<Corpus, SynthError> {
    profile.validate()?;
    let mut logs = Vec::with_capacity(n_normal + n_anomalous);
    let mut annotations = Vec::new();
    let mut entries = Vec::new();
    for i in 0..n_normal + n_anomalous {
        let log_seed = seed ^ i as u64;
        let mut log = generate_normal(&profile.with_seed(log_seed))?;
        let (id, injection) = if i < n_normal {
            (format!("normal-{i:03}"), None)
        } else {
            let j = i - n_normal;
            let spec = benchmark_injection(anomaly_type, j, &mut seeded_stream(log_seed, 1));
            (format!("anomalous-{j:03}"), Some(spec))
        };
        log.log_id = id.clone();
        if let Some(spec) = &injection {
            let (injected, span) = inject(&log, spec, log_seed)?;
            log = injected;
            annotations.push(span);
        }
        entries.push(ManifestEntry {
            id,
            seed: log_seed,
            injection,
        });
        logs.push(log);
    }
    Ok(Corpus {
        logs,
        annotations,
        manifest: Manifest {
            seed,
            anomaly_type,
            n_normal,
            n_anomalous,
            profile: profile.clone(),
            logs: entries,
        },
    })
}

pub fn benchmark_suite(n_normal: usize, n_anomalous: usize, anomaly_type: AnomalyType, seed: u64) -> Corpus {
    benchmark_suite_with(&SynthProfile::default(), n_normal, n_anomalous, anomaly_type, seed)
        .expect("default profile is valid")
}

/// Writes `logs/<id>.log`, `annotations.json` and `manifest.json` under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<(), SynthError> {
    let logs_dir = dir.join("logs");
    fs::create_dir_all(&logs_dir)?;
    for log in &corpus.logs {
        fs::write(logs_dir.join(format!("{}.log", log.log_id)), serialize_log(log))?;
    }
    fs::write(dir.join("annotations.json"), save_annotations(&corpus.annotations))?;
    let manifest = serde_json::to_string_pretty(&corpus.manifest).expect("manifest always serializes");
    fs::write(dir.join("manifest.json"), manifest)?;
    Ok(())
}
