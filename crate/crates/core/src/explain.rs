//! Requirement templates per anomaly family and explanation-annotated
//! reports for detected spans.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::detect::{DetectionSpan, Source};
use crate::logdata::{AnomalyType, ChannelId, FlightLog};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("no template for anomaly type `{0}`")]
    UnknownAnomalyType(String),
    #[error("span requirement `{requirement}` does not exist for `{anomaly_type}`")]
    UnknownRequirement { anomaly_type: String, requirement: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Requirement {
    pub id: String,
    /// Wording exactly as documented, typos included.
    pub quote: String,
    /// Display wording with spelling normalized.
    pub text: String,
    /// Soft descriptors a learned model makes precise.
    pub qualitative: Vec<String>,
    /// Crisp limits usable as rules.
    pub candidate_rules: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Symptom {
    pub requirement: String,
    pub description: String,
    pub channels: Vec<ChannelId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResamTemplate {
    pub anomaly_type: AnomalyType,
    pub family: String,
    pub requirements: Vec<Requirement>,
    pub symptoms: Vec<Symptom>,
    pub alternate_causes: Vec<String>,
}

/// Shown when a template lists no alternate causes.
pub const NO_ALTERNATE_CAUSES: &str = "No known alternate causes of symptoms";

impl ResamTemplate {
    pub fn requirement(&self, id: &str) -> Option<&Requirement> {
        self.requirements.iter().find(|r| r.id == id)
    }

    pub fn symptoms_for<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Symptom> + 'a {
        self.symptoms.iter().filter(move |s| s.requirement == id)
    }

    /// Every distinct channel the template's symptoms reference.
    pub fn channels(&self) -> Vec<ChannelId> {
        let mut out: Vec<ChannelId> = self.symptoms.iter().flat_map(|s| s.channels.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn is_valid(&self) -> bool {
        !self.requirements.is_empty()
            && self.symptoms.iter().all(|s| !s.channels.is_empty() && self.requirement(&s.requirement).is_some())
    }
}

fn normalize_spelling(quote: &str) -> String {
    quote.replace("anomally", "anomaly")
}

fn req(id: &str, quote: &str, qualitative: &[&str], candidate_rules: &[&str]) -> Requirement {
    Requirement {
        id: id.into(),
        quote: quote.into(),
        text: normalize_spelling(quote),
        qualitative: qualitative.iter().map(|s| s.to_string()).collect(),
        candidate_rules: candidate_rules.iter().map(|s| s.to_string()).collect(),
    }
}

fn symptom(requirement: &str, description: &str, channels: &[&str]) -> Symptom {
    Symptom {
        requirement: requirement.into(),
        description: description.into(),
        channels: channels
            .iter()
            .map(|c| c.parse().expect("builtin channel ids are well formed"))
            .collect(),
    }
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn builtin_templates() -> BTreeMap<AnomalyType, ResamTemplate> {
    let att = ["ATT.Roll", "ATT.Pitch", "ATT.Yaw", "ATT.DesRoll", "ATT.DesPitch", "ATT.DesYaw"];
    let templates = [
        ResamTemplate {
            anomaly_type: AnomalyType::Attitude,
            family: "Mechanical Failures".into(),
            requirements: vec![req(
                "R1",
                "When the actual roll, pitch, or yaw deviates suddenly and sufficiently from desired roll, pitch, or yaw, then an attitude divergence anomally shall be detected.",
                &["suddenly and sufficiently"],
                &[],
            )],
            symptoms: vec![symptom(
                "R1",
                "Sudden divergence of actual attitude (roll, pitch, yaw) from desired attitude.",
                &att,
            )],
            alternate_causes: strings(&[
                "Severe wind",
                "Twitch maneuvers of the UAV (e.g., for collision avoidance).",
            ]),
        },
        ResamTemplate {
            anomaly_type: AnomalyType::Vibration,
            family: "Vibration Problems".into(),
            requirements: vec![
                req(
                    "R1",
                    "When the deviation between GPS readings and estimated position exceeds 30 ms⁻² on any axis (X,Y,Z), then a geolocation anomaly shall be detected.",
                    &[],
                    &["30 ms⁻²"],
                ),
                req(
                    "R2",
                    "When the accelerometer reaches its maximum limit more then 100 times during a mission with increasing frequency, then an 'overworked accelerometer' error shall be detected.",
                    &[],
                    &["more then 100 times", "increasing frequency"],
                ),
            ],
            symptoms: vec![
                symptom(
                    "R1",
                    "Standard deviation of accelerometer measurements across three axes.",
                    &["VIBE.VibeX", "VIBE.VibeY", "VIBE.VibeZ"],
                ),
                symptom(
                    "R2",
                    "Acceleratometer frequently reaching maximum limit",
                    &["VIBE.Clip0", "VIBE.Clip1", "VIBE.Clip2"],
                ),
            ],
            alternate_causes: strings(&[
                "Aging and/or underpowered battery",
                "Excessive wind.",
                "Tuning error (e.g., MOT_THST_HOVER not set correctly)",
            ]),
        },
        ResamTemplate {
            anomaly_type: AnomalyType::GpsGlitch,
            family: "GPS Glitch".into(),
            requirements: vec![
                req(
                    "R1",
                    "When GPS.HDop values exceed 2 a 'GPS Glitch with Loss of horizontal precision' error shall be raised.",
                    &[],
                    &["exceed 2"],
                ),
                req(
                    "R2",
                    "When GPS.HDop values exceed 2 and sudden and sharp course corrections are detected, then a 'GPS Geolocation Failure' shall be raised.",
                    &["sudden and sharp"],
                    &["exceed 2"],
                ),
            ],
            symptoms: vec![
                symptom("R1", "Number of satellites", &["GPS.NSats"]),
                symptom("R1", "Loss of GPS precision.", &["GPS.HDop"]),
                symptom("R2", "Sharp flight route divergence", &["GPS.Lat", "GPS.Lng"]),
                symptom("R2", "Number of satellites", &["GPS.NSats"]),
                symptom("R2", "Loss of GPS precision.", &["GPS.HDop"]),
            ],
            alternate_causes: strings(&[
                "Loss of satellite lock",
                "Incorrect positioning of components on UAV causing interference",
            ]),
        },
        ResamTemplate {
            anomaly_type: AnomalyType::CompassInterference,
            family: "Compass Interference".into(),
            requirements: vec![req(
                "R1",
                "When the a correlation above 30% between the throttle and magenetometers occurs, a compass interference anomaly shall be detected.",
                &["above 30%"],
                &[],
            )],
            symptoms: vec![symptom(
                "R1",
                "Increased throttle interferes with compass (detected by correlation between magnetometer readings and throttle)",
                &["MAG.MagX", "MAG.MagY", "MAG.MagZ", "CTUN.ThO"],
            )],
            alternate_causes: Vec::new(),
        },
        ResamTemplate {
            anomaly_type: AnomalyType::Power,
            family: "Power Issues".into(),
            requirements: vec![
                req(
                    "R1",
                    "When increases in throttle are correlated with battery drain then a 'throttle causing excessive battery drain' error is detected.",
                    &["increases", "correlated with"],
                    &[],
                ),
                req(
                    "R2",
                    "When erratic swings in altitude are detected then an 'altitude fluctuation' error is detected.",
                    &[],
                    &[],
                ),
            ],
            symptoms: vec![
                symptom("R1", "Increases in throttle correlated with battery drain", &["CTUN.ThO", "BAT.Volt"]),
                symptom("R2", "Erratic swings in altitude", &["BARO.Alt", "CTUN.Alt", "GPS.Alt"]),
            ],
            alternate_causes: strings(&["Excessive wind.", "Onboard software or sensor drain"]),
        },
    ];
    templates.into_iter().map(|t| (t.anomaly_type, t)).collect()
}

/// A calibrated autoencoder threshold, substituted into soft descriptors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnedThreshold {
    pub value: f64,
    /// Error metric label such as `MAE`.
    pub metric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplanationText {
    pub anomaly_type: AnomalyType,
    pub family: String,
    pub requirement_id: String,
    /// Requirement sentence with any learned threshold bracketed in.
    pub requirement: String,
    pub symptoms: Vec<(String, Vec<ChannelId>)>,
    pub start_us: i64,
    pub end_us: i64,
    pub score: f64,
    pub source: Source,
    pub caveats: Vec<String>,
}

impl ExplanationText {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "**{} ({})**, requirement {}\n", self.family, self.anomaly_type, self.requirement_id);
        let _ = writeln!(s, "> {}\n", self.requirement);
        let _ = writeln!(
            s,
            "- Interval: {} µs to {} µs ({:.3} s)",
            self.start_us,
            self.end_us,
            (self.end_us - self.start_us) as f64 / 1e6
        );
        let source = match self.source {
            Source::Autoencoder => "autoencoder reconstruction error",
            Source::Rule => "rule exceedance",
        };
        let _ = writeln!(s, "- Score: {:.6} ({source})", self.score);
        s.push_str("- Symptoms:\n");
        for (desc, channels) in &self.symptoms {
            let names: Vec<String> = channels.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "  - {desc} [{}]", names.join(", "));
        }
        s.push_str("- Other possible causes:\n");
        if self.caveats.is_empty() {
            let _ = writeln!(s, "  - {NO_ALTERNATE_CAUSES}");
        }
        for c in &self.caveats {
            let _ = writeln!(s, "  - {c}");
        }
        s
    }
}

/// Inserts `[learned threshold: …]` after the first soft descriptor, or after
/// the first crisp limit when there is none.
fn with_threshold(req: &Requirement, learned: &LearnedThreshold) -> String {
    let tag = format!("[learned threshold: {:.3} {}]", learned.value, learned.metric);
    let anchor = req.qualitative.first().or(req.candidate_rules.first());
    match anchor.and_then(|a| req.text.find(a.as_str()).map(|i| i + a.len())) {
        Some(at) => format!("{} {tag}{}", &req.text[..at], &req.text[at..]),
        None => format!("{} {tag}", req.text),
    }
}

pub fn explain_span(
    span: &DetectionSpan,
    templates: &BTreeMap<AnomalyType, ResamTemplate>,
) -> Result<ExplanationText, ExplainError> {
    explain_span_with(span, templates, None)
}

/// Like [`explain_span`]; autoencoder spans also get `learned` bracketed into
/// the requirement sentence.
pub fn explain_span_with(
    span: &DetectionSpan,
    templates: &BTreeMap<AnomalyType, ResamTemplate>,
    learned: Option<&LearnedThreshold>,
) -> Result<ExplanationText, ExplainError> {
    let t = templates
        .get(&span.anomaly_type)
        .ok_or_else(|| ExplainError::UnknownAnomalyType(span.anomaly_type.to_string()))?;
    let r = t.requirement(&span.requirement).ok_or_else(|| ExplainError::UnknownRequirement {
        anomaly_type: span.anomaly_type.to_string(),
        requirement: span.requirement.clone(),
    })?;
    let requirement = match (span.source, learned) {
        (Source::Autoencoder, Some(l)) => with_threshold(r, l),
        _ => r.text.clone(),
    };
    Ok(ExplanationText {
        anomaly_type: span.anomaly_type,
        family: t.family.clone(),
        requirement_id: r.id.clone(),
        requirement,
        symptoms: t
            .symptoms_for(&r.id)
            .map(|s| (s.description.clone(), s.channels.clone()))
            .collect(),
        start_us: span.start_us,
        end_us: span.end_us,
        score: span.score,
        source: span.source,
        caveats: t.alternate_causes.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub report: PathBuf,
    pub summary: PathBuf,
    pub csvs: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Summary<'a> {
    log: &'a str,
    verdict: bool,
    spans: &'a [DetectionSpan],
    channels: Vec<String>,
}

/// Spans in report order: by start, then end, type and source.
fn ordered(spans: &[DetectionSpan]) -> Vec<DetectionSpan> {
    let mut out = spans.to_vec();
    out.sort_by(|a, b| {
        (a.start_us, a.end_us, a.anomaly_type, a.source as u8).cmp(&(b.start_us, b.end_us, b.anomaly_type, b.source as u8))
    });
    out
}

/// Channels referenced by any template that `log` actually carries.
fn report_channels(log: &FlightLog, templates: &BTreeMap<AnomalyType, ResamTemplate>) -> Vec<ChannelId> {
    let mut out: Vec<ChannelId> = templates
        .values()
        .flat_map(|t| t.channels())
        .filter(|c| log.get_series(c).is_ok())
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Writes `report.md`, `summary.json` and `channels/<GROUP>.<Field>.csv`
/// under `out_dir`. A CSV row is flagged when its timestamp lies in a span
/// whose template references that channel.
pub fn render_report(
    log: &FlightLog,
    spans: &[DetectionSpan],
    templates: &BTreeMap<AnomalyType, ResamTemplate>,
    learned: Option<&LearnedThreshold>,
    out_dir: &Path,
) -> Result<ReportFiles, ExplainError> {
    let spans = ordered(spans);
    let explanations = spans
        .iter()
        .map(|s| explain_span_with(s, templates, learned))
        .collect::<Result<Vec<_>, _>>()?;

    let mut md = String::new();
    let _ = writeln!(md, "# Anomaly report: {}\n", log.log_id);
    if let Some((first, last)) = log.time_range() {
        let _ = writeln!(md, "Log covers {first} µs to {last} µs.\n");
    }
    if explanations.is_empty() {
        md.push_str("## No anomalies detected\n\nNo detector flagged any interval in this log.\n");
    }
    for (i, e) in explanations.iter().enumerate() {
        let _ = writeln!(md, "## Anomaly {}: {}\n", i + 1, e.anomaly_type);
        md.push_str(&e.to_markdown());
        md.push('\n');
    }

    fs::create_dir_all(out_dir.join("channels"))?;
    let report = out_dir.join("report.md");
    fs::write(&report, md)?;

    let channels = report_channels(log, templates);
    let mut csvs = Vec::with_capacity(channels.len());
    for c in &channels {
        let series = log.get_series(c).expect("filtered to present channels");
        let relevant: Vec<&DetectionSpan> = spans
            .iter()
            .filter(|s| templates.get(&s.anomaly_type).is_some_and(|t| t.channels().contains(c)))
            .collect();
        let mut csv = String::from("timestamp_us,value,in_anomaly\n");
        for (&t, v) in series.timestamps().iter().zip(series.values()) {
            let flag = relevant.iter().any(|s| s.start_us <= t && t < s.end_us);
            let _ = writeln!(csv, "{t},{v:?},{}", u8::from(flag));
        }
        let path = out_dir.join("channels").join(format!("{c}.csv"));
        fs::write(&path, csv)?;
        csvs.push(path);
    }

    let summary = Summary {
        log: &log.log_id,
        verdict: !spans.is_empty(),
        spans: &spans,
        channels: channels.iter().map(|c| c.to_string()).collect(),
    };
    let summary_path = out_dir.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("summary serializes"))?;

    Ok(ReportFiles {
        report,
        summary: summary_path,
        csvs,
    })
}
