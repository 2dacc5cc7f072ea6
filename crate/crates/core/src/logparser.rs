//! Dataflash text logs and annotation files.
//!
//! Text logs are self-describing: `FMT, <id>, <len>, <Name>, <fmtchars>, <Col1,Col2,...>`
//! registers a schema and every following `<Name>, v1, v2, ...` line is a record.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logdata::{AnnotationSpan, AnomalyType, FlightLog, LogDataError, Schema, TIME_COLUMN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {line}: malformed FMT line: {reason}")]
    MalformedFmt { line: usize, reason: String },
    #[error("line {line}: unknown message `{name}`")]
    UnknownMessage { line: usize, name: String },
    #[error("line {line}: `{name}` has {got} values, schema expects {expected}")]
    ArityMismatch {
        line: usize,
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: bad value `{token}`")]
    BadValue { line: usize, token: String },
    #[error("line {line}: timestamp {time_us} goes backwards in `{name}`")]
    NonMonotonicTime { line: usize, name: String, time_us: i64 },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::MalformedFmt { line, .. }
            | ParseError::UnknownMessage { line, .. }
            | ParseError::ArityMismatch { line, .. }
            | ParseError::BadValue { line, .. }
            | ParseError::NonMonotonicTime { line, .. } => *line,
        }
    }
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("bad annotation JSON: {0}")]
    BadJson(String),
    #[error("unknown anomaly type `{0}`")]
    UnknownAnomalyType(String),
    #[error("inverted span in log `{log}`: start {start_us} >= end {end_us}")]
    InvertedSpan { log: String, start_us: i64, end_us: i64 },
}

/// Line accounting for one parse. Only non-blank lines are counted.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParseReport {
    pub parsed_lines: usize,
    pub skipped_lines: usize,
    pub errors: Vec<(usize, String)>,
}

fn tokens(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn parse_fmt(line_no: usize, toks: &[&str]) -> Result<Option<(String, Schema)>, ParseError> {
    let malformed = |reason: &str| ParseError::MalformedFmt {
        line: line_no,
        reason: reason.to_string(),
    };
    if toks.len() < 6 {
        return Err(malformed("expected id, length, name, format and columns"));
    }
    toks[1]
        .parse::<u32>()
        .map_err(|_| malformed("message id is not an integer"))?;
    toks[2]
        .parse::<u32>()
        .map_err(|_| malformed("length is not an integer"))?;
    let name = toks[3];
    if name.is_empty() {
        return Err(malformed("empty message name"));
    }
    // The FMT message describes itself; it is not a data stream.
    if name == "FMT" {
        return Ok(None);
    }
    let columns: Vec<String> = toks[5..].iter().map(|c| c.to_string()).collect();
    if columns.first().map(String::as_str) != Some(TIME_COLUMN) {
        return Err(malformed("first column must be TimeUS"));
    }
    if columns.iter().any(String::is_empty) {
        return Err(malformed("empty column name"));
    }
    Ok(Some((
        name.to_string(),
        Schema {
            columns,
            format: toks[4].to_string(),
        },
    )))
}

fn parse_line(log: &mut FlightLog, line_no: usize, line: &str) -> Result<(), ParseError> {
    let toks = tokens(line);
    let name = toks[0];
    if name == "FMT" {
        if let Some((name, schema)) = parse_fmt(line_no, &toks)? {
            log.add_schema(&name, schema)
                .map_err(|e| ParseError::MalformedFmt {
                    line: line_no,
                    reason: e.to_string(),
                })?;
        }
        return Ok(());
    }
    let schema = log.schema(name).ok_or_else(|| ParseError::UnknownMessage {
        line: line_no,
        name: name.to_string(),
    })?;
    let expected = schema.columns.len();
    if toks.len() - 1 != expected {
        return Err(ParseError::ArityMismatch {
            line: line_no,
            name: name.to_string(),
            expected,
            got: toks.len() - 1,
        });
    }
    let bad = |t: &str| ParseError::BadValue {
        line: line_no,
        token: t.to_string(),
    };
    let time_us: i64 = toks[1].parse().map_err(|_| bad(toks[1]))?;
    let values = toks[2..]
        .iter()
        .map(|t| t.parse::<f64>().map_err(|_| bad(t)))
        .collect::<Result<Vec<_>, _>>()?;
    let name = name.to_string();
    log.push_record(&name, time_us, values).map_err(|e| match e {
        LogDataError::NonMonotonicTime { time_us, .. } => ParseError::NonMonotonicTime {
            line: line_no,
            name: name.clone(),
            time_us,
        },
        other => ParseError::BadValue {
            line: line_no,
            token: other.to_string(),
        },
    })
}

/// Parses a text log. Lenient mode never fails; offending lines are skipped
/// and listed in the report. Line numbers are 1-based.
pub fn parse_log(
    log_id: &str,
    text: &str,
    strict: bool,
) -> Result<(FlightLog, ParseReport), ParseError> {
    let mut log = FlightLog::new(log_id);
    let mut report = ParseReport::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match parse_line(&mut log, idx + 1, line) {
            Ok(()) => report.parsed_lines += 1,
            Err(e) if strict => return Err(e),
            Err(e) => {
                report.skipped_lines += 1;
                report.errors.push((e.line(), e.to_string()));
            }
        }
    }
    Ok((log, report))
}

/// Writes schemas (ids from 1 in name order) followed by every record in
/// global timestamp order. Ties keep schema order, then record order.
pub fn serialize_log(log: &FlightLog) -> String {
    use std::fmt::Write;

    let mut out = String::new();
    let names: Vec<&String> = log.schemas().keys().collect();
    for (i, name) in names.iter().enumerate() {
        let schema = &log.schemas()[*name];
        let _ = writeln!(
            out,
            "FMT, {}, 0, {}, {}, {}",
            i + 1,
            name,
            crate::logdata::canonical_format(schema.columns.len()),
            schema.columns.join(",")
        );
    }
    let mut cursors = vec![0usize; names.len()];
    loop {
        let mut best: Option<(usize, i64)> = None;
        for (s, name) in names.iter().enumerate() {
            if let Some(r) = log.records(name).get(cursors[s]) {
                if best.is_none_or(|(_, t)| r.time_us < t) {
                    best = Some((s, r.time_us));
                }
            }
        }
        let Some((s, _)) = best else { break };
        let record = &log.records(names[s])[cursors[s]];
        cursors[s] += 1;
        let _ = write!(out, "{}, {}", names[s], record.time_us);
        for v in &record.values {
            let _ = write!(out, ", {v:?}");
        }
        out.push('\n');
    }
    out
}

#[derive(Deserialize)]
struct RawAnnotation {
    log: String,
    #[serde(rename = "type")]
    anomaly_type: String,
    start_us: i64,
    end_us: i64,
}

pub fn load_annotations(text: &str) -> Result<Vec<AnnotationSpan>, AnnotationError> {
    let raw: Vec<RawAnnotation> =
        serde_json::from_str(text).map_err(|e| AnnotationError::BadJson(e.to_string()))?;
    raw.into_iter()
        .map(|r| {
            let anomaly_type: AnomalyType = r
                .anomaly_type
                .parse()
                .map_err(AnnotationError::UnknownAnomalyType)?;
            if r.start_us >= r.end_us {
                return Err(AnnotationError::InvertedSpan {
                    log: r.log,
                    start_us: r.start_us,
                    end_us: r.end_us,
                });
            }
            Ok(AnnotationSpan {
                log_id: r.log,
                anomaly_type,
                start_us: r.start_us,
                end_us: r.end_us,
            })
        })
        .collect()
}

pub fn save_annotations(spans: &[AnnotationSpan]) -> String {
    serde_json::to_string_pretty(spans).expect("annotations always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logdata::ChannelId;
    use proptest::prelude::*;

    const MINIMAL: &str = "FMT, 1, 10, VIBE, Qfff, TimeUS,VibeX,VibeY,VibeZ\nVIBE, 100, 1.0, 2.0, 3.0\n";

    #[test]
    fn minimal_log() {
        let (log, report) = parse_log("m", MINIMAL, true).unwrap();
        assert_eq!(log.records("VIBE").len(), 1);
        assert_eq!(log.records("VIBE")[0].values, vec![1.0, 2.0, 3.0]);
        assert_eq!(log.schema("VIBE").unwrap().format, "Qfff");
        assert_eq!(report.parsed_lines, 2);
        let z = log.get_series(&ChannelId::new("VIBE", "VibeZ")).unwrap();
        assert_eq!(z.values(), &[3.0]);
    }

    #[test]
    fn schema_gating() {
        let err = parse_log("a", "ATT, 1, 2", true).unwrap_err();
        assert!(matches!(err, ParseError::UnknownMessage { line: 1, .. }));
        let (log, report) = parse_log("a", "ATT, 1, 2", false).unwrap();
        assert_eq!(log.total_records(), 0);
        assert_eq!(report.skipped_lines, 1);
        assert_eq!(report.parsed_lines, 0);
    }

    #[test]
    fn malformed_fmt_and_values() {
        assert!(matches!(
            parse_log("a", "FMT, x, 1, ATT, Qf, TimeUS,Roll", true),
            Err(ParseError::MalformedFmt { line: 1, .. })
        ));
        assert!(matches!(
            parse_log("a", "FMT, 1, 1, ATT, Qf, Roll,TimeUS", true),
            Err(ParseError::MalformedFmt { .. })
        ));
        let text = "FMT, 1, 1, ATT, Qf, TimeUS,Roll\nATT, 1, abc\nATT, 2, 1.0, 2.0\n";
        assert!(matches!(
            parse_log("a", text, true),
            Err(ParseError::BadValue { line: 2, .. })
        ));
        let (log, report) = parse_log("a", text, false).unwrap();
        assert_eq!(log.total_records(), 0);
        assert_eq!(report.errors.iter().map(|e| e.0).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn backwards_time_is_strict_error() {
        let text = "FMT, 1, 1, ATT, Qf, TimeUS,Roll\nATT, 5, 1\nATT, 4, 2\n";
        assert!(matches!(
            parse_log("a", text, true),
            Err(ParseError::NonMonotonicTime { line: 3, .. })
        ));
        let (log, report) = parse_log("a", text, false).unwrap();
        assert_eq!(log.records("ATT").len(), 1);
        assert_eq!(report.skipped_lines, 1);
    }

    #[test]
    fn self_describing_fmt_line_is_ignored() {
        let text = "FMT, 128, 89, FMT, BBnNZ, Type,Length,Name,Format,Columns\n".to_string() + MINIMAL;
        let (log, _) = parse_log("a", &text, true).unwrap();
        assert_eq!(log.schemas().len(), 1);
    }

    #[test]
    fn serialize_small_logs() {
        assert_eq!(serialize_log(&FlightLog::new("e")), "");
        let (log, _) = parse_log("m", MINIMAL, true).unwrap();
        let text = serialize_log(&log);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(
            text,
            "FMT, 1, 0, VIBE, Qfff, TimeUS,VibeX,VibeY,VibeZ\nVIBE, 100, 1.0, 2.0, 3.0\n"
        );
    }

    #[test]
    fn annotations() {
        let spans =
            load_annotations(r#"[{"log":"a","type":"Vibration","start_us":100,"end_us":200}]"#)
                .unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].anomaly_type, AnomalyType::Vibration);
        assert!(load_annotations("[]").unwrap().is_empty());
        assert!(matches!(
            load_annotations(r#"[{"log":"a","type":"Wobble","start_us":1,"end_us":2}]"#),
            Err(AnnotationError::UnknownAnomalyType(_))
        ));
        assert!(matches!(
            load_annotations(r#"[{"log":"a","type":"Power","start_us":5,"end_us":5}]"#),
            Err(AnnotationError::InvertedSpan { .. })
        ));
        assert!(matches!(load_annotations("[{"), Err(AnnotationError::BadJson(_))));
        let again = load_annotations(&save_annotations(&spans)).unwrap();
        assert_eq!(again, spans);
    }

    fn arb_log() -> impl Strategy<Value = FlightLog> {
        let stream = (1usize..4, proptest::collection::vec((0i64..5, any::<[f64; 3]>()), 0..40));
        proptest::collection::vec(stream, 1..4).prop_map(|streams| {
            let mut log = FlightLog::new("rand");
            for (s, (ncols, rows)) in streams.into_iter().enumerate() {
                let name = format!("M{s}");
                let mut cols = vec!["TimeUS".to_string()];
                cols.extend((0..ncols).map(|c| format!("C{c}")));
                log.add_schema(&name, Schema::new(&cols)).unwrap();
                let mut t = 0;
                for (dt, vals) in rows {
                    t += dt + 1;
                    let vals: Vec<f64> = vals[..ncols]
                        .iter()
                        .map(|v| if v.is_finite() { *v } else { 0.0 })
                        .collect();
                    log.push_record(&name, t, vals).unwrap();
                }
            }
            log
        })
    }

    proptest! {
        #[test]
        fn round_trip(log in arb_log()) {
            let text = serialize_log(&log);
            let (back, report) = parse_log("rand", &text, true).unwrap();
            prop_assert_eq!(report.skipped_lines, 0);
            prop_assert_eq!(back, log);
        }

        #[test]
        fn lenient_never_fails_and_agrees_with_strict(lines in proptest::collection::vec(
            prop_oneof![
                Just("FMT, 1, 0, A, Qf, TimeUS,X".to_string()),
                Just("FMT, 1, 0, B".to_string()),
                (0i64..20).prop_map(|t| format!("A, {t}, 1.5")),
                Just("A, 3".to_string()),
                Just("B, 1, 2".to_string()),
                Just("A, 7, nope".to_string()),
            ], 0..20)) {
            let text = lines.join("\n");
            let (_, report) = parse_log("p", &text, false).unwrap();
            prop_assert_eq!(report.parsed_lines + report.skipped_lines, lines.len());
            match parse_log("p", &text, true) {
                Ok(_) => prop_assert!(report.errors.is_empty()),
                Err(e) => prop_assert_eq!(Some(e.line()), report.errors.first().map(|x| x.0)),
            }
        }
    }
}
