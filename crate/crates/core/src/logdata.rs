//! In-memory model of flight-controller logs.
//!
//! A [`FlightLog`] is a set of message streams (`ATT`, `VIBE`, `MAG`, ...),
//! each described by a schema whose first column is `TimeUS`. Channels are
//! addressed by [`ChannelId`] and extracted as [`TimeSeries`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the mandatory first column of every schema.
pub const TIME_COLUMN: &str = "TimeUS";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogDataError {
    #[error("unknown message group `{0}`")]
    UnknownGroup(String),
    #[error("unknown field `{field}` in group `{group}`")]
    UnknownField { group: String, field: String },
    #[error("series is empty")]
    EmptySeries,
    #[error("resampling grid starts at {grid_start} before first sample at {data_start}")]
    GridBeforeData { grid_start: i64, data_start: i64 },
    #[error("timestamps must be strictly increasing")]
    NotIncreasing,
    #[error("length mismatch: {0} timestamps vs {1} values")]
    LengthMismatch(usize, usize),
    #[error("invalid schema for `{name}`: {reason}")]
    InvalidSchema { name: String, reason: String },
    #[error("`{name}` record has {got} values, schema expects {expected}")]
    ArityMismatch { name: String, expected: usize, got: usize },
    #[error("`{name}` record at {time_us} is earlier than previous record at {previous_us}")]
    NonMonotonicTime { name: String, time_us: i64, previous_us: i64 },
    #[error("invalid channel id `{0}`")]
    InvalidChannel(String),
}

/// A `(group, field)` pair such as `VIBE.VibeX`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelId {
    pub group: String,
    pub field: String,
}

impl ChannelId {
    /// Panics if either part is empty.
    pub fn new(group: impl Into<String>, field: impl Into<String>) -> Self {
        let (group, field) = (group.into(), field.into());
        assert!(
            !group.is_empty() && !field.is_empty(),
            "channel group and field must be non-empty"
        );
        Self { group, field }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.group, self.field)
    }
}

impl FromStr for ChannelId {
    type Err = LogDataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('.') {
            Some((g, f)) if !g.is_empty() && !f.is_empty() => Ok(Self::new(g, f)),
            _ => Err(LogDataError::InvalidChannel(s.to_string())),
        }
    }
}

/// Values of one channel with their microsecond timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub channel: ChannelId,
    timestamps: Vec<i64>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(
        channel: ChannelId,
        timestamps: Vec<i64>,
        values: Vec<f64>,
    ) -> Result<Self, LogDataError> {
        if timestamps.len() != values.len() {
            return Err(LogDataError::LengthMismatch(timestamps.len(), values.len()));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LogDataError::NotIncreasing);
        }
        Ok(Self {
            channel,
            timestamps,
            values,
        })
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Applies `f` pointwise, keeping timestamps.
    pub fn map(&self, channel: ChannelId, f: impl Fn(f64) -> f64) -> TimeSeries {
        TimeSeries {
            channel,
            timestamps: self.timestamps.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Anomaly categories covered by detectors and annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnomalyType {
    Vibration,
    Attitude,
    CompassInterference,
    GpsGlitch,
    Power,
}

impl AnomalyType {
    pub const ALL: [AnomalyType; 5] = [
        AnomalyType::Vibration,
        AnomalyType::Attitude,
        AnomalyType::CompassInterference,
        AnomalyType::GpsGlitch,
        AnomalyType::Power,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyType::Vibration => "Vibration",
            AnomalyType::Attitude => "Attitude",
            AnomalyType::CompassInterference => "CompassInterference",
            AnomalyType::GpsGlitch => "GpsGlitch",
            AnomalyType::Power => "Power",
        }
    }
}

impl fmt::Display for AnomalyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AnomalyType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// An annotated anomaly interval `[start_us, end_us)` in one log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSpan {
    #[serde(rename = "log")]
    pub log_id: String,
    #[serde(rename = "type")]
    pub anomaly_type: AnomalyType,
    pub start_us: i64,
    pub end_us: i64,
}

/// True iff `[span.start_us, span.end_us)` and `[start_us, end_us)` share a
/// non-empty interval.
pub fn span_overlaps(span: &AnnotationSpan, start_us: i64, end_us: i64) -> bool {
    intervals_overlap(span.start_us, span.end_us, start_us, end_us)
}

pub(crate) fn intervals_overlap(a_start: i64, a_end: i64, b_start: i64, b_end: i64) -> bool {
    a_start.max(b_start) < a_end.min(b_end)
}

/// Column layout of one message stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    /// Column names, `TimeUS` first.
    pub columns: Vec<String>,
    /// Dataflash type characters, kept verbatim and never interpreted.
    pub format: String,
}

impl Schema {
    /// Schema with the canonical `Q` + `f...` format string.
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        let columns: Vec<String> = columns.iter().map(|c| c.as_ref().to_string()).collect();
        let format = canonical_format(columns.len());
        Self { columns, format }
    }

    pub fn field_index(&self, field: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == field)
    }
}

pub(crate) fn canonical_format(columns: usize) -> String {
    let mut s = String::with_capacity(columns);
    if columns > 0 {
        s.push('Q');
        s.extend(std::iter::repeat_n('f', columns - 1));
    }
    s
}

/// One data record. `values` holds every column after `TimeUS`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub time_us: i64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlightLog {
    pub log_id: String,
    pub source_path: Option<String>,
    schemas: BTreeMap<String, Schema>,
    records: BTreeMap<String, Vec<Record>>,
}

impl FlightLog {
    pub fn new(log_id: impl Into<String>) -> Self {
        Self {
            log_id: log_id.into(),
            ..Default::default()
        }
    }

    /// Registers a schema. Re-registering an identical column list is a no-op.
    pub fn add_schema(&mut self, name: &str, schema: Schema) -> Result<(), LogDataError> {
        let invalid = |reason: &str| LogDataError::InvalidSchema {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        if name.is_empty() {
            return Err(invalid("empty message name"));
        }
        if schema.columns.first().map(String::as_str) != Some(TIME_COLUMN) {
            return Err(invalid("first column must be TimeUS"));
        }
        if schema.columns.iter().any(|c| c.is_empty()) {
            return Err(invalid("empty column name"));
        }
        let mut seen = std::collections::HashSet::new();
        if !schema.columns.iter().all(|c| seen.insert(c)) {
            return Err(invalid("duplicate column name"));
        }
        match self.schemas.get(name) {
            Some(existing) if existing.columns != schema.columns => {
                Err(invalid("conflicting redefinition"))
            }
            Some(_) => Ok(()),
            None => {
                self.schemas.insert(name.to_string(), schema);
                self.records.entry(name.to_string()).or_default();
                Ok(())
            }
        }
    }

    /// Appends a record. A record repeating the previous timestamp replaces it.
    pub fn push_record(
        &mut self,
        name: &str,
        time_us: i64,
        values: Vec<f64>,
    ) -> Result<(), LogDataError> {
        let schema = self
            .schemas
            .get(name)
            .ok_or_else(|| LogDataError::UnknownGroup(name.to_string()))?;
        let expected = schema.columns.len() - 1;
        if values.len() != expected {
            return Err(LogDataError::ArityMismatch {
                name: name.to_string(),
                expected,
                got: values.len(),
            });
        }
        let stream = self.records.entry(name.to_string()).or_default();
        match stream.last_mut() {
            Some(last) if last.time_us > time_us => Err(LogDataError::NonMonotonicTime {
                name: name.to_string(),
                time_us,
                previous_us: last.time_us,
            }),
            Some(last) if last.time_us == time_us => {
                last.values = values;
                Ok(())
            }
            _ => {
                stream.push(Record { time_us, values });
                Ok(())
            }
        }
    }

    /// Declares message type `name` with `fields` (after `TimeUS`) and
    /// appends one record per timestamp from column vectors.
    pub fn insert_columns(
        &mut self,
        name: &str,
        fields: &[&str],
        timestamps: &[i64],
        columns: &[Vec<f64>],
    ) -> Result<(), LogDataError> {
        if columns.len() != fields.len() {
            return Err(LogDataError::LengthMismatch(fields.len(), columns.len()));
        }
        if let Some(c) = columns.iter().find(|c| c.len() != timestamps.len()) {
            return Err(LogDataError::LengthMismatch(timestamps.len(), c.len()));
        }
        let mut names = vec!["TimeUS"];
        names.extend_from_slice(fields);
        self.add_schema(name, Schema::new(&names))?;
        for (i, &t) in timestamps.iter().enumerate() {
            self.push_record(name, t, columns.iter().map(|c| c[i]).collect())?;
        }
        Ok(())
    }

    pub fn schemas(&self) -> &BTreeMap<String, Schema> {
        &self.schemas
    }

    pub fn schema(&self, name: &str) -> Option<&Schema> {
        self.schemas.get(name)
    }

    pub fn records(&self, name: &str) -> &[Record] {
        self.records.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_group(&self, name: &str) -> bool {
        self.schemas.contains_key(name)
    }

    pub fn total_records(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    /// Index into `Record::values` for a channel (the `TimeUS` column maps to `None`).
    fn value_index(&self, channel: &ChannelId) -> Result<Option<usize>, LogDataError> {
        let schema = self
            .schemas
            .get(&channel.group)
            .ok_or_else(|| LogDataError::UnknownGroup(channel.group.clone()))?;
        match schema.field_index(&channel.field) {
            Some(0) => Ok(None),
            Some(i) => Ok(Some(i - 1)),
            None => Err(LogDataError::UnknownField {
                group: channel.group.clone(),
                field: channel.field.clone(),
            }),
        }
    }

    /// Extracts one column in record order.
    pub fn get_series(&self, channel: &ChannelId) -> Result<TimeSeries, LogDataError> {
        let idx = self.value_index(channel)?;
        let records = self.records(&channel.group);
        let timestamps: Vec<i64> = records.iter().map(|r| r.time_us).collect();
        let values = records
            .iter()
            .map(|r| match idx {
                Some(i) => r.values[i],
                None => r.time_us as f64,
            })
            .collect();
        Ok(TimeSeries {
            channel: channel.clone(),
            timestamps,
            values,
        })
    }

    /// Overwrites one column. `values` must have one entry per record.
    pub fn set_values(&mut self, channel: &ChannelId, values: &[f64]) -> Result<(), LogDataError> {
        let idx = self.value_index(channel)?.ok_or_else(|| LogDataError::InvalidSchema {
            name: channel.group.clone(),
            reason: "TimeUS cannot be overwritten".into(),
        })?;
        let records = self
            .records
            .get_mut(&channel.group)
            .ok_or_else(|| LogDataError::UnknownGroup(channel.group.clone()))?;
        if records.len() != values.len() {
            return Err(LogDataError::LengthMismatch(records.len(), values.len()));
        }
        for (r, &v) in records.iter_mut().zip(values) {
            r.values[idx] = v;
        }
        Ok(())
    }

    /// Time range `[first, last]` across all streams, if any record exists.
    pub fn time_range(&self) -> Option<(i64, i64)> {
        let firsts = self.records.values().filter_map(|r| r.first().map(|x| x.time_us));
        let lasts = self.records.values().filter_map(|r| r.last().map(|x| x.time_us));
        Some((firsts.min()?, lasts.max()?))
    }
}

/// Zero-order hold of `series` onto `grid`.
pub fn resample_hold(series: &TimeSeries, grid: &[i64]) -> Result<TimeSeries, LogDataError> {
    let (first_ts, _) = series
        .timestamps
        .first()
        .zip(series.values.first())
        .ok_or(LogDataError::EmptySeries)?;
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LogDataError::NotIncreasing);
    }
    if let Some(&g0) = grid.first() {
        if g0 < *first_ts {
            return Err(LogDataError::GridBeforeData {
                grid_start: g0,
                data_start: *first_ts,
            });
        }
    }
    let mut values = Vec::with_capacity(grid.len());
    let mut j = 0;
    for &g in grid {
        while j + 1 < series.timestamps.len() && series.timestamps[j + 1] <= g {
            j += 1;
        }
        values.push(series.values[j]);
    }
    Ok(TimeSeries {
        channel: series.channel.clone(),
        timestamps: grid.to_vec(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn att_log(rows: &[(i64, f64)]) -> FlightLog {
        let mut log = FlightLog::new("t");
        log.add_schema("ATT", Schema::new(&["TimeUS", "Roll"])).unwrap();
        for &(t, v) in rows {
            log.push_record("ATT", t, vec![v]).unwrap();
        }
        log
    }

    fn series(points: &[(i64, f64)]) -> TimeSeries {
        TimeSeries::new(
            ChannelId::new("X", "Y"),
            points.iter().map(|p| p.0).collect(),
            points.iter().map(|p| p.1).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_record_extraction() {
        let log = att_log(&[(100, 0.5)]);
        let s = log.get_series(&ChannelId::new("ATT", "Roll")).unwrap();
        assert_eq!(s.timestamps(), &[100]);
        assert_eq!(s.values(), &[0.5]);
    }

    #[test]
    fn unknown_group_and_field() {
        let log = att_log(&[(100, 0.5)]);
        assert!(matches!(
            log.get_series(&ChannelId::new("XYZ", "Foo")),
            Err(LogDataError::UnknownGroup(_))
        ));
        assert!(matches!(
            log.get_series(&ChannelId::new("ATT", "Foo")),
            Err(LogDataError::UnknownField { .. })
        ));
    }

    #[test]
    fn order_is_preserved() {
        let mut log = FlightLog::new("v");
        log.add_schema("VIBE", Schema::new(&["TimeUS", "VibeX"])).unwrap();
        for (t, v) in [(1, 3.0), (2, 1.0), (3, 2.0)] {
            log.push_record("VIBE", t, vec![v]).unwrap();
        }
        let s = log.get_series(&ChannelId::new("VIBE", "VibeX")).unwrap();
        assert_eq!(s.values(), &[3.0, 1.0, 2.0]);
        let time = log.get_series(&ChannelId::new("VIBE", "TimeUS")).unwrap();
        assert_eq!(time.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn duplicate_timestamp_keeps_last() {
        let log = att_log(&[(10, 1.0), (10, 2.0), (20, 3.0)]);
        assert_eq!(log.records("ATT").len(), 2);
        assert_eq!(log.records("ATT")[0].values, vec![2.0]);
    }

    #[test]
    fn rejects_bad_schema_and_records() {
        let mut log = FlightLog::new("x");
        assert!(log.add_schema("ATT", Schema::new(&["Roll"])).is_err());
        log.add_schema("ATT", Schema::new(&["TimeUS", "Roll"])).unwrap();
        assert!(log.add_schema("ATT", Schema::new(&["TimeUS", "Pitch"])).is_err());
        assert!(matches!(
            log.push_record("ATT", 1, vec![1.0, 2.0]),
            Err(LogDataError::ArityMismatch { .. })
        ));
        log.push_record("ATT", 5, vec![1.0]).unwrap();
        assert!(matches!(
            log.push_record("ATT", 4, vec![1.0]),
            Err(LogDataError::NonMonotonicTime { .. })
        ));
    }

    #[test]
    fn hold_semantics() {
        let s = series(&[(0, 1.0), (10, 2.0)]);
        let r = resample_hold(&s, &[0, 5, 10, 15]).unwrap();
        assert_eq!(r.values(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn hold_identity_on_own_grid() {
        let s = series(&[(0, 1.0), (3, -2.0), (7, 4.5)]);
        let r = resample_hold(&s, s.timestamps()).unwrap();
        assert_eq!(r.values(), s.values());
    }

    #[test]
    fn hold_errors() {
        let s = series(&[(5, 9.0)]);
        assert!(matches!(
            resample_hold(&s, &[0]),
            Err(LogDataError::GridBeforeData { .. })
        ));
        let empty = series(&[]);
        assert_eq!(resample_hold(&empty, &[0]), Err(LogDataError::EmptySeries));
    }

    fn span(start: i64, end: i64) -> AnnotationSpan {
        AnnotationSpan {
            log_id: "a".into(),
            anomaly_type: AnomalyType::Vibration,
            start_us: start,
            end_us: end,
        }
    }

    #[test]
    fn overlap_cases() {
        assert!(span_overlaps(&span(100, 200), 150, 300));
        assert!(!span_overlaps(&span(100, 200), 200, 300));
        assert!(span_overlaps(&span(100, 200), 0, 1000));
    }

    #[test]
    fn channel_id_parsing() {
        let c: ChannelId = "VIBE.VibeX".parse().unwrap();
        assert_eq!(c, ChannelId::new("VIBE", "VibeX"));
        assert!("VIBE".parse::<ChannelId>().is_err());
        assert_eq!(c.to_string(), "VIBE.VibeX");
    }

    proptest! {
        #[test]
        fn series_matches_time_column(times in proptest::collection::btree_set(0i64..10_000, 1..50)) {
            let rows: Vec<(i64, f64)> = times.iter().map(|&t| (t, t as f64 * 0.5)).collect();
            let log = att_log(&rows);
            let s = log.get_series(&ChannelId::new("ATT", "Roll")).unwrap();
            let time_col = log.get_series(&ChannelId::new("ATT", "TimeUS")).unwrap();
            let as_f64: Vec<f64> = s.timestamps().iter().map(|&t| t as f64).collect();
            prop_assert_eq!(as_f64, time_col.values().to_vec());
        }

        #[test]
        fn hold_is_idempotent(
            times in proptest::collection::btree_set(0i64..1000, 1..30),
            grid_extra in proptest::collection::btree_set(0i64..2000, 1..30),
        ) {
            let pts: Vec<(i64, f64)> = times.iter().enumerate().map(|(i, &t)| (t, i as f64)).collect();
            let s = series(&pts);
            let first = pts[0].0;
            let grid: Vec<i64> = grid_extra.into_iter().filter(|&g| g >= first).collect();
            prop_assume!(!grid.is_empty());
            let once = resample_hold(&s, &grid).unwrap();
            let twice = resample_hold(&once, &grid).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn overlap_is_symmetric(a in 0i64..100, la in 1i64..50, b in 0i64..100, lb in 1i64..50) {
            let s1 = span(a, a + la);
            let s2 = span(b, b + lb);
            prop_assert_eq!(span_overlaps(&s1, b, b + lb), span_overlaps(&s2, a, a + la));
        }
    }
}
