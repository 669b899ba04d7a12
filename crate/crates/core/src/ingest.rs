//! Station CSV reading/writing and per-station z-score normalization.
//!
//! File layout: a `timestamp,<station>,...` header, then one line per hour
//! with `YYYY-MM-DDTHH:00` timestamps. Empty cells, `NA`, `NaN` and `-999`
//! are missing. Hours absent from the file inside its covered span come back
//! as fully masked rows.

use std::fmt::Write as _;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{HourRange, SeriesError, SeriesMatrix, Space};

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";
const MISSING_TOKENS: [&str; 4] = ["", "NA", "NaN", "-999"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("BadHeader: {0}")]
    BadHeader(String),
    #[error("NonMonotonicTime: line {line}: timestamp `{timestamp}` does not follow the previous row")]
    NonMonotonicTime { line: usize, timestamp: String },
    #[error("BadTimestamp: line {line}: `{text}` is not YYYY-MM-DDTHH:00")]
    BadTimestamp { line: usize, text: String },
    #[error("BadNumber: line {line}, column {column}: `{text}`")]
    BadNumber {
        line: usize,
        column: usize,
        text: String,
    },
    #[error("RaggedRow: line {line} has {found} fields, header has {expected}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("NoRows: file has a header but no data rows")]
    NoRows,
    #[error("DegenerateStation: station `{0}` needs at least two distinct observed values")]
    DegenerateStation(String),
    #[error("SpaceMismatch: expected {expected:?} space, got {actual:?}")]
    SpaceMismatch { expected: Space, actual: Space },
    #[error("StationMismatch: normalization parameters do not cover the series' stations")]
    StationMismatch,
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// Parses `YYYY-MM-DDTHH:00` into epoch hours.
pub fn parse_timestamp(text: &str) -> Option<i64> {
    let dt = NaiveDateTime::parse_from_str(text, TIMESTAMP_FORMAT).ok()?;
    if dt.minute() != 0 {
        return None;
    }
    Some(dt.and_utc().timestamp().div_euclid(3600))
}

/// Renders epoch hours as `YYYY-MM-DDTHH:00`.
pub fn format_timestamp(hour: i64) -> String {
    chrono::DateTime::from_timestamp(hour * 3600, 0)
        .expect("epoch hour in chrono range")
        .naive_utc()
        .format(TIMESTAMP_FORMAT)
        .to_string()
}

/// Parses station CSV text into a raw-space series.
pub fn parse_csv(text: &str) -> Result<SeriesMatrix, IngestError> {
    let mut lines = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate()
        .filter(|(_, l)| !l.is_empty());

    let (_, header) = lines
        .next()
        .ok_or_else(|| IngestError::BadHeader("empty input".into()))?;
    let mut cols = header.split(',');
    if cols.next().map(str::trim) != Some("timestamp") {
        return Err(IngestError::BadHeader(
            "first column must be `timestamp`".into(),
        ));
    }
    let station_ids: Vec<String> = cols.map(|c| c.trim().to_string()).collect();
    if station_ids.is_empty() {
        return Err(IngestError::BadHeader("no station columns".into()));
    }
    if let Some(bad) = station_ids.iter().find(|s| s.is_empty()) {
        return Err(IngestError::BadHeader(format!("empty station id `{bad}`")));
    }
    let width = station_ids.len();

    let mut start: Option<i64> = None;
    let mut prev: Option<i64> = None;
    let mut values: Vec<f64> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 1 {
            return Err(IngestError::RaggedRow {
                line: line_no,
                expected: width + 1,
                found: fields.len(),
            });
        }
        let ts_text = fields[0].trim();
        let hour = parse_timestamp(ts_text).ok_or_else(|| IngestError::BadTimestamp {
            line: line_no,
            text: ts_text.to_string(),
        })?;
        if let Some(p) = prev {
            if hour <= p {
                return Err(IngestError::NonMonotonicTime {
                    line: line_no,
                    timestamp: ts_text.to_string(),
                });
            }
            // restore hourly cadence
            let gap = (hour - p - 1) as usize;
            values.extend(std::iter::repeat(f64::NAN).take(gap * width));
        }
        start.get_or_insert(hour);
        prev = Some(hour);
        for (c, field) in fields[1..].iter().enumerate() {
            values.push(parse_cell(field).ok_or_else(|| IngestError::BadNumber {
                line: line_no,
                column: c + 2,
                text: field.to_string(),
            })?);
        }
    }
    let start = start.ok_or(IngestError::NoRows)?;
    Ok(SeriesMatrix::from_values(
        start,
        station_ids,
        values,
        Space::Raw,
    )?)
}

fn parse_cell(field: &str) -> Option<f64> {
    let t = field.trim();
    if MISSING_TOKENS.contains(&t) {
        return Some(f64::NAN);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Some(v),
        _ => None,
    }
}

/// Renders a series in the station CSV layout. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv(m: &SeriesMatrix) -> String {
    let mut out = String::with_capacity(m.rows() * (17 + 8 * m.stations()));
    out.push_str("timestamp");
    for id in m.station_ids() {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for r in 0..m.rows() {
        out.push_str(&format_timestamp(m.timestamp(r)));
        for s in 0..m.stations() {
            out.push(',');
            if let Some(v) = m.get(r, s) {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationStats {
    pub station: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-station mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub stations: Vec<StationStats>,
    pub fitted_on: HourRange,
}

impl NormParams {
    fn check_stations(&self, m: &SeriesMatrix) -> Result<(), IngestError> {
        let same = self.stations.len() == m.stations()
            && self
                .stations
                .iter()
                .zip(m.station_ids())
                .all(|(p, id)| &p.station == id);
        if same {
            Ok(())
        } else {
            Err(IngestError::StationMismatch)
        }
    }
}

/// Fits mean and sample (n−1) standard deviation over observed cells.
pub fn fit_normalization(m: &SeriesMatrix) -> Result<NormParams, IngestError> {
    let mut stations = Vec::with_capacity(m.stations());
    for (s, id) in m.station_ids().iter().enumerate() {
        let obs = m.station_observed(s);
        let n = obs.len();
        if n < 2 {
            return Err(IngestError::DegenerateStation(id.clone()));
        }
        let mean = obs.iter().sum::<f64>() / n as f64;
        let var = obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        if !(std > 0.0) || obs.iter().all(|&v| v == obs[0]) {
            return Err(IngestError::DegenerateStation(id.clone()));
        }
        stations.push(StationStats {
            station: id.clone(),
            mean,
            std,
        });
    }
    Ok(NormParams {
        stations,
        fitted_on: m.span(),
    })
}

pub fn normalize(m: &SeriesMatrix, p: &NormParams) -> Result<SeriesMatrix, IngestError> {
    if m.space() != Space::Raw {
        return Err(IngestError::SpaceMismatch {
            expected: Space::Raw,
            actual: m.space(),
        });
    }
    p.check_stations(m)?;
    Ok(m.map_observed(Space::Normalized, |_, s, v| {
        let st = &p.stations[s];
        (v - st.mean) / st.std
    }))
}

pub fn denormalize(m: &SeriesMatrix, p: &NormParams) -> Result<SeriesMatrix, IngestError> {
    if m.space() != Space::Normalized {
        return Err(IngestError::SpaceMismatch {
            expected: Space::Normalized,
            actual: m.space(),
        });
    }
    p.check_stations(m)?;
    Ok(m.map_observed(Space::Raw, |_, s, v| {
        let st = &p.stations[s];
        v * st.std + st.mean
    }))
}
