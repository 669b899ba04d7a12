//! Masked multi-station hourly series.
//!
//! A [`SeriesMatrix`] holds `T` hourly rows by `S` stations. Every cell carries
//! a value and a mask bit; the mask is authoritative and masked cells always
//! hold `NaN`. Time is kept as integer epoch hours so the numeric code never
//! touches calendars.

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `(row, station)` index of one cell.
pub type Cell = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("ShapeMismatch: expected {expected} cells, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("DuplicateStation: station id `{0}` appears more than once")]
    DuplicateStation(String),
    #[error("NoStations: a series needs at least one station")]
    NoStations,
    #[error("EmptyRange: no row falls inside [{start}, {end})")]
    EmptyRange { start: i64, end: i64 },
    #[error("CellOutOfBounds: cell ({0}, {1}) is outside the matrix")]
    CellOutOfBounds(usize, usize),
}

/// Whether values are physical concentrations or per-station z-scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Raw,
    Normalized,
}

/// Half-open range of epoch hours, `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourRange {
    pub start: i64,
    pub end: i64,
}

impl HourRange {
    pub fn new(start: i64, end: i64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> i64 {
        (self.end - self.start).max(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, hour: i64) -> bool {
        self.start <= hour && hour < self.end
    }

    pub fn overlaps(&self, other: &HourRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Smallest range covering both.
    pub fn hull(&self, other: &HourRange) -> HourRange {
        HourRange::new(self.start.min(other.start), self.end.max(other.end))
    }
}

impl From<Range<i64>> for HourRange {
    fn from(r: Range<i64>) -> Self {
        HourRange::new(r.start, r.end)
    }
}

#[derive(Debug, Clone)]
pub struct SeriesMatrix {
    start_hour: i64,
    rows: usize,
    station_ids: Vec<String>,
    // row-major, rows * stations
    values: Vec<f64>,
    mask: Vec<bool>,
    space: Space,
}

impl SeriesMatrix {
    /// Builds a matrix from row-major values and mask. Masked cells are forced
    /// to `NaN`; an observed cell holding `NaN` is treated as masked.
    pub fn new(
        start_hour: i64,
        station_ids: Vec<String>,
        values: Vec<f64>,
        mask: Vec<bool>,
        space: Space,
    ) -> Result<Self, SeriesError> {
        if station_ids.is_empty() {
            return Err(SeriesError::NoStations);
        }
        let mut seen = HashSet::new();
        for id in &station_ids {
            if !seen.insert(id.as_str()) {
                return Err(SeriesError::DuplicateStation(id.clone()));
            }
        }
        let width = station_ids.len();
        if values.len() % width != 0 {
            return Err(SeriesError::ShapeMismatch {
                expected: (values.len() / width + 1) * width,
                actual: values.len(),
            });
        }
        if mask.len() != values.len() {
            return Err(SeriesError::ShapeMismatch {
                expected: values.len(),
                actual: mask.len(),
            });
        }
        let rows = values.len() / width;
        let mut m = Self {
            start_hour,
            rows,
            station_ids,
            values,
            mask,
            space,
        };
        m.canonicalize();
        Ok(m)
    }

    /// Builds a matrix where every `NaN` value is a missing cell.
    pub fn from_values(
        start_hour: i64,
        station_ids: Vec<String>,
        values: Vec<f64>,
        space: Space,
    ) -> Result<Self, SeriesError> {
        let mask = values.iter().map(|v| !v.is_nan()).collect();
        Self::new(start_hour, station_ids, values, mask, space)
    }

    /// Builds a matrix from row vectors; `None` is a missing cell.
    pub fn from_rows(
        start_hour: i64,
        station_ids: Vec<String>,
        rows: &[Vec<Option<f64>>],
        space: Space,
    ) -> Result<Self, SeriesError> {
        let width = station_ids.len();
        let mut values = Vec::with_capacity(rows.len() * width);
        for row in rows {
            if row.len() != width {
                return Err(SeriesError::ShapeMismatch {
                    expected: width,
                    actual: row.len(),
                });
            }
            values.extend(row.iter().map(|v| v.unwrap_or(f64::NAN)));
        }
        Self::from_values(start_hour, station_ids, values, space)
    }

    fn canonicalize(&mut self) {
        for (v, m) in self.values.iter_mut().zip(self.mask.iter_mut()) {
            if v.is_nan() {
                *m = false;
            }
            if !*m {
                *v = f64::NAN;
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn station_ids(&self) -> &[String] {
        &self.station_ids
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn start_hour(&self) -> i64 {
        self.start_hour
    }

    /// Covered hours, `[start, start + T)`.
    pub fn span(&self) -> HourRange {
        HourRange::new(self.start_hour, self.start_hour + self.rows as i64)
    }

    pub fn timestamp(&self, row: usize) -> i64 {
        self.start_hour + row as i64
    }

    pub fn timestamps(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.rows).map(move |r| self.timestamp(r))
    }

    #[inline]
    fn idx(&self, row: usize, station: usize) -> usize {
        row * self.station_ids.len() + station
    }

    /// Value at an observed cell, `None` when masked.
    pub fn get(&self, row: usize, station: usize) -> Option<f64> {
        let i = self.idx(row, station);
        self.mask[i].then(|| self.values[i])
    }

    pub fn is_observed(&self, row: usize, station: usize) -> bool {
        self.mask[self.idx(row, station)]
    }

    pub fn row_values(&self, row: usize) -> &[f64] {
        let w = self.stations();
        &self.values[row * w..(row + 1) * w]
    }

    pub fn row_mask(&self, row: usize) -> &[bool] {
        let w = self.stations();
        &self.mask[row * w..(row + 1) * w]
    }

    pub fn row_complete(&self, row: usize) -> bool {
        self.row_mask(row).iter().all(|&m| m)
    }

    /// Row-major values; masked cells are `NaN`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn station_observed_count(&self, station: usize) -> usize {
        (0..self.rows)
            .filter(|&r| self.is_observed(r, station))
            .count()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Fraction of observed cells; an empty matrix counts as fully missing.
    pub fn observed_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.observed_count() as f64 / self.values.len() as f64
    }

    /// Observed cells in row-major order.
    pub fn observed_cells(&self) -> Vec<Cell> {
        self.cells_where(true)
    }

    /// Masked cells in row-major order.
    pub fn missing_cells(&self) -> Vec<Cell> {
        self.cells_where(false)
    }

    fn cells_where(&self, observed: bool) -> Vec<Cell> {
        let w = self.stations();
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == observed)
            .map(|(i, _)| (i / w, i % w))
            .collect()
    }

    /// Observed values of one station, in time order.
    pub fn station_observed(&self, station: usize) -> Vec<f64> {
        (0..self.rows)
            .filter_map(|r| self.get(r, station))
            .collect()
    }

    /// Sub-matrix of rows whose timestamps fall in `range`.
    pub fn restrict(&self, range: HourRange) -> Result<SeriesMatrix, SeriesError> {
        let span = self.span();
        let start = range.start.max(span.start);
        let end = range.end.min(span.end);
        if start >= end {
            return Err(SeriesError::EmptyRange {
                start: range.start,
                end: range.end,
            });
        }
        let first = (start - self.start_hour) as usize;
        let last = (end - self.start_hour) as usize;
        Ok(self.slice_rows(first..last))
    }

    pub fn slice_rows(&self, rows: Range<usize>) -> SeriesMatrix {
        let w = self.stations();
        let cells = rows.start * w..rows.end * w;
        SeriesMatrix {
            start_hour: self.start_hour + rows.start as i64,
            rows: rows.len(),
            station_ids: self.station_ids.clone(),
            values: self.values[cells.clone()].to_vec(),
            mask: self.mask[cells].to_vec(),
            space: self.space,
        }
    }

    /// Copy with the given cells masked.
    pub fn with_masked(&self, cells: &[Cell]) -> Result<SeriesMatrix, SeriesError> {
        let mut out = self.clone();
        for &(r, s) in cells {
            if r >= self.rows || s >= self.stations() {
                return Err(SeriesError::CellOutOfBounds(r, s));
            }
            let i = out.idx(r, s);
            out.mask[i] = false;
            out.values[i] = f64::NAN;
        }
        Ok(out)
    }

    /// Copy with every cell's value replaced by `f(row, station, old)`; the
    /// mask is unchanged and masked cells stay `NaN`.
    pub fn map_observed(&self, space: Space, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let w = self.stations();
        let mut out = self.clone();
        out.space = space;
        for (i, v) in out.values.iter_mut().enumerate() {
            if out.mask[i] {
                *v = f(i / w, i % w, *v);
            }
        }
        out
    }

    /// A fully observed matrix with the same axes and the given dense values.
    pub fn completed(&self, values: Vec<f64>) -> Result<SeriesMatrix, SeriesError> {
        let mask = vec![true; values.len()];
        if values.len() != self.values.len() {
            return Err(SeriesError::ShapeMismatch {
                expected: self.values.len(),
                actual: values.len(),
            });
        }
        SeriesMatrix::new(
            self.start_hour,
            self.station_ids.clone(),
            values,
            mask,
            self.space,
        )
    }

    /// Keeps observed cells of `self` and takes every masked cell from
    /// `estimate`.
    pub fn fill_missing_from(&self, estimate: &SeriesMatrix) -> Result<SeriesMatrix, SeriesError> {
        if estimate.values.len() != self.values.len() {
            return Err(SeriesError::ShapeMismatch {
                expected: self.values.len(),
                actual: estimate.values.len(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&self.mask)
            .zip(&estimate.values)
            .map(|((&v, &m), &e)| if m { v } else { e })
            .collect();
        let mask = self
            .mask
            .iter()
            .zip(&estimate.mask)
            .map(|(&a, &b)| a || b)
            .collect();
        SeriesMatrix::new(
            self.start_hour,
            self.station_ids.clone(),
            values,
            mask,
            self.space,
        )
    }

    /// Copy with the space flag replaced (values untouched).
    pub fn with_space(&self, space: Space) -> SeriesMatrix {
        let mut out = self.clone();
        out.space = space;
        out
    }

    /// Reorders stations by `order[i]` = index of the old station placed at `i`.
    pub fn permute_stations(&self, order: &[usize]) -> SeriesMatrix {
        let w = self.stations();
        assert_eq!(order.len(), w, "permutation width");
        let ids = order.iter().map(|&i| self.station_ids[i].clone()).collect();
        let mut values = Vec::with_capacity(self.values.len());
        let mut mask = Vec::with_capacity(self.mask.len());
        for r in 0..self.rows {
            for &s in order {
                values.push(self.values[r * w + s]);
                mask.push(self.mask[r * w + s]);
            }
        }
        SeriesMatrix {
            start_hour: self.start_hour,
            rows: self.rows,
            station_ids: ids,
            values,
            mask,
            space: self.space,
        }
    }

    /// Checks every structural invariant. Used at module boundaries in tests.
    pub fn validate(&self) -> Result<(), SeriesError> {
        let n = self.rows * self.stations();
        if self.values.len() != n || self.mask.len() != n {
            return Err(SeriesError::ShapeMismatch {
                expected: n,
                actual: self.values.len(),
            });
        }
        let mut seen = HashSet::new();
        for id in &self.station_ids {
            if !seen.insert(id) {
                return Err(SeriesError::DuplicateStation(id.clone()));
            }
        }
        debug_assert!(self
            .values
            .iter()
            .zip(&self.mask)
            .all(|(v, &m)| m != v.is_nan()));
        Ok(())
    }

    /// Matches `other` on mask bit-for-bit and on observed values within
    /// `rel_tol` relative difference.
    pub fn approx_eq(&self, other: &SeriesMatrix, rel_tol: f64) -> bool {
        self.start_hour == other.start_hour
            && self.rows == other.rows
            && self.station_ids == other.station_ids
            && self.space == other.space
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.mask)
                .all(|((a, b), &m)| {
                    !m || a == b || (a - b).abs() <= rel_tol * a.abs().max(b.abs())
                })
    }
}

/// Equal axes, equal masks and bit-identical observed values; masked cells
/// are not compared.
impl PartialEq for SeriesMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.approx_eq(other, 0.0)
    }
}

/// Free-function form of [`SeriesMatrix::observed_fraction`].
pub fn observed_fraction(m: &SeriesMatrix) -> f64 {
    m.observed_fraction()
}

/// Free-function form of [`SeriesMatrix::restrict`].
pub fn restrict(m: &SeriesMatrix, rows: HourRange) -> Result<SeriesMatrix, SeriesError> {
    m.restrict(rows)
}
