//! Agreement and error scores at cells where the truth is known.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{Cell, SeriesMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("LengthMismatch: observed has {observed} values, predicted has {predicted}")]
    LengthMismatch { observed: usize, predicted: usize },
    #[error("Empty: metric needs at least one value")]
    Empty,
    #[error("DegenerateObserved: index of agreement denominator is zero")]
    DegenerateObserved,
    #[error("TruthMissing: cell ({0}, {1}) is not observed in the truth series")]
    TruthMissing(usize, usize),
    #[error("EstimateMissing: cell ({0}, {1}) has no estimate")]
    EstimateMissing(usize, usize),
    #[error("ShapeMismatch: truth and estimate differ in shape")]
    ShapeMismatch,
}

fn check_lengths(observed: &[f64], predicted: &[f64]) -> Result<(), MetricError> {
    if observed.len() != predicted.len() {
        return Err(MetricError::LengthMismatch {
            observed: observed.len(),
            predicted: predicted.len(),
        });
    }
    if observed.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Willmott's index of agreement,
/// `d = 1 − Σ(O−P)² / Σ(|P−Ō| + |O−Ō|)²`.
pub fn ioa(observed: &[f64], predicted: &[f64]) -> Result<f64, MetricError> {
    check_lengths(observed, predicted)?;
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&o, &p) in observed.iter().zip(predicted) {
        num += (o - p).powi(2);
        den += ((p - mean).abs() + (o - mean).abs()).powi(2);
    }
    if den == 0.0 {
        return Err(MetricError::DegenerateObserved);
    }
    Ok(1.0 - num / den)
}

pub fn rmse(observed: &[f64], predicted: &[f64]) -> Result<f64, MetricError> {
    check_lengths(observed, predicted)?;
    let sse: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p).powi(2))
        .sum();
    Ok((sse / observed.len() as f64).sqrt())
}

/// IOA for a group of cells, or why it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GroupScore {
    Scored { ioa: f64, rmse: f64, n_cells: usize },
    Unscorable { reason: String, n_cells: usize },
}

impl GroupScore {
    pub fn ioa(&self) -> Option<f64> {
        match self {
            GroupScore::Scored { ioa, .. } => Some(*ioa),
            GroupScore::Unscorable { .. } => None,
        }
    }

    pub fn rmse(&self) -> Option<f64> {
        match self {
            GroupScore::Scored { rmse, .. } => Some(*rmse),
            GroupScore::Unscorable { .. } => None,
        }
    }

    pub fn n_cells(&self) -> usize {
        match self {
            GroupScore::Scored { n_cells, .. } | GroupScore::Unscorable { n_cells, .. } => *n_cells,
        }
    }

    fn of(observed: &[f64], predicted: &[f64]) -> GroupScore {
        let n_cells = observed.len();
        if n_cells < 2 {
            return GroupScore::Unscorable {
                reason: format!("{n_cells} scored cells"),
                n_cells,
            };
        }
        match ioa(observed, predicted) {
            Ok(d) => GroupScore::Scored {
                ioa: d,
                rmse: rmse(observed, predicted).expect("lengths checked"),
                n_cells,
            },
            Err(e) => GroupScore::Unscorable {
                reason: e.to_string(),
                n_cells,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationScore {
    pub station: String,
    pub score: GroupScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScores {
    /// Over the union of all scored cells.
    pub pooled: GroupScore,
    pub stations: Vec<StationScore>,
}

/// Scores `estimate` against `truth` on `cells`. Pooling is over the union of
/// cells, not an average of per-station values.
pub fn score_at_cells(
    truth: &SeriesMatrix,
    estimate: &SeriesMatrix,
    cells: &[Cell],
) -> Result<CellScores, MetricError> {
    if truth.rows() != estimate.rows() || truth.stations() != estimate.stations() {
        return Err(MetricError::ShapeMismatch);
    }
    let width = truth.stations();
    let mut obs_by_station = vec![Vec::new(); width];
    let mut est_by_station = vec![Vec::new(); width];
    let mut obs_all = Vec::with_capacity(cells.len());
    let mut est_all = Vec::with_capacity(cells.len());
    for &(r, s) in cells {
        if r >= truth.rows() || s >= width {
            return Err(MetricError::TruthMissing(r, s));
        }
        let o = truth.get(r, s).ok_or(MetricError::TruthMissing(r, s))?;
        let p = estimate.get(r, s).ok_or(MetricError::EstimateMissing(r, s))?;
        obs_by_station[s].push(o);
        est_by_station[s].push(p);
        obs_all.push(o);
        est_all.push(p);
    }
    let stations = truth
        .station_ids()
        .iter()
        .enumerate()
        .map(|(s, id)| StationScore {
            station: id.clone(),
            score: GroupScore::of(&obs_by_station[s], &est_by_station[s]),
        })
        .collect();
    Ok(CellScores {
        pooled: GroupScore::of(&obs_all, &est_all),
        stations,
    })
}
