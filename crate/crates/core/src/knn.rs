//! Row-wise k-nearest-neighbour imputation.
//!
//! Neighbours are time points. Two rows are compared on the stations observed
//! in both, with the squared distance rescaled by `S / |common|` so rows with
//! fewer shared stations are not artificially close. A missing cell takes the
//! plain mean of the `k` nearest rows that observe its station; neighbours are
//! always drawn from measured values, never from other imputations.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{SeriesError, SeriesMatrix, Space};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnnError {
    #[error("NoObservedData: station `{0}` has no observed cells")]
    NoObservedData(String),
    #[error("InvalidConfig: k must be >= 1")]
    InvalidK,
    #[error("SpaceMismatch: knn impute expects a normalized series")]
    SpaceMismatch,
    #[error(transparent)]
    Series(#[from] SeriesError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    ColumnMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub fallback: Fallback,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 5,
            fallback: Fallback::ColumnMean,
        }
    }
}

/// Scaled Euclidean distance over stations observed in both rows, `None`
/// when the rows share no observed station.
pub fn masked_distance(a: &[f64], b: &[f64], mask_a: &[bool], mask_b: &[bool]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let width = a.len();
    let mut common = 0usize;
    let mut sum = 0.0;
    for i in 0..width {
        if mask_a[i] && mask_b[i] {
            common += 1;
            let d = a[i] - b[i];
            sum += d * d;
        }
    }
    (common > 0).then(|| (width as f64 / common as f64 * sum).sqrt())
}

#[derive(Clone, Copy)]
struct Candidate {
    dist: f64,
    lag: usize,
    row: usize,
}

fn by_rank(a: &Candidate, b: &Candidate) -> Ordering {
    a.dist
        .total_cmp(&b.dist)
        .then(a.lag.cmp(&b.lag))
        .then(a.row.cmp(&b.row))
}

/// Fills every masked cell of a normalized series.
pub fn knn_impute(m: &SeriesMatrix, cfg: &KnnConfig) -> Result<SeriesMatrix, KnnError> {
    if cfg.k == 0 {
        return Err(KnnError::InvalidK);
    }
    if m.space() != Space::Normalized {
        return Err(KnnError::SpaceMismatch);
    }
    let width = m.stations();
    let mut station_means = Vec::with_capacity(width);
    for (s, id) in m.station_ids().iter().enumerate() {
        let obs = m.station_observed(s);
        if obs.is_empty() {
            return Err(KnnError::NoObservedData(id.clone()));
        }
        station_means.push(obs.iter().sum::<f64>() / obs.len() as f64);
    }

    let mut out = m.values().to_vec();
    let mut dists: Vec<Option<f64>> = vec![None; m.rows()];
    let mut pool: Vec<Candidate> = Vec::with_capacity(m.rows());

    for t in 0..m.rows() {
        if m.row_complete(t) {
            continue;
        }
        let (a, mask_a) = (m.row_values(t), m.row_mask(t));
        // distances are shared by all missing stations of this row
        for (u, d) in dists.iter_mut().enumerate() {
            *d = if u == t {
                None
            } else {
                masked_distance(a, m.row_values(u), mask_a, m.row_mask(u))
            };
        }
        for s in (0..width).filter(|&s| !mask_a[s]) {
            pool.clear();
            pool.extend(dists.iter().enumerate().filter_map(|(u, d)| {
                let dist = (*d)?;
                m.is_observed(u, s).then_some(Candidate {
                    dist,
                    lag: u.abs_diff(t),
                    row: u,
                })
            }));
            out[t * width + s] = if pool.is_empty() {
                match cfg.fallback {
                    Fallback::ColumnMean => station_means[s],
                }
            } else {
                let k = cfg.k.min(pool.len());
                if k < pool.len() {
                    pool.select_nth_unstable_by(k - 1, by_rank);
                }
                let sum: f64 = pool[..k]
                    .iter()
                    .map(|c| m.get(c.row, s).expect("candidate observes station"))
                    .sum();
                sum / k as f64
            };
        }
    }
    Ok(m.completed(out)?)
}
