//! Nuclear-norm regularized matrix completion by iterative soft-thresholded
//! SVD.
//!
//! Each iteration fills the missing cells from the current low-rank estimate,
//! takes a full SVD, shrinks every singular value by `lambda` and rebuilds.
//! Observed cells are always reset to their measured values before the next
//! SVD, so the output agrees with the input on every observed cell.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics;
use crate::missingness::inject_random;
use crate::series::{SeriesError, SeriesMatrix, Space};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SoftImputeError {
    #[error("NoObservedData: station `{0}` has no observed cells")]
    NoObservedData(String),
    #[error("SvdFailure: singular value decomposition did not converge")]
    SvdFailure,
    #[error("SpaceMismatch: soft impute expects a normalized series")]
    SpaceMismatch,
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zero,
    ColumnMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftImputeConfig {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub init: Init,
}

impl Default for SoftImputeConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tol: 1e-5,
            max_iter: 500,
            init: Init::ColumnMean,
        }
    }
}

impl SoftImputeConfig {
    pub fn validate(&self) -> Result<(), SoftImputeError> {
        if !(self.lambda >= 0.0) {
            return Err(SoftImputeError::InvalidConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(SoftImputeError::InvalidConfig(format!(
                "tol must lie in (0, 1), got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(SoftImputeError::InvalidConfig("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Iteration bookkeeping for one soft-impute run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub final_delta: f64,
    pub converged: bool,
    /// Relative Frobenius change of the estimate after each iteration.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SoftImputeOutput {
    pub matrix: SeriesMatrix,
    pub convergence: Convergence,
}

/// `max(σ − λ, 0)` elementwise.
pub fn soft_threshold(singular_values: &[f64], lambda: f64) -> Vec<f64> {
    singular_values
        .iter()
        .map(|&s| (s - lambda).max(0.0))
        .collect()
}

/// `U · diag(soft_threshold(Σ, λ)) · Vᵀ` for a complete matrix.
pub fn shrink_step(filled: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>, SoftImputeError> {
    let svd = filled
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(SoftImputeError::SvdFailure)?;
    let u = svd.u.as_ref().ok_or(SoftImputeError::SvdFailure)?;
    let v_t = svd.v_t.as_ref().ok_or(SoftImputeError::SvdFailure)?;
    let shrunk = soft_threshold(svd.singular_values.as_slice(), lambda);
    let mut out = DMatrix::zeros(filled.nrows(), filled.ncols());
    for (k, &sigma) in shrunk.iter().enumerate() {
        if sigma > 0.0 {
            out += (u.column(k) * sigma) * v_t.row(k);
        }
    }
    Ok(out)
}

fn to_dense(m: &SeriesMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.stations(), m.values())
}

fn from_dense(d: &DMatrix<f64>) -> Vec<f64> {
    d.transpose().as_slice().to_vec()
}

fn check_input(m: &SeriesMatrix) -> Result<(), SoftImputeError> {
    if m.space() != Space::Normalized {
        return Err(SoftImputeError::SpaceMismatch);
    }
    for (s, id) in m.station_ids().iter().enumerate() {
        if m.station_observed_count(s) == 0 {
            return Err(SoftImputeError::NoObservedData(id.clone()));
        }
    }
    Ok(())
}

/// Completes a normalized series. Non-convergence within `max_iter` is not an
/// error; the last iterate is returned and flagged in the convergence record.
pub fn soft_impute(
    m: &SeriesMatrix,
    cfg: &SoftImputeConfig,
) -> Result<SoftImputeOutput, SoftImputeError> {
    cfg.validate()?;
    check_input(m)?;
    if m.is_complete() {
        return Ok(SoftImputeOutput {
            matrix: m.clone(),
            convergence: Convergence {
                iterations: 0,
                final_delta: 0.0,
                converged: true,
                history: Vec::new(),
            },
        });
    }

    let (rows, cols) = (m.rows(), m.stations());
    let observed = DMatrix::from_row_slice(
        rows,
        cols,
        &m.mask().iter().map(|&b| b as u8 as f64).collect::<Vec<_>>(),
    );
    let data = to_dense(m).map(|v| if v.is_nan() { 0.0 } else { v });

    let mut estimate = DMatrix::zeros(rows, cols);
    if cfg.init == Init::ColumnMean {
        for s in 0..cols {
            let obs = m.station_observed(s);
            let mean = obs.iter().sum::<f64>() / obs.len() as f64;
            estimate.column_mut(s).fill(mean);
        }
    }

    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        // observed cells from the data, missing cells from the estimate
        let filled = data.zip_zip_map(&observed, &estimate, |x, o, z| if o > 0.0 { x } else { z });
        let next = shrink_step(&filled, cfg.lambda)?;
        let change = (&next - &estimate).norm();
        let scale = estimate.norm();
        let delta = if change == 0.0 { 0.0 } else { change / scale.max(f64::MIN_POSITIVE) };
        history.push(delta);
        estimate = next;
        if delta <= cfg.tol {
            converged = true;
            break;
        }
    }

    let mut values = from_dense(&estimate);
    for (v, (&orig, &obs)) in values.iter_mut().zip(m.values().iter().zip(m.mask())) {
        if obs {
            *v = orig;
        }
    }
    Ok(SoftImputeOutput {
        matrix: m.completed(values)?,
        convergence: Convergence {
            iterations: history.len(),
            final_delta: history.last().copied().unwrap_or(0.0),
            converged,
            history,
        },
    })
}

/// Outcome of a λ grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    /// `(lambda, holdout RMSE)` for every grid point, in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Seven log-spaced points from 1e-2 to 1e2.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..7).map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / 6.0)).collect()
}

/// Picks λ by hiding a seeded holdout of observed cells and minimizing RMSE
/// on it. Ties go to the larger λ.
pub fn select_lambda(
    m: &SeriesMatrix,
    grid: &[f64],
    holdout_fraction: f64,
    seed: u64,
    base: &SoftImputeConfig,
) -> Result<LambdaSelection, SoftImputeError> {
    if grid.is_empty() {
        return Err(SoftImputeError::InvalidConfig("lambda grid is empty".into()));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction <= 0.5) {
        return Err(SoftImputeError::InvalidConfig(format!(
            "holdout fraction must lie in (0, 0.5], got {holdout_fraction}"
        )));
    }
    check_input(m)?;
    let (masked, record) = inject_random(m, holdout_fraction, seed)
        .map_err(|e| SoftImputeError::InvalidConfig(e.to_string()))?;
    let truth: Vec<f64> = record
        .cells
        .iter()
        .map(|&(r, s)| m.get(r, s).expect("holdout cells are observed"))
        .collect();

    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let cfg = SoftImputeConfig { lambda, ..*base };
        let out = soft_impute(&masked, &cfg)?;
        let est: Vec<f64> = record
            .cells
            .iter()
            .map(|&(r, s)| out.matrix.get(r, s).expect("output is complete"))
            .collect();
        let err = if truth.is_empty() {
            0.0
        } else {
            metrics::rmse(&truth, &est).expect("equal nonzero length")
        };
        scores.push((lambda, err));
        best = match best {
            Some((bl, be)) if err > be || (err == be && lambda <= bl) => Some((bl, be)),
            _ => Some((lambda, err)),
        };
    }
    Ok(LambdaSelection {
        lambda: best.expect("grid is non-empty").0,
        scores,
    })
}
