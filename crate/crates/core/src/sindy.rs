//! Sparse discrete-time dynamics: `x_{t+1} = Θ(x_t) Ξ`.
//!
//! `Θ` is a polynomial library evaluated on the current state, `Ξ` is found
//! by sequentially thresholded least squares. A fitted model refines imputed
//! cells by one-step prediction from the preceding row, taken either as
//! already refined (a forward chain) or as the imputer left it.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{Cell, SeriesError, SeriesMatrix, Space};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SindyError {
    #[error("RankDeficient: normal equations singular for target column {column}")]
    RankDeficient { column: usize },
    #[error("InsufficientPairs: {usable} usable consecutive pairs, need at least {needed}")]
    InsufficientPairs { usable: usize, needed: usize },
    #[error("ShapeMismatch: model has {model} stations, series has {series}")]
    ShapeMismatch { model: usize, series: usize },
    #[error("SpaceMismatch: series space does not match what the operation needs")]
    SpaceMismatch,
    #[error("InvalidModel: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// Polynomial candidate library, graded-lexicographic term order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibrarySpec {
    pub degree: usize,
    pub include_constant: bool,
}

impl Default for LibrarySpec {
    fn default() -> Self {
        Self {
            degree: 2,
            include_constant: true,
        }
    }
}

impl LibrarySpec {
    /// Exponent multisets, each a sorted list of state indices.
    pub fn terms(&self, stations: usize) -> Vec<Vec<usize>> {
        let mut terms = Vec::new();
        if self.include_constant {
            terms.push(Vec::new());
        }
        for d in 1..=self.degree {
            let mut combo = vec![0usize; d];
            loop {
                terms.push(combo.clone());
                // next non-decreasing sequence
                let Some(pos) = (0..d).rev().find(|&i| combo[i] + 1 < stations) else {
                    break;
                };
                let v = combo[pos] + 1;
                for c in combo.iter_mut().skip(pos) {
                    *c = v;
                }
            }
        }
        terms
    }

    pub fn len(&self, stations: usize) -> usize {
        let full = binomial(stations + self.degree, self.degree);
        if self.include_constant {
            full
        } else {
            full - 1
        }
    }

    pub fn is_empty(&self, stations: usize) -> bool {
        self.len(stations) == 0
    }

    /// Human-readable term names, e.g. `1`, `x0`, `x0*x2`, `x1^2`.
    pub fn term_names(&self, stations: usize) -> Vec<String> {
        self.terms(stations)
            .iter()
            .map(|t| {
                if t.is_empty() {
                    return "1".to_string();
                }
                let mut parts: Vec<String> = Vec::new();
                let mut i = 0;
                while i < t.len() {
                    let j = t[i..].iter().take_while(|&&x| x == t[i]).count();
                    parts.push(if j == 1 {
                        format!("x{}", t[i])
                    } else {
                        format!("x{}^{}", t[i], j)
                    });
                    i += j;
                }
                parts.join("*")
            })
            .collect()
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn eval_terms(terms: &[Vec<usize>], state: &[f64], out: &mut [f64]) {
    for (o, t) in out.iter_mut().zip(terms) {
        *o = t.iter().map(|&i| state[i]).product();
    }
}

/// Evaluates the library on each row of a complete `N × S` state matrix.
pub fn build_library(states: &DMatrix<f64>, spec: &LibrarySpec) -> DMatrix<f64> {
    let terms = spec.terms(states.ncols());
    let mut theta = DMatrix::zeros(states.nrows(), terms.len());
    let mut buf = vec![0.0; terms.len()];
    let mut row = vec![0.0; states.ncols()];
    for n in 0..states.nrows() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = states[(n, j)];
        }
        eval_terms(&terms, &row, &mut buf);
        for (l, &v) in buf.iter().enumerate() {
            theta[(n, l)] = v;
        }
    }
    theta
}

/// Sequentially thresholded least squares, column by column.
///
/// Returns `Ξ` (`L × S`) where every nonzero entry satisfies
/// `|ξ| >= threshold`.
pub fn stlsq(
    theta: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    threshold: f64,
    ridge: f64,
    max_rounds: usize,
) -> Result<DMatrix<f64>, SindyError> {
    let n_terms = theta.ncols();
    let gram = theta.transpose() * theta;
    let moments = theta.transpose() * targets;
    let mut xi = DMatrix::zeros(n_terms, targets.ncols());

    for col in 0..targets.ncols() {
        let rhs = moments.column(col).clone_owned();
        let mut support: Vec<usize> = (0..n_terms).collect();
        let mut coef = solve_on_support(&gram, &rhs, &support, ridge, col)?;
        for _ in 0..max_rounds {
            let kept: Vec<usize> = support
                .iter()
                .zip(coef.iter())
                .filter(|(_, c)| c.abs() >= threshold)
                .map(|(&i, _)| i)
                .collect();
            if kept.len() == support.len() {
                break;
            }
            support = kept;
            if support.is_empty() {
                coef = DVector::zeros(0);
                break;
            }
            coef = solve_on_support(&gram, &rhs, &support, ridge, col)?;
        }
        for (&i, &c) in support.iter().zip(coef.iter()) {
            // final refit may leave a sub-threshold entry if rounds ran out
            if c.abs() >= threshold {
                xi[(i, col)] = c;
            }
        }
    }
    Ok(xi)
}

fn solve_on_support(
    gram: &DMatrix<f64>,
    rhs: &DVector<f64>,
    support: &[usize],
    ridge: f64,
    column: usize,
) -> Result<DVector<f64>, SindyError> {
    let k = support.len();
    let mut a = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    for (p, &i) in support.iter().enumerate() {
        b[p] = rhs[i];
        for (q, &j) in support.iter().enumerate() {
            a[(p, q)] = gram[(i, j)];
        }
        a[(p, p)] += ridge;
    }
    let singular = || SindyError::RankDeficient { column };
    let chol = a.cholesky().ok_or_else(singular)?;
    let x = chol.solve(&b);
    // Cholesky succeeds on numerically singular systems with tiny pivots
    let diag = chol.l_dirty().diagonal();
    let max_pivot = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_pivot = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !x.iter().all(|v| v.is_finite()) || min_pivot <= max_pivot * 1e-7 {
        return Err(singular());
    }
    Ok(x)
}

/// Fit-time summary stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub pairs: usize,
    /// One-step RMSE on the training pairs, per station.
    pub train_rmse: Vec<f64>,
    /// Active library terms per station.
    pub nonzero: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SindyParams {
    pub threshold: f64,
    pub ridge: f64,
    pub max_rounds: usize,
}

impl Default for SindyParams {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            ridge: 1e-6,
            max_rounds: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SindyModel {
    pub stations: Vec<String>,
    pub degree: usize,
    pub include_constant: bool,
    pub threshold: f64,
    pub ridge: f64,
    /// Space of the training series; predictions live in the same space.
    #[serde(default = "normalized_space")]
    pub space: Space,
    /// Row-major `L × S`.
    pub xi: Vec<Vec<f64>>,
    pub diagnostics: FitDiagnostics,
}

fn normalized_space() -> Space {
    Space::Normalized
}

impl SindyModel {
    pub fn library(&self) -> LibrarySpec {
        LibrarySpec {
            degree: self.degree,
            include_constant: self.include_constant,
        }
    }

    pub fn xi_matrix(&self) -> DMatrix<f64> {
        let rows = self.xi.len();
        let cols = self.stations.len();
        DMatrix::from_fn(rows, cols, |r, c| self.xi[r][c])
    }

    /// Structural checks for models loaded from disk.
    pub fn validate(&self) -> Result<(), SindyError> {
        let s = self.stations.len();
        let l = self.library().len(s);
        if self.xi.len() != l || self.xi.iter().any(|r| r.len() != s) {
            return Err(SindyError::InvalidModel(format!(
                "xi must be {l} x {s} for degree {} with {s} stations",
                self.degree
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SindyError> {
        let model: SindyModel =
            serde_json::from_str(text).map_err(|e| SindyError::InvalidModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    /// `Θ(state) · Ξ`.
    pub fn predict_one_step(&self, state: &[f64]) -> Vec<f64> {
        let terms = self.library().terms(self.stations.len());
        let mut lib = vec![0.0; terms.len()];
        eval_terms(&terms, state, &mut lib);
        let mut out = vec![0.0; self.stations.len()];
        for (l, row) in lib.iter().zip(&self.xi) {
            for (o, &c) in out.iter_mut().zip(row) {
                *o += l * c;
            }
        }
        out
    }
}

/// Consecutive fully observed row pairs `(t, t+1)`.
fn usable_pairs(train: &SeriesMatrix) -> Vec<usize> {
    (0..train.rows().saturating_sub(1))
        .filter(|&t| train.row_complete(t) && train.row_complete(t + 1))
        .collect()
}

/// Fits a model on the one-step pairs of a normalized training series.
pub fn fit(
    train: &SeriesMatrix,
    spec: &LibrarySpec,
    params: &SindyParams,
) -> Result<SindyModel, SindyError> {
    if train.space() != Space::Normalized {
        return Err(SindyError::SpaceMismatch);
    }
    fit_any_space(train, spec, params)
}

/// Like [`fit`] but accepts a series in either space; the model then lives in
/// that space.
pub fn fit_any_space(
    train: &SeriesMatrix,
    spec: &LibrarySpec,
    params: &SindyParams,
) -> Result<SindyModel, SindyError> {
    let width = train.stations();
    let n_terms = spec.len(width);
    let pairs = usable_pairs(train);
    if pairs.len() < n_terms {
        return Err(SindyError::InsufficientPairs {
            usable: pairs.len(),
            needed: n_terms,
        });
    }
    let current = DMatrix::from_fn(pairs.len(), width, |n, s| train.row_values(pairs[n])[s]);
    let next = DMatrix::from_fn(pairs.len(), width, |n, s| train.row_values(pairs[n] + 1)[s]);
    let theta = build_library(&current, spec);
    let xi = stlsq(&theta, &next, params.threshold, params.ridge, params.max_rounds)?;

    let resid = &theta * &xi - &next;
    let train_rmse = (0..width)
        .map(|s| (resid.column(s).norm_squared() / pairs.len() as f64).sqrt())
        .collect();
    let nonzero = (0..width)
        .map(|s| xi.column(s).iter().filter(|&&v| v != 0.0).count())
        .collect();
    Ok(SindyModel {
        stations: train.station_ids().to_vec(),
        degree: spec.degree,
        include_constant: spec.include_constant,
        threshold: params.threshold,
        ridge: params.ridge,
        space: train.space(),
        xi: (0..xi.nrows())
            .map(|r| xi.row(r).iter().copied().collect())
            .collect(),
        diagnostics: FitDiagnostics {
            pairs: pairs.len(),
            train_rmse,
            nonzero,
        },
    })
}

/// Free-function form of [`SindyModel::predict_one_step`].
pub fn predict_one_step(model: &SindyModel, state: &[f64]) -> Vec<f64> {
    model.predict_one_step(state)
}

/// Overwrites `missing_cells` with one-step predictions in a single forward
/// pass. Row `t` is predicted from row `t-1` as already refined; row 0 has no
/// predecessor and is left alone.
pub fn refine_imputation(
    model: &SindyModel,
    imputed: &SeriesMatrix,
    missing_cells: &[Cell],
) -> Result<SeriesMatrix, SindyError> {
    refine_with(model, imputed, missing_cells, 1, RefineSource::Refined)
}

/// Where the predecessor row of a refined cell comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineSource {
    /// The row as already refined in this pass (a forward chain).
    #[default]
    Refined,
    /// The row as it was before this pass, i.e. the imputer's output on the
    /// first pass.
    Imputed,
}

/// [`refine_imputation`] repeated `passes` times.
pub fn refine_imputation_passes(
    model: &SindyModel,
    imputed: &SeriesMatrix,
    missing_cells: &[Cell],
    passes: usize,
) -> Result<SeriesMatrix, SindyError> {
    refine_with(model, imputed, missing_cells, passes, RefineSource::Refined)
}

/// One-step refinement with an explicit predecessor source.
pub fn refine_with(
    model: &SindyModel,
    imputed: &SeriesMatrix,
    missing_cells: &[Cell],
    passes: usize,
    source: RefineSource,
) -> Result<SeriesMatrix, SindyError> {
    let width = imputed.stations();
    if model.stations.len() != width {
        return Err(SindyError::ShapeMismatch {
            model: model.stations.len(),
            series: width,
        });
    }
    if model.space != imputed.space() {
        return Err(SindyError::SpaceMismatch);
    }
    if !imputed.is_complete() {
        return Err(SindyError::InvalidModel(
            "refinement needs a fully imputed series".into(),
        ));
    }
    if missing_cells.is_empty() {
        return Ok(imputed.clone());
    }
    let cells: BTreeSet<Cell> = missing_cells.iter().copied().collect();
    let mut values = imputed.values().to_vec();
    for _ in 0..passes {
        let before = match source {
            RefineSource::Refined => None,
            RefineSource::Imputed => Some(values.clone()),
        };
        let mut row_cells = cells.iter().peekable();
        while let Some(&&(t, _)) = row_cells.peek() {
            let stations: Vec<usize> = std::iter::from_fn(|| row_cells.next_if(|c| c.0 == t))
                .map(|c| c.1)
                .collect();
            if t == 0 || t >= imputed.rows() {
                continue;
            }
            let prev = (t - 1) * width..t * width;
            let pred = match &before {
                Some(b) => model.predict_one_step(&b[prev]),
                None => model.predict_one_step(&values[prev]),
            };
            for s in stations {
                values[t * width + s] = pred[s];
            }
        }
    }
    Ok(imputed.completed(values)?)
}
