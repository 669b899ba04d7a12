//! Imputation of gappy multi-station hourly series.
//!
//! The crate compares two classic imputers, Soft Impute (iterative
//! soft-thresholded SVD) and row-wise KNN, with variants that refine their
//! output by one-step predictions of a sparse polynomial dynamics model
//! (SINDy) fitted on a clean training period. Quality is scored with
//! Willmott's index of agreement at cells that were hidden on purpose.
//!
//! Modules, bottom-up:
//! - [`series`]: the masked `T × S` matrix everything else passes around
//! - [`ingest`]: station CSV files and per-station z-scoring
//! - [`missingness`]: seeded random and block injection
//! - [`soft_impute`], [`knn`]: the two imputers
//! - [`sindy`]: library regression and refinement
//! - [`metrics`]: IOA and RMSE at known cells
//! - [`pipeline`]: the full sweep and its reports
//! - [`synthetic`]: generated datasets with known dynamics

pub mod ingest;
pub mod knn;
pub mod metrics;
pub mod missingness;
pub mod pipeline;
pub mod series;
pub mod sindy;
pub mod soft_impute;
pub mod synthetic;

pub use series::{Cell, HourRange, SeriesError, SeriesMatrix, Space};

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Series(#[from] series::SeriesError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Inject(#[from] missingness::InjectError),
    #[error(transparent)]
    SoftImpute(#[from] soft_impute::SoftImputeError),
    #[error(transparent)]
    Knn(#[from] knn::KnnError),
    #[error(transparent)]
    Sindy(#[from] sindy::SindyError),
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
