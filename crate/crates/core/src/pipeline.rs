//! The comparison experiment: fit SINDy on a clean training period, then for
//! each missing level hide cells in the evaluation period, impute them with
//! Soft Impute and KNN, refine both imputations with SINDy and score all four
//! estimates against the hidden values.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, IngestError, NormParams};
use crate::knn::{self, KnnConfig};
use crate::metrics::{self, CellScores, GroupScore};
use crate::missingness::{self, InjectError, InjectionRecord};
use crate::series::{Cell, HourRange, SeriesError, SeriesMatrix};
use crate::sindy::{self, FitDiagnostics, LibrarySpec, RefineSource, SindyModel, SindyParams};
use crate::soft_impute::{self, Convergence, Init, SoftImputeConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("RangeOutsideData: range [{start}, {end}) is not covered by the data span")]
    RangeOutsideData { start: i64, end: i64 },
    #[error("InsufficientTrainingCoverage: training period is {observed:.3} observed, need >= 0.9")]
    InsufficientTrainingCoverage { observed: f64 },
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Inject(#[from] InjectError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SI")]
    SoftImpute,
    #[serde(rename = "KNN")]
    Knn,
    #[serde(rename = "SI-SINDy")]
    SoftImputeSindy,
    #[serde(rename = "KNN-SINDy")]
    KnnSindy,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::SoftImpute,
        Method::Knn,
        Method::SoftImputeSindy,
        Method::KnnSindy,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::SoftImpute => "SI",
            Method::Knn => "KNN",
            Method::SoftImputeSindy => "SI-SINDy",
            Method::KnnSindy => "KNN-SINDy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegimeConfig {
    Random,
    Block { min_len_hours: usize, max_len_hours: usize },
    Mixed { min_len_hours: usize, max_len_hours: usize },
}

impl Default for RegimeConfig {
    fn default() -> Self {
        RegimeConfig::Random
    }
}

/// Which rows the normalization statistics are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    #[default]
    Train,
    /// Training and evaluation periods together (before injection).
    Joint,
}

/// Which rows the imputers see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeScope {
    /// Training and evaluation periods stacked in time.
    #[default]
    Concatenated,
    EvalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftImputeSettings {
    /// Fixed λ; `None` selects λ on the training period.
    pub lambda: Option<f64>,
    pub lambda_grid: Vec<f64>,
    pub holdout_fraction: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub init: Init,
}

impl Default for SoftImputeSettings {
    fn default() -> Self {
        let base = SoftImputeConfig::default();
        Self {
            lambda: None,
            lambda_grid: soft_impute::default_lambda_grid(),
            holdout_fraction: 0.1,
            tol: base.tol,
            max_iter: base.max_iter,
            init: base.init,
        }
    }
}

impl SoftImputeSettings {
    fn config(&self, lambda: f64) -> SoftImputeConfig {
        SoftImputeConfig {
            lambda,
            tol: self.tol,
            max_iter: self.max_iter,
            init: self.init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SindySettings {
    #[serde(flatten)]
    pub library: LibrarySpec,
    #[serde(flatten)]
    pub params: SindyParams,
    pub passes: usize,
    pub source: RefineSource,
}

impl Default for SindySettings {
    fn default() -> Self {
        Self {
            library: LibrarySpec::default(),
            params: SindyParams::default(),
            passes: 1,
            source: RefineSource::Imputed,
        }
    }
}

pub fn default_levels() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train_range: HourRange,
    pub eval_range: HourRange,
    #[serde(default = "default_levels")]
    pub missing_levels: Vec<f64>,
    #[serde(default)]
    pub regime: RegimeConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub soft_impute: SoftImputeSettings,
    #[serde(default)]
    pub knn: KnnConfig,
    #[serde(default)]
    pub sindy: SindySettings,
    #[serde(default)]
    pub normalization_scope: NormScope,
    #[serde(default)]
    pub imputation_scope: ImputeScope,
}

impl ExperimentConfig {
    pub fn new(train_range: HourRange, eval_range: HourRange) -> Self {
        Self {
            train_range,
            eval_range,
            missing_levels: default_levels(),
            regime: RegimeConfig::default(),
            seed: 0,
            soft_impute: SoftImputeSettings::default(),
            knn: KnnConfig::default(),
            sindy: SindySettings::default(),
            normalization_scope: NormScope::default(),
            imputation_scope: ImputeScope::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::InvalidConfig(msg));
        if self.train_range.is_empty() || self.eval_range.is_empty() {
            return bad("train and eval ranges must be non-empty".into());
        }
        if self.train_range.overlaps(&self.eval_range) {
            return bad("train and eval ranges overlap".into());
        }
        for &l in &self.missing_levels {
            if !(l > 0.0 && l < 1.0) {
                return bad(format!("missing level {l} is outside (0, 1)"));
            }
        }
        if self.missing_levels.windows(2).any(|w| w[1] <= w[0]) {
            return bad("missing levels must be strictly increasing".into());
        }
        if self.knn.k == 0 {
            return bad("knn.k must be >= 1".into());
        }
        if self.sindy.passes == 0 {
            return bad("sindy.passes must be >= 1".into());
        }
        if self.soft_impute.lambda.is_none() && self.soft_impute.lambda_grid.is_empty() {
            return bad("soft_impute.lambda_grid is empty and no fixed lambda given".into());
        }
        self.soft_impute
            .config(self.soft_impute.lambda.unwrap_or(1.0))
            .validate()
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-level seed: `seed ⊕ hash(level)`.
pub fn level_seed(seed: u64, level: f64) -> u64 {
    seed ^ splitmix64(level.to_bits())
}

/// Iteration summary kept in reports (the per-iteration history is dropped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub iterations: usize,
    pub final_delta: f64,
    pub converged: bool,
}

impl From<&Convergence> for ConvergenceSummary {
    fn from(c: &Convergence) -> Self {
        Self {
            iterations: c.iterations,
            final_delta: c.final_delta,
            converged: c.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MethodOutcome {
    Ok {
        scores: CellScores,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        convergence: Option<ConvergenceSummary>,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    #[serde(flatten)]
    pub outcome: MethodOutcome,
}

impl MethodResult {
    pub fn pooled(&self) -> Option<&GroupScore> {
        match &self.outcome {
            MethodOutcome::Ok { scores, .. } => Some(&scores.pooled),
            MethodOutcome::Failed { .. } => None,
        }
    }

    pub fn pooled_ioa(&self) -> Option<f64> {
        self.pooled().and_then(GroupScore::ioa)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: f64,
    pub seed: u64,
    pub injected_cells: usize,
    /// Originally missing plus injected cells of the evaluation period.
    pub missing_cells: usize,
    pub results: Vec<MethodResult>,
}

impl LevelReport {
    pub fn result(&self, method: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }
}

/// One plot line: pooled IOA against missing level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSeries {
    pub method: Method,
    pub levels: Vec<f64>,
    pub ioa: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub stations: Vec<String>,
    pub normalization: NormParams,
    /// λ used by Soft Impute, or the reason it could not be chosen.
    pub lambda: Result<f64, String>,
    pub lambda_scores: Vec<(f64, f64)>,
    pub sindy: Result<FitDiagnostics, String>,
    pub levels: Vec<LevelReport>,
    pub series: Vec<MethodSeries>,
}

impl ExperimentReport {
    pub fn pooled_ioa(&self, method: Method, level: f64) -> Option<f64> {
        self.levels
            .iter()
            .find(|l| l.level == level)
            .and_then(|l| l.result(method))
            .and_then(MethodResult::pooled_ioa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Renders a report. JSON is pretty-printed; CSV has one row per
/// `(method, level, station | pooled)`.
pub fn emit_report(r: &ExperimentReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(r).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => emit_csv(r),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn emit_csv(r: &ExperimentReport) -> String {
    let mut out = String::from("method,level,scope,ioa,rmse,n_cells\n");
    for method in Method::ALL {
        for level in &r.levels {
            let Some(result) = level.result(method) else {
                continue;
            };
            match &result.outcome {
                MethodOutcome::Ok { scores, .. } => {
                    let groups = scores
                        .stations
                        .iter()
                        .map(|s| (s.station.as_str(), &s.score))
                        .chain(std::iter::once(("pooled", &scores.pooled)));
                    for (scope, g) in groups {
                        let _ = writeln!(
                            out,
                            "{},{},{},{},{},{}",
                            method.label(),
                            level.level,
                            scope,
                            opt(g.ioa()),
                            opt(g.rmse()),
                            g.n_cells()
                        );
                    }
                }
                MethodOutcome::Failed { .. } => {
                    let scopes = r.stations.iter().map(String::as_str).chain(std::iter::once("pooled"));
                    for scope in scopes {
                        let _ = writeln!(out, "{},{},{},,,", method.label(), level.level, scope);
                    }
                }
            }
        }
    }
    out
}

pub fn parse_report_json(text: &str) -> Result<ExperimentReport, serde_json::Error> {
    serde_json::from_str(text)
}

/// A report together with the injection records behind each level.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub injections: Vec<InjectionRecord>,
}

pub fn run_experiment(data: &SeriesMatrix, cfg: &ExperimentConfig) -> Result<ExperimentReport, PipelineError> {
    run_experiment_with_records(data, cfg).map(|run| run.report)
}

fn covered(data: &SeriesMatrix, range: HourRange) -> Result<SeriesMatrix, PipelineError> {
    let span = data.span();
    if range.start < span.start || range.end > span.end {
        return Err(PipelineError::RangeOutsideData {
            start: range.start,
            end: range.end,
        });
    }
    Ok(data.restrict(range)?)
}

struct Prepared {
    params: NormParams,
    train: SeriesMatrix,
    eval_raw: SeriesMatrix,
    eval: SeriesMatrix,
    // normalized imputation context and the eval row offset inside it
    context: SeriesMatrix,
    offset: usize,
}

fn prepare(data: &SeriesMatrix, cfg: &ExperimentConfig) -> Result<Prepared, PipelineError> {
    let train_raw = covered(data, cfg.train_range)?;
    let eval_raw = covered(data, cfg.eval_range)?;
    let observed = train_raw.observed_fraction();
    if observed < 0.9 {
        return Err(PipelineError::InsufficientTrainingCoverage { observed });
    }
    let hull = cfg.train_range.hull(&cfg.eval_range);
    let hull_raw = covered(data, hull)?;
    let params = match cfg.normalization_scope {
        NormScope::Train => ingest::fit_normalization(&train_raw)?,
        NormScope::Joint => {
            let joint_cells: Vec<Cell> = (0..hull_raw.rows())
                .filter(|&r| {
                    let h = hull_raw.timestamp(r);
                    !cfg.train_range.contains(h) && !cfg.eval_range.contains(h)
                })
                .flat_map(|r| (0..hull_raw.stations()).map(move |s| (r, s)))
                .collect();
            let mut p = ingest::fit_normalization(&hull_raw.with_masked(&joint_cells)?)?;
            p.fitted_on = hull;
            p
        }
    };
    let train = ingest::normalize(&train_raw, &params)?;
    let eval = ingest::normalize(&eval_raw, &params)?;
    let (context, offset) = match cfg.imputation_scope {
        ImputeScope::Concatenated => {
            let ctx = ingest::normalize(&hull_raw, &params)?;
            let offset = (cfg.eval_range.start - hull.start) as usize;
            (ctx, offset)
        }
        ImputeScope::EvalOnly => (eval.clone(), 0),
    };
    Ok(Prepared {
        params,
        train,
        eval_raw,
        eval,
        context,
        offset,
    })
}

fn inject(
    eval: &SeriesMatrix,
    regime: RegimeConfig,
    level: f64,
    seed: u64,
) -> Result<(SeriesMatrix, InjectionRecord), InjectError> {
    match regime {
        RegimeConfig::Random => missingness::inject_random(eval, level, seed),
        RegimeConfig::Block {
            min_len_hours,
            max_len_hours,
        } => missingness::inject_blocks(eval, level, min_len_hours, max_len_hours, seed),
        RegimeConfig::Mixed {
            min_len_hours,
            max_len_hours,
        } => missingness::inject_mixed(eval, level, min_len_hours, max_len_hours, seed),
    }
}

struct LevelContext<'a> {
    cfg: &'a ExperimentConfig,
    prep: &'a Prepared,
    lambda: &'a Result<f64, String>,
    model: &'a Result<SindyModel, String>,
}

impl LevelContext<'_> {
    fn run_level(&self, level: f64) -> Result<(LevelReport, InjectionRecord), PipelineError> {
        let prep = self.prep;
        let seed = level_seed(self.cfg.seed, level);
        let (eval_masked, record) = inject(&prep.eval, self.cfg.regime, level, seed)?;
        let shifted: Vec<Cell> = record
            .cells
            .iter()
            .map(|&(r, s)| (r + prep.offset, s))
            .collect();
        let input = match self.cfg.imputation_scope {
            ImputeScope::Concatenated => prep.context.with_masked(&shifted)?,
            ImputeScope::EvalOnly => eval_masked.clone(),
        };
        let missing = eval_masked.missing_cells();
        let eval_rows = prep.offset..prep.offset + prep.eval.rows();

        let si = self.lambda.clone().and_then(|lambda| {
            let cfg = self.cfg.soft_impute.config(lambda);
            let out = soft_impute::soft_impute(&input, &cfg).map_err(|e| e.to_string())?;
            Ok((out.matrix.slice_rows(eval_rows.clone()), ConvergenceSummary::from(&out.convergence)))
        });
        let knn = knn::knn_impute(&input, &self.cfg.knn)
            .map(|m| m.slice_rows(eval_rows.clone()))
            .map_err(|e| e.to_string());

        let refine = |base: &Result<SeriesMatrix, String>| -> Result<SeriesMatrix, String> {
            let model = self.model.as_ref().map_err(|e| format!("SINDy fit failed: {e}"))?;
            let base = base.as_ref().map_err(|e| format!("base imputation failed: {e}"))?;
            sindy::refine_with(model, base, &missing, self.cfg.sindy.passes, self.cfg.sindy.source)
                .map_err(|e| e.to_string())
        };
        let si_matrix = si.as_ref().map(|(m, _)| m.clone()).map_err(Clone::clone);
        let si_sindy = refine(&si_matrix);
        let knn_sindy = refine(&knn);
        let si_conv = si.as_ref().ok().map(|(_, c)| c.clone());

        let estimates: [(Method, Result<SeriesMatrix, String>, Option<ConvergenceSummary>); 4] = [
            (Method::SoftImpute, si_matrix, si_conv.clone()),
            (Method::Knn, knn, None),
            (Method::SoftImputeSindy, si_sindy, si_conv),
            (Method::KnnSindy, knn_sindy, None),
        ];
        let results = estimates
            .into_iter()
            .map(|(method, est, convergence)| {
                let outcome = est
                    .and_then(|m| ingest::denormalize(&m, &prep.params).map_err(|e| e.to_string()))
                    .and_then(|raw| {
                        metrics::score_at_cells(&prep.eval_raw, &raw, &record.cells)
                            .map_err(|e| e.to_string())
                    });
                MethodResult {
                    method,
                    outcome: match outcome {
                        Ok(scores) => MethodOutcome::Ok {
                            scores,
                            convergence,
                        },
                        Err(error) => MethodOutcome::Failed { error },
                    },
                }
            })
            .collect();
        Ok((
            LevelReport {
                level,
                seed,
                injected_cells: record.cells.len(),
                missing_cells: missing.len(),
                results,
            },
            record,
        ))
    }
}

/// Runs the full sweep and keeps the per-level injection records.
pub fn run_experiment_with_records(
    data: &SeriesMatrix,
    cfg: &ExperimentConfig,
) -> Result<ExperimentRun, PipelineError> {
    cfg.validate()?;
    let prep = prepare(data, cfg)?;

    let (lambda, lambda_scores) = match cfg.soft_impute.lambda {
        Some(l) => (Ok(l), Vec::new()),
        None => match soft_impute::select_lambda(
            &prep.train,
            &cfg.soft_impute.lambda_grid,
            cfg.soft_impute.holdout_fraction,
            splitmix64(cfg.seed ^ 0x5EED),
            &cfg.soft_impute.config(1.0),
        ) {
            Ok(sel) => (Ok(sel.lambda), sel.scores),
            Err(e) => (Err(e.to_string()), Vec::new()),
        },
    };
    let model = sindy::fit(&prep.train, &cfg.sindy.library, &cfg.sindy.params).map_err(|e| e.to_string());

    let ctx = LevelContext {
        cfg,
        prep: &prep,
        lambda: &lambda,
        model: &model,
    };
    let mut levels = Vec::with_capacity(cfg.missing_levels.len());
    let mut injections = Vec::with_capacity(cfg.missing_levels.len());
    for &level in &cfg.missing_levels {
        let (report, record) = ctx.run_level(level)?;
        levels.push(report);
        injections.push(record);
    }

    let series = Method::ALL
        .iter()
        .map(|&method| MethodSeries {
            method,
            levels: levels.iter().map(|l| l.level).collect(),
            ioa: levels
                .iter()
                .map(|l| l.result(method).and_then(MethodResult::pooled_ioa))
                .collect(),
        })
        .collect();

    Ok(ExperimentRun {
        report: ExperimentReport {
            config: cfg.clone(),
            seed: cfg.seed,
            stations: data.station_ids().to_vec(),
            normalization: prep.params.clone(),
            lambda,
            lambda_scores,
            sindy: model.map(|m| m.diagnostics),
            levels,
            series,
        },
        injections,
    })
}
