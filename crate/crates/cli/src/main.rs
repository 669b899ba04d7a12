//! `gapdyn`: ingest, mask, impute and refine hourly multi-station series.
//!
//! Standard output carries data or written paths only; diagnostics go to
//! standard error. Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod args;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};
use gapdyn_core::ingest;
use gapdyn_core::knn::{self, KnnConfig};
use gapdyn_core::missingness::{self, InjectionRecord};
use gapdyn_core::pipeline::{self, ExperimentConfig, MethodOutcome, RegimeConfig};
use gapdyn_core::sindy::{self, LibrarySpec, SindyModel, SindyParams};
use gapdyn_core::soft_impute::{self, SoftImputeConfig};
use gapdyn_core::synthetic::{self, SyntheticSpec};
use gapdyn_core::{HourRange, SeriesMatrix, Space};
use serde::Deserialize;
use thiserror::Error;

use args::{
    Cli, Command, ExperimentArgs, ImputeArgs, IngestArgs, InjectArgs, LambdaArg, MethodArg,
    RegimeArg, ReportArgs, SindyCommand, SindyFitArgs, SindyPredictArgs, SynthArgs,
};

#[derive(Debug, Error)]
enum CliError {
    #[error("Io: {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("InvalidJson: {}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("StationMismatch: model stations {model:?} differ from series stations {series:?}")]
    StationMismatch {
        model: Vec<String>,
        series: Vec<String>,
    },
    #[error(transparent)]
    Core(#[from] gapdyn_core::Error),
}

type Result<T, E = CliError> = std::result::Result<T, E>;

trait OrCore<T> {
    fn or_core(self) -> Result<T>;
}

impl<T, E: Into<gapdyn_core::Error>> OrCore<T> for std::result::Result<T, E> {
    fn or_core(self) -> Result<T> {
        self.map_err(|e| CliError::Core(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Ingest(a) => ingest_cmd(a),
        Command::Inject(a) => inject_cmd(a),
        Command::Impute(a) => impute_cmd(a),
        Command::Sindy(SindyCommand::Fit(a)) => sindy_fit_cmd(a),
        Command::Sindy(SindyCommand::Predict(a)) => sindy_predict_cmd(a),
        Command::Experiment(a) => experiment_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn usage_error(kind: ErrorKind, msg: &str) -> ! {
    Cli::command().error(kind, msg).exit()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn read_series(path: &Path) -> Result<SeriesMatrix> {
    ingest::parse_csv(&read_text(path)?).or_core()
}

/// Writes `text` to `output` and echoes the path, or prints `text` itself.
fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => {
            write_text(path, text)?;
            println!("{}", path.display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|source| CliError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })?;
        }
    }
    Ok(())
}

fn pretty_json(value: &impl serde::Serialize) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text
}

fn describe(m: &SeriesMatrix) -> String {
    let span = m.span();
    format!(
        "rows={} stations={} observed_fraction={:.4} span={}..{}",
        m.rows(),
        m.stations(),
        m.observed_fraction(),
        ingest::format_timestamp(span.start),
        ingest::format_timestamp(span.end),
    )
}

fn restrict_or_all(m: &SeriesMatrix, range: Option<HourRange>) -> Result<SeriesMatrix> {
    match range {
        Some(r) => m.restrict(r).or_core(),
        None => Ok(m.clone()),
    }
}

fn ingest_cmd(a: IngestArgs) -> Result<()> {
    let raw = read_series(&a.input)?;
    eprintln!("ingested {}", describe(&raw));
    let out = if a.normalize {
        let params = ingest::fit_normalization(&restrict_or_all(&raw, a.train_range)?).or_core()?;
        if let Some(path) = &a.params_out {
            write_text(path, &pretty_json(&params))?;
            eprintln!("normalization parameters written to {}", path.display());
        }
        ingest::normalize(&raw, &params).or_core()?
    } else {
        raw
    };
    emit(a.output.as_deref(), &ingest::write_csv(&out))
}

fn regime_config(regime: RegimeArg, min_len: usize, max_len: usize) -> RegimeConfig {
    match regime {
        RegimeArg::Random => RegimeConfig::Random,
        RegimeArg::Block => RegimeConfig::Block {
            min_len_hours: min_len,
            max_len_hours: max_len,
        },
        RegimeArg::Mixed => RegimeConfig::Mixed {
            min_len_hours: min_len,
            max_len_hours: max_len,
        },
    }
}

fn inject_cmd(a: InjectArgs) -> Result<()> {
    let m = read_series(&a.input)?;
    let (masked, record) = match a.regime {
        RegimeArg::Random => missingness::inject_random(&m, a.fraction, a.seed),
        RegimeArg::Block => missingness::inject_blocks(&m, a.fraction, a.min_len, a.max_len, a.seed),
        RegimeArg::Mixed => missingness::inject_mixed(&m, a.fraction, a.min_len, a.max_len, a.seed),
    }
    .or_core()?;
    eprintln!(
        "injected {} of {} observed cells (seed {})",
        record.cells.len(),
        m.observed_count(),
        a.seed
    );
    if let Some(path) = &a.record {
        write_text(path, &pretty_json(&record))?;
        println!("{}", path.display());
    }
    emit(a.output.as_deref(), &ingest::write_csv(&masked))
}

fn load_model(path: &Path, stations: &[String]) -> Result<SindyModel> {
    let model = SindyModel::from_json(&read_text(path)?).or_core()?;
    if model.stations != stations {
        return Err(CliError::StationMismatch {
            model: model.stations,
            series: stations.to_vec(),
        });
    }
    Ok(model)
}

fn impute_cmd(a: ImputeArgs) -> Result<()> {
    let hybrid = matches!(a.method, MethodArg::SiSindy | MethodArg::KnnSindy);
    if hybrid && a.model.is_none() && a.train_range.is_none() {
        usage_error(
            ErrorKind::MissingRequiredArgument,
            "--method si-sindy and knn-sindy need --model or --train-range",
        );
    }
    let raw = read_series(&a.input)?;
    let params = ingest::fit_normalization(&restrict_or_all(&raw, a.train_range)?).or_core()?;
    let z = ingest::normalize(&raw, &params).or_core()?;

    let filled = match a.method {
        MethodArg::Si | MethodArg::SiSindy => {
            let lambda = match a.lambda {
                LambdaArg::Fixed(l) => l,
                LambdaArg::Auto => {
                    let target = restrict_or_all(&z, a.train_range)?;
                    let sel = soft_impute::select_lambda(
                        &target,
                        &soft_impute::default_lambda_grid(),
                        0.1,
                        a.seed,
                        &SoftImputeConfig::default(),
                    )
                    .or_core()?;
                    for (l, rmse) in &sel.scores {
                        eprintln!("lambda {l:.6}: holdout rmse {rmse:.6}");
                    }
                    sel.lambda
                }
            };
            eprintln!("lambda={lambda}");
            let cfg = SoftImputeConfig {
                lambda,
                ..Default::default()
            };
            let out = soft_impute::soft_impute(&z, &cfg).or_core()?;
            let c = &out.convergence;
            eprintln!(
                "soft impute: iterations={} final_delta={:e} converged={}",
                c.iterations, c.final_delta, c.converged
            );
            out.matrix
        }
        MethodArg::Knn | MethodArg::KnnSindy => {
            let cfg = KnnConfig {
                k: a.k,
                ..Default::default()
            };
            eprintln!("knn: k={}", a.k);
            knn::knn_impute(&z, &cfg).or_core()?
        }
    };

    let estimate = if hybrid {
        let model = match &a.model {
            Some(path) => load_model(path, raw.station_ids())?,
            None => {
                let train = restrict_or_all(&z, a.train_range)?;
                let model = sindy::fit(&train, &LibrarySpec::default(), &SindyParams::default())
                    .or_core()?;
                eprintln!("sindy: fitted on {} pairs", model.diagnostics.pairs);
                model
            }
        };
        let cells = z.missing_cells();
        let refined = match model.space {
            Space::Normalized => {
                let r = sindy::refine_with(&model, &filled, &cells, a.passes, a.source.into())
                    .or_core()?;
                ingest::denormalize(&r, &params).or_core()?
            }
            Space::Raw => {
                let raw_filled = ingest::denormalize(&filled, &params).or_core()?;
                sindy::refine_with(&model, &raw_filled, &cells, a.passes, a.source.into())
                    .or_core()?
            }
        };
        eprintln!("sindy: refined {} cells", cells.len());
        refined
    } else {
        ingest::denormalize(&filled, &params).or_core()?
    };

    // observed cells are copied from the input, never round-tripped
    let out = raw.fill_missing_from(&estimate).or_core()?;
    emit(a.output.as_deref(), &ingest::write_csv(&out))
}

fn sindy_fit_cmd(a: SindyFitArgs) -> Result<()> {
    let raw = read_series(&a.input)?;
    let train_raw = raw.restrict(a.train_range).or_core()?;
    let train = if a.normalize {
        let params = ingest::fit_normalization(&train_raw).or_core()?;
        if let Some(path) = &a.params_out {
            write_text(path, &pretty_json(&params))?;
            eprintln!("normalization parameters written to {}", path.display());
        }
        ingest::normalize(&train_raw, &params).or_core()?
    } else {
        train_raw
    };
    let spec = LibrarySpec {
        degree: a.degree,
        include_constant: !a.no_constant,
    };
    let params = SindyParams {
        threshold: a.threshold,
        ridge: a.ridge,
        max_rounds: a.max_rounds,
    };
    let model = sindy::fit_any_space(&train, &spec, &params).or_core()?;
    let d = &model.diagnostics;
    eprintln!(
        "sindy: pairs={} terms={} nonzero={:?} train_rmse={:?}",
        d.pairs,
        spec.len(train.stations()),
        d.nonzero,
        d.train_rmse
    );
    let mut text = model.to_json();
    text.push('\n');
    emit(a.output.as_deref(), &text)
}

fn sindy_predict_cmd(a: SindyPredictArgs) -> Result<()> {
    let states = read_series(&a.states)?;
    let model = load_model(&a.model, states.station_ids())?;
    let width = states.stations();
    let mut values = Vec::with_capacity(states.rows() * width);
    let mut mask = Vec::with_capacity(states.rows() * width);
    let mut predicted = 0;
    for t in 0..states.rows() {
        if states.row_complete(t) {
            predicted += 1;
            values.extend(model.predict_one_step(states.row_values(t)));
            mask.extend(std::iter::repeat(true).take(width));
        } else {
            values.extend(std::iter::repeat(f64::NAN).take(width));
            mask.extend(std::iter::repeat(false).take(width));
        }
    }
    // the prediction made from row t is for hour t + 1
    let out = SeriesMatrix::new(
        states.start_hour() + 1,
        states.station_ids().to_vec(),
        values,
        mask,
        model.space,
    )
    .or_core()?;
    eprintln!("predicted {predicted} of {} rows", out.rows());
    emit(a.output.as_deref(), &ingest::write_csv(&out))
}

/// Experiment file: the experiment configuration plus where the data comes
/// from. A relative `data` path is resolved against the file's directory.
#[derive(Debug, Deserialize)]
struct ExperimentFile {
    #[serde(default)]
    data: Option<PathBuf>,
    #[serde(default)]
    synthetic: Option<SyntheticSpec>,
    #[serde(flatten)]
    experiment: ExperimentConfig,
}

enum DataSource {
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

fn experiment_cmd(a: ExperimentArgs) -> Result<()> {
    let (file_cfg, mut source) = match &a.config {
        Some(path) => {
            let file: ExperimentFile = read_json(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            let source = match (file.data, file.synthetic) {
                (Some(d), _) => Some(DataSource::File(base.join(d))),
                (None, Some(spec)) => Some(DataSource::Synthetic(spec)),
                (None, None) => None,
            };
            (Some(file.experiment), source)
        }
        None => (None, None),
    };
    if let Some(d) = &a.data {
        source = Some(DataSource::File(d.clone()));
    }
    let Some(source) = source else {
        usage_error(
            ErrorKind::MissingRequiredArgument,
            "no data: pass --data or a config with a `data` path or `synthetic` spec",
        );
    };

    let mut cfg = match (file_cfg, a.train_range, a.eval_range) {
        (Some(c), _, _) => c,
        (None, Some(train), Some(eval)) => {
            let mut c = ExperimentConfig::new(train, eval);
            c.seed = env_seed();
            c
        }
        (None, _, _) => usage_error(
            ErrorKind::MissingRequiredArgument,
            "without --config both --train-range and --eval-range are required",
        ),
    };
    if let Some(r) = a.train_range {
        cfg.train_range = r;
    }
    if let Some(r) = a.eval_range {
        cfg.eval_range = r;
    }
    if let Some(levels) = a.levels {
        cfg.missing_levels = levels;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(regime) = a.regime {
        cfg.regime = regime_config(regime, a.min_len, a.max_len);
    }
    if let Some(k) = a.k {
        cfg.knn.k = k;
    }
    match a.lambda {
        Some(LambdaArg::Fixed(l)) => cfg.soft_impute.lambda = Some(l),
        Some(LambdaArg::Auto) => cfg.soft_impute.lambda = None,
        None => {}
    }

    let data = match source {
        DataSource::File(path) => read_series(&path)?,
        DataSource::Synthetic(spec) => synthetic::generate(&spec).series,
    };
    eprintln!("data {}", describe(&data));
    let run = pipeline::run_experiment_with_records(&data, &cfg).or_core()?;
    let report = &run.report;
    match &report.lambda {
        Ok(l) => eprintln!("lambda={l}"),
        Err(e) => eprintln!("lambda selection failed: {e}"),
    }
    if let Err(e) = &report.sindy {
        eprintln!("sindy fit failed: {e}");
    }
    eprint!("{}", summary_table(report));

    fs::create_dir_all(&a.out_dir).map_err(|source| CliError::Io {
        path: a.out_dir.clone(),
        source,
    })?;
    let json_path = a.out_dir.join("report.json");
    let csv_path = a.out_dir.join("report.csv");
    write_text(&json_path, &pipeline::emit_report(report, pipeline::ReportFormat::Json))?;
    write_text(&csv_path, &pipeline::emit_report(report, pipeline::ReportFormat::Csv))?;
    println!("{}", json_path.display());
    println!("{}", csv_path.display());
    for (level, record) in cfg.missing_levels.iter().zip(&run.injections) {
        let path = a.out_dir.join(format!("injection_{level}.json"));
        write_record(&path, record)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn env_seed() -> u64 {
    match std::env::var("GAPDYN_SEED") {
        Ok(text) => text.trim().parse().unwrap_or_else(|_| {
            usage_error(ErrorKind::InvalidValue, &format!("GAPDYN_SEED `{text}` is not a u64"))
        }),
        Err(_) => 0,
    }
}

fn write_record(path: &Path, record: &InjectionRecord) -> Result<()> {
    write_text(path, &pretty_json(record))
}

fn summary_table(report: &pipeline::ExperimentReport) -> String {
    let mut out = String::from("level");
    for m in pipeline::Method::ALL {
        let _ = write!(out, "\t{}", m.label());
    }
    out.push('\n');
    for level in &report.levels {
        let _ = write!(out, "{}", level.level);
        for r in &level.results {
            match (&r.outcome, r.pooled_ioa()) {
                (MethodOutcome::Failed { .. }, _) => out.push_str("\tfailed"),
                (_, Some(d)) => {
                    let _ = write!(out, "\t{d:.4}");
                }
                (_, None) => out.push_str("\t-"),
            }
        }
        out.push('\n');
    }
    out
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let text = read_text(&a.input)?;
    let report = pipeline::parse_report_json(&text).map_err(|source| CliError::Json {
        path: a.input.clone(),
        source,
    })?;
    emit(a.output.as_deref(), &pipeline::emit_report(&report, a.format.into()))
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let defaults = SyntheticSpec::default();
    let spec = SyntheticSpec {
        stations: a.stations,
        hours: a.hours,
        baseline_missing: a.missing,
        seed: a.seed,
        ..defaults
    };
    let data = synthetic::generate(&spec);
    eprintln!("generated {}", describe(&data.series));
    emit(a.output.as_deref(), &ingest::write_csv(&data.series))
}
