use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::datasets::{split, Dataset, Subset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, shift_report, EvalReport, Metrics};
use crate::models::{train, ModelSpec, ParamVector};
use crate::requests::{apply, random_request, topk_request, AppliedRequest, Strategy, UnlearnRequest};
use crate::unlearn::{unlearn, Diagnostics};

/// The model every cell of one repeat starts from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseRecord {
    pub repeat: usize,
    pub seed: u64,
    pub theta_digest: String,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub test: Metrics,
    #[serde(skip)]
    pub runtime_seconds: f64,
}

/// One (method, ratio, repeat) cell. Wall-clock runtime is kept out of the
/// JSON form so that reports are reproducible byte for byte; it is written
/// to the CSV outputs instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRecord {
    pub method: String,
    pub unlearn_ratio: f64,
    pub feature_ratio: f64,
    pub repeat: usize,
    pub seed: u64,
    pub request_digest: String,
    /// Rows touched by the request.
    pub request_rows: usize,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub brier: f64,
    pub hsic_shift: f64,
    pub mi_shift: f64,
    /// Shifts with `θ*` predicting on the retained rows.
    pub hsic_shift_unlearned: f64,
    pub mi_shift_unlearned: f64,
    pub theta_digest: String,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl CellRecord {
    pub fn eval_report(&self) -> EvalReport {
        EvalReport {
            method: self.method.clone(),
            unlearn_ratio: self.unlearn_ratio,
            feature_ratio: self.feature_ratio,
            seed: self.seed,
            macro_f1: self.macro_f1,
            micro_f1: self.micro_f1,
            brier: self.brier,
            runtime_seconds: self.runtime_seconds,
            hsic_shift: self.hsic_shift,
            mi_shift: self.mi_shift,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); 0 for one value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub unlearn_ratio: f64,
    pub count: usize,
    pub macro_f1: MeanStd,
    pub micro_f1: MeanStd,
    pub brier: MeanStd,
    pub hsic_shift: MeanStd,
    pub mi_shift: MeanStd,
    #[serde(skip)]
    pub runtime_seconds: MeanStd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Failure {
    pub method: String,
    pub unlearn_ratio: f64,
    pub repeat: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config_digest: String,
    pub dataset_digest: String,
    /// Metrics are computed on the held-out split.
    pub evaluated_on: String,
    pub base_models: Vec<BaseRecord>,
    pub records: Vec<CellRecord>,
    pub aggregates: Vec<Aggregate>,
    pub failures: Vec<Failure>,
}

impl Report {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn aggregate(records: &[CellRecord], methods: &[String], ratios: &[f64]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &ratio in ratios {
        for method in methods {
            let cell: Vec<&CellRecord> = records
                .iter()
                .filter(|r| &r.method == method && r.unlearn_ratio == ratio)
                .collect();
            if cell.is_empty() {
                continue;
            }
            let stat = |f: fn(&CellRecord) -> f64| MeanStd::of(&cell.iter().map(|r| f(r)).collect::<Vec<_>>());
            out.push(Aggregate {
                method: method.clone(),
                unlearn_ratio: ratio,
                count: cell.len(),
                macro_f1: stat(|r| r.macro_f1),
                micro_f1: stat(|r| r.micro_f1),
                brier: stat(|r| r.brier),
                hsic_shift: stat(|r| r.hsic_shift),
                mi_shift: stat(|r| r.mi_shift),
                runtime_seconds: stat(|r| r.runtime_seconds),
            });
        }
    }
    out
}

struct Base {
    spec: ModelSpec,
    theta: Array1<f64>,
}

fn build_request(config: &ExperimentConfig, train_set: &Subset, ratio: f64, seed: u64) -> Result<UnlearnRequest> {
    let r = &config.request;
    let request = match r.strategy {
        Strategy::Random => random_request(train_set, ratio, r.mode, seed, r.feature_ratio)?,
        Strategy::TopK => topk_request(train_set, ratio, r.feature_ratio, r.mode)?,
    };
    Ok(request.with_replacement(r.replacement))
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    config: &ExperimentConfig,
    method: &str,
    base: &Base,
    train_set: &Subset,
    test_set: &Subset,
    request: &UnlearnRequest,
    applied: &AppliedRequest,
    repeat: usize,
    ratio: f64,
) -> Result<CellRecord> {
    let mut cfg = config.unlearn.clone().with_method(method);
    cfg.train = config.train;
    let result = unlearn(&base.spec, &base.theta, train_set, applied, &cfg)?;
    let theta_star = &result.theta_star.values;
    let metrics = evaluate(&base.spec, theta_star, test_set)?;
    let shift = shift_report(&base.spec, &base.theta, theta_star, train_set, applied, &cfg.independence)?;
    let record = CellRecord {
        method: method.to_string(),
        unlearn_ratio: ratio,
        feature_ratio: config.request.feature_ratio,
        repeat,
        seed: config.seed + repeat as u64,
        request_digest: request.digest(),
        request_rows: applied.delta_rows.len(),
        macro_f1: metrics.macro_f1,
        micro_f1: metrics.micro_f1,
        brier: metrics.brier,
        hsic_shift: shift.hsic_shift,
        mi_shift: shift.mi_shift,
        hsic_shift_unlearned: shift.hsic_shift_unlearned,
        mi_shift_unlearned: shift.mi_shift_unlearned,
        theta_digest: result.theta_star.content_digest(),
        diagnostics: result.diagnostics,
        runtime_seconds: result.runtime_seconds,
    };
    record.eval_report().validate()?;
    Ok(record)
}

/// Runs the full grid. `base_dir` resolves relative dataset paths.
/// `threads` bounds the worker pool (1 runs everything on one thread).
///
/// Cell errors are collected in [`Report::failures`]; only setup errors
/// (loading, splitting, pool creation) abort the run.
pub fn run_experiment(config: &ExperimentConfig, base_dir: &Path, threads: usize) -> Result<Report> {
    config.validate()?;
    let data: Dataset = config.dataset.load(base_dir)?;
    let parts = split(data.n_rows(), &config.split)?;
    let train_set = parts.train_subset(&data);
    let test_set = parts.test_subset(&data);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let ratios = &config.request.unlearn_ratios;

    let bases: Vec<Result<(Base, BaseRecord)>> = pool.install(|| {
        (0..config.repeats)
            .into_par_iter()
            .map(|repeat| {
                let seed = config.seed + repeat as u64;
                let spec = config.model.spec(&data, seed);
                let start = Instant::now();
                let outcome = train(&spec, &train_set, &config.train)?;
                let runtime_seconds = start.elapsed().as_secs_f64();
                let test = evaluate(&spec, &outcome.theta, &test_set)?;
                let record = BaseRecord {
                    repeat,
                    seed,
                    theta_digest: ParamVector::new(&spec, outcome.theta.clone())?.content_digest(),
                    epochs_run: outcome.epochs_run,
                    final_loss: outcome.final_loss,
                    test,
                    runtime_seconds,
                };
                Ok((Base { spec, theta: outcome.theta }, record))
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut requests = Vec::new();
    for (repeat, base) in bases.iter().enumerate() {
        for &ratio in ratios {
            let prepared = match base {
                Ok(_) => build_request(config, &train_set, ratio, config.seed + repeat as u64)
                    .and_then(|req| apply(&train_set, &req).map(|a| (req, a))),
                Err(e) => Err(Error::InvalidArgument(format!("base model failed: {e}"))),
            };
            requests.push((repeat, ratio, prepared));
        }
    }

    let cells: Vec<(usize, f64, &str, usize)> = requests
        .iter()
        .enumerate()
        .flat_map(|(i, &(repeat, ratio, _))| config.methods.iter().map(move |m| (repeat, ratio, m.as_str(), i)))
        .collect();
    let outcomes: Vec<Result<CellRecord>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(repeat, ratio, method, i)| {
                let (req, applied) = match &requests[i].2 {
                    Ok(p) => p,
                    Err(e) => return Err(Error::InvalidArgument(e.to_string())),
                };
                let base = &bases[repeat].as_ref().expect("checked when preparing requests").0;
                run_cell(config, method, base, &train_set, &test_set, req, applied, repeat, ratio)
            })
            .collect()
    });

    let mut records = Vec::new();
    for (&(repeat, ratio, method, _), outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => {
                log::error!("cell {method} ratio {ratio} repeat {repeat} failed: {e}");
                failures.push(Failure {
                    method: method.to_string(),
                    unlearn_ratio: ratio,
                    repeat,
                    error: e.to_string(),
                });
            }
        }
    }
    let aggregates = aggregate(&records, &config.methods, ratios);
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        config_digest: config.digest(),
        dataset_digest: data.digest(),
        evaluated_on: "test_split".into(),
        base_models: bases.into_iter().filter_map(|b| b.ok().map(|(_, r)| r)).collect(),
        records,
        aggregates,
        failures,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path.display().to_string(), e.to_string())
}

/// Writes `report.json`, `report.csv` (one row per cell) and `summary.csv`
/// (mean ± std per method and ratio) into `dir`.
pub fn write_reports(report: &Report, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write(&dir.join("report.json"), (json + "\n").as_bytes())?;

    let path = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record([
        "method",
        "ratio",
        "repeat",
        "macro_f1",
        "micro_f1",
        "brier",
        "runtime_s",
        "hsic_shift",
        "mi_shift",
    ])
    .map_err(|e| csv_error(&path, e))?;
    for r in &report.records {
        w.write_record([
            r.method.clone(),
            r.unlearn_ratio.to_string(),
            r.repeat.to_string(),
            r.macro_f1.to_string(),
            r.micro_f1.to_string(),
            r.brier.to_string(),
            r.runtime_seconds.to_string(),
            r.hsic_shift.to_string(),
            r.mi_shift.to_string(),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record(["method", "ratio", "f1_mean", "f1_std", "rt_seconds"])
        .map_err(|e| csv_error(&path, e))?;
    for a in &report.aggregates {
        w.write_record([
            a.method.clone(),
            a.unlearn_ratio.to_string(),
            format!("{:.4}", a.macro_f1.mean),
            format!("{:.4}", a.macro_f1.std),
            format!("{:.4}", a.runtime_seconds.mean),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
