use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use super::config::ExperimentConfig;
use super::experiment::{run_experiment, write_reports};
use crate::datasets::{split, Dataset, Subset};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::models::{load_params, save_params, train, ModelSpec, ParamVector};
use crate::requests::{apply, random_request, topk_request, Strategy, UnlearnRequest};
use crate::unlearn::unlearn;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "unlearn", version, about = "Influence-function machine unlearning")]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on the training split and save its parameters.
    Train(Common),
    /// Apply one request to a saved model.
    Unlearn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Request in canonical text form; generated from the config's
        /// first ratio when absent.
        #[arg(long)]
        request: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
    },
    /// Test-split metrics of a saved model.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Run the full grid and write reports.
    Experiment(Common),
    /// Parse and check a config without running anything.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

struct Loaded {
    config: ExperimentConfig,
    base_dir: PathBuf,
    out_dir: PathBuf,
}

fn load(common: &Common) -> Result<Loaded> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let base_dir = common
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let out_dir = common
        .out
        .clone()
        .unwrap_or_else(|| base_dir.join(&config.output_dir));
    Ok(Loaded {
        config,
        base_dir,
        out_dir,
    })
}

struct Prepared {
    spec: ModelSpec,
    train: Subset,
    test: Subset,
}

fn prepare(l: &Loaded) -> Result<Prepared> {
    let data: Dataset = l.config.dataset.load(&l.base_dir)?;
    let parts = split(data.n_rows(), &l.config.split)?;
    Ok(Prepared {
        spec: l.config.model.spec(&data, l.config.seed),
        train: parts.train_subset(&data),
        test: parts.test_subset(&data),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_train(common: &Common) -> Result<i32> {
    let l = load(common)?;
    let p = prepare(&l)?;
    let outcome = train(&p.spec, &p.train, &l.config.train)?;
    let metrics = evaluate(&p.spec, &outcome.theta, &p.test)?;
    make_dir(&l.out_dir)?;
    let params = l.out_dir.join("model.params");
    save_params(&params, &p.spec, &outcome.theta)?;
    let summary = json!({
        "spec": p.spec,
        "epochs_run": outcome.epochs_run,
        "final_loss": outcome.final_loss,
        "final_grad_norm": outcome.final_grad_norm,
        "test": metrics,
        "theta_digest": ParamVector::new(&p.spec, outcome.theta)?.content_digest(),
    });
    write_json(&l.out_dir.join("model.json"), &summary)?;
    println!("{}", params.display());
    Ok(EXIT_OK)
}

fn cmd_unlearn(common: &Common, model: &Path, request: Option<&Path>, method: Option<&str>) -> Result<i32> {
    let l = load(common)?;
    let p = prepare(&l)?;
    let theta = load_params(model, &p.spec)?;
    let request = match request {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            UnlearnRequest::from_text(&text)?
        }
        None => {
            let r = &l.config.request;
            let ratio = r.unlearn_ratios[0];
            let req = match r.strategy {
                Strategy::Random => random_request(&p.train, ratio, r.mode, l.config.seed, r.feature_ratio)?,
                Strategy::TopK => topk_request(&p.train, ratio, r.feature_ratio, r.mode)?,
            };
            req.with_replacement(r.replacement)
        }
    };
    let applied = apply(&p.train, &request)?;
    let mut cfg = l.config.unlearn.clone();
    if let Some(m) = method {
        cfg.method = m.to_string();
    }
    cfg.train = l.config.train;
    let result = unlearn(&p.spec, &theta, &p.train, &applied, &cfg)?;
    let metrics = evaluate(&p.spec, &result.theta_star.values, &p.test)?;
    make_dir(&l.out_dir)?;
    fs::write(l.out_dir.join("request.txt"), request.to_text())
        .map_err(|e| Error::io(l.out_dir.join("request.txt"), e))?;
    let params = l.out_dir.join("theta_star.params");
    save_params(&params, &p.spec, &result.theta_star.values)?;
    let summary = json!({
        "method": result.method,
        "request_digest": request.digest(),
        "theta_digest": result.theta_star.content_digest(),
        "runtime_seconds": result.runtime_seconds,
        "diagnostics": result.diagnostics,
        "test": metrics,
    });
    write_json(&l.out_dir.join("unlearn.json"), &summary)?;
    println!("{}", params.display());
    Ok(EXIT_OK)
}

fn cmd_eval(common: &Common, model: &Path) -> Result<i32> {
    let l = load(common)?;
    let p = prepare(&l)?;
    let theta = load_params(model, &p.spec)?;
    let metrics = evaluate(&p.spec, &theta, &p.test)?;
    println!("{}", serde_json::to_string_pretty(&metrics).expect("metrics serialize"));
    Ok(EXIT_OK)
}

fn cmd_experiment(common: &Common, threads: usize) -> Result<i32> {
    let l = load(common)?;
    let report = run_experiment(&l.config, &l.base_dir, threads)?;
    write_reports(&report, &l.out_dir)?;
    for f in &report.failures {
        eprintln!(
            "failed: {} ratio {} repeat {}: {}",
            f.method, f.unlearn_ratio, f.repeat, f.error
        );
    }
    println!("{}", l.out_dir.join("report.json").display());
    Ok(if report.succeeded() { EXIT_OK } else { EXIT_RUNTIME })
}

fn cmd_validate(config: &Path) -> Result<i32> {
    let c = ExperimentConfig::load(config)?;
    println!("ok: {} (config digest {})", config.display(), c.digest());
    Ok(EXIT_OK)
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status: 0 success, 1 runtime failure, 2 usage or config
/// error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be ≥ 1");
        return EXIT_USAGE;
    }
    let outcome = match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Unlearn {
            common,
            model,
            request,
            method,
        } => cmd_unlearn(common, model, request.as_deref(), method.as_deref()),
        Command::Eval { common, model } => cmd_eval(common, model),
        Command::Experiment(c) => cmd_experiment(c, cli.threads),
        Command::ValidateConfig { config } => cmd_validate(config),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Unknown { .. } => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}
