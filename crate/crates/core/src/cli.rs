//! Command-line entry point. Every stage reads and writes plain files in a
//! run directory:
//!
//! ```text
//! <run>/prepare.json split.json scales.json samples.csv windows.bin labels.csv rejections.csv
//! <run>/<scenario>/trials.jsonl best.json model.ckpt model.json report.json roc.csv
//! <run>/metrics.csv roc_points.csv
//! ```
//!
//! Scenario directories use `accel_demo` style names.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::autodiff::{load_checkpoint, save_checkpoint, AutodiffError};
use crate::datamodel::{load_cohort, load_report, save_report, DataError};
use crate::dataset::{label_cohort, load_prepared, prepare, save_prepared, DatasetError, LabeledSample, PrepareConfig};
use crate::eval::{
    bootstrap_report, cross_validate, predict, sofa_scores, youden_threshold, EvalError, EvalReport, FoldSummary,
    Scenario, TrainConfig, DEFAULT_RESAMPLES,
};
use crate::hpo::{finalize, run_search, DevObjective, HpoError, Hyperparameters, SearchConfig, SearchSpace, Trial, TrialStatus};
use crate::models::{AcuityModel, DepthPreset, Family, ModelError, ModelSpec};
use crate::phenotype::write_label_audit;
use crate::seed::derive_seed;
use crate::signal::SignalError;
use crate::synth::{generate_to_dir, SynthConfig, SynthError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing {what}: {} ({hint})", path.display())]
    Missing { what: &'static str, path: PathBuf, hint: &'static str },
    #[error("config conflict: {0}")]
    Conflict(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Hpo(#[from] HpoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Parser)]
#[command(name = "acuity", about = "ICU acuity assessment from accelerometry and EHR data", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort directory.
    Synth(SynthArgs),
    /// Write the phenotype label of every assessment window.
    Label(LabelArgs),
    /// Cut, scale and split windows into a run directory.
    Preprocess(PreprocessArgs),
    /// Search hyperparameters for one scenario.
    Tune(TuneArgs),
    /// Train the final model for one scenario.
    Train(TrainArgs),
    /// Score the holdout with a trained model.
    Evaluate(EvaluateArgs),
    /// Evaluate the SOFA threshold baseline on the holdout.
    Baseline(BaselineArgs),
    /// Collect scenario reports into the metrics table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 86)]
    n_patients: usize,
    #[arg(long, default_value_t = 1.0)]
    effect_size: f64,
    #[arg(long, default_value_t = 4.0)]
    window_hours: f64,
    #[arg(long, default_value_t = 4.0)]
    assessment_period_hours: f64,
    #[arg(long, default_value_t = 28.0 / 110.0)]
    unstable_patient_fraction: f64,
    #[arg(long, default_value_t = 7.0)]
    max_days: f64,
    /// Comma-separated device rates in Hz.
    #[arg(long, value_delimiter = ',', default_values_t = [32.0, 100.0])]
    rates: Vec<f64>,
}

#[derive(Debug, Args)]
struct LabelArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    assessment_period_hours: f64,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4.0)]
    window_hours: f64,
    #[arg(long, default_value_t = 4.0)]
    assessment_period_hours: f64,
    #[arg(long, default_value_t = 4.0)]
    clinical_window_hours: f64,
    #[arg(long, default_value_t = 0.7)]
    dev_fraction: f64,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    /// Split patients at random instead of by ever-unstable status.
    #[arg(long)]
    no_stratify: bool,
}

#[derive(Debug, Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value = "standard")]
    depth: DepthPreset,
    #[arg(long, default_value_t = 0.25)]
    width_scale: f64,
    #[arg(long, default_value_t = 50)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    scenario: Scenario,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    n_trials: usize,
    /// Restrict the model families searched (comma-separated).
    #[arg(long, value_delimiter = ',')]
    families: Vec<Family>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    scenario: Scenario,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train this family with explicit hyperparameters instead of the
    /// tuned ones.
    #[arg(long)]
    family: Option<Family>,
    #[arg(long, requires = "family")]
    batch_size: Option<usize>,
    #[arg(long, requires = "family")]
    learning_rate: Option<f64>,
    #[arg(long, requires = "family")]
    weight_decay: Option<f64>,
    #[arg(long, requires = "family")]
    downsample_factor: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    scenario: Scenario,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    resamples: usize,
    /// Probability at or above which a window is called unstable.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    resamples: usize,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Directory for metrics.csv and roc_points.csv; defaults to the run.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub const TRIALS_FILE: &str = "trials.jsonl";
pub const BEST_FILE: &str = "best.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MODEL_META_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.json";
pub const ROC_FILE: &str = "roc.csv";
pub const METRICS_TABLE_FILE: &str = "metrics.csv";
pub const ROC_POINTS_FILE: &str = "roc_points.csv";

/// Headline metrics in table column order.
pub const TABLE_COLUMNS: [(&str, &str); 5] = [
    ("auc", "AUC"),
    ("precision", "Precision"),
    ("sensitivity", "Sensitivity"),
    ("specificity", "Specificity"),
    ("f1", "F1-score"),
];

#[derive(Debug, Serialize, Deserialize)]
struct BestTrial {
    scenario: Scenario,
    search: SearchConfig,
    best: Trial,
}

/// Everything needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub scenario: Scenario,
    pub spec: ModelSpec,
    pub input_len: usize,
    pub hyperparameters: Hyperparameters,
    pub epochs: usize,
    pub folds: Vec<FoldSummary>,
    pub seed: u64,
}

/// Prepends `--key value` pairs from every `--config FILE` so flags given
/// on the command line win.
fn expand_config(args: Vec<String>) -> Result<Vec<String>, CliError> {
    let mut rest = Vec::new();
    let mut injected = Vec::new();
    let mut it = args.into_iter();
    let program = it.next().unwrap_or_else(|| "acuity".into());
    while let Some(a) = it.next() {
        let path = if a == "--config" {
            it.next().ok_or_else(|| CliError::Usage("--config requires a file".into()))?
        } else if let Some(p) = a.strip_prefix("--config=") {
            p.to_string()
        } else {
            rest.push(a);
            continue;
        };
        let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{path}:{}: expected key=value", n + 1)))?;
            let flag = format!("--{}", key.trim().replace('_', "-"));
            match value.trim() {
                "true" => injected.push(flag),
                "false" => {}
                v => {
                    injected.push(flag);
                    injected.push(v.to_string());
                }
            }
        }
    }
    let mut out = vec![program];
    let mut rest = rest.into_iter();
    out.extend(rest.next());
    out.extend(injected);
    out.extend(rest);
    Ok(out)
}

/// Parses and runs one command.
pub fn run<I, S>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args = expand_config(args.into_iter().map(Into::into).collect())?;
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            CliError::Usage(e.render().to_string())
        }
        _ => CliError::Usage(e.render().to_string().lines().next().unwrap_or("invalid arguments").to_string()),
    })?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Label(a) => label(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Tune(a) => tune(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Baseline(a) => baseline(a),
        Command::Report(a) => report(a),
    }
}

pub fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let wants_help = args.iter().any(|a| a == "--help" || a == "-h" || a == "help") || args.len() == 1;
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(text)) if wants_help => {
            println!("{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("error: {}", msg.lines().next().unwrap_or("unknown failure").trim_start_matches("error: "));
            ExitCode::FAILURE
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str, hint: &'static str) -> Result<T, CliError> {
    if !path.is_file() {
        return Err(CliError::Missing {
            what,
            path: path.to_path_buf(),
            hint,
        });
    }
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn require_run(run: &Path) -> Result<(), CliError> {
    let marker = run.join(crate::dataset::SAMPLES_FILE);
    if marker.is_file() {
        Ok(())
    } else {
        Err(CliError::Missing {
            what: "preprocessed samples",
            path: marker,
            hint: "run `acuity preprocess` first",
        })
    }
}

fn scenario_dir(run: &Path, scenario: Scenario) -> Result<PathBuf, CliError> {
    let dir = run.join(scenario.slug());
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn model_template(scenario: Scenario, args: &ModelArgs) -> Result<ModelSpec, CliError> {
    let fusion = scenario
        .fusion()
        .ok_or_else(|| CliError::Conflict("the sofa scenario has no model; use `acuity baseline`".into()))?;
    if !(args.width_scale > 0.0 && args.width_scale.is_finite()) {
        return Err(CliError::Usage("--width-scale must be positive".into()));
    }
    Ok(ModelSpec {
        family: Family::Vgg1d,
        width_scale: args.width_scale,
        depth: args.depth,
        fusion,
    })
}

fn base_train_config(args: &ModelArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: args.max_epochs,
        patience: args.patience,
        seed,
        ..TrainConfig::default()
    }
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let config = SynthConfig {
        n_patients: a.n_patients,
        seed: a.seed,
        window_hours: a.window_hours,
        assessment_period_hours: a.assessment_period_hours,
        effect_size: a.effect_size,
        unstable_patient_fraction: a.unstable_patient_fraction,
        max_days: a.max_days,
        nominal_rates: a.rates,
        ..SynthConfig::default()
    };
    generate_to_dir(&config, &a.out)?;
    write_json(&a.out.join("synth.json"), &config)
}

fn label(a: LabelArgs) -> Result<(), CliError> {
    let cohort = load_cohort(&a.cohort)?;
    let records = label_cohort(&cohort, a.assessment_period_hours);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = std::fs::File::create(&a.out).map_err(io_err(&a.out))?;
    write_label_audit(&records, file)?;
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<(), CliError> {
    let cohort = load_cohort(&a.cohort)?;
    let config = PrepareConfig {
        window_hours: a.window_hours,
        assessment_period_hours: a.assessment_period_hours,
        clinical_window_hours: a.clinical_window_hours,
        dev_fraction: a.dev_fraction,
        folds: a.folds,
        stratify: !a.no_stratify,
        seed: a.seed,
    };
    let prepared = prepare(&cohort, &config)?;
    save_prepared(&prepared, &a.run)?;
    Ok(())
}

fn tune(a: TuneArgs) -> Result<(), CliError> {
    require_run(&a.run)?;
    let template = model_template(a.scenario, &a.model)?;
    let prepared = load_prepared(&a.run)?;
    let dir = scenario_dir(&a.run, a.scenario)?;
    let mut space = SearchSpace::default();
    if !a.families.is_empty() {
        space.families = a.families.clone();
    }
    let search = SearchConfig {
        n_trials: a.n_trials,
        n_folds: prepared.dev.n_folds(),
        seed: derive_seed(a.seed, "tune"),
        workers: a.model.workers,
        ..SearchConfig::default()
    };
    let base = base_train_config(&a.model, search.seed);
    let objective = DevObjective::new(&prepared.dev, &space, template, &base)?;
    let outcome = run_search(&space, &search, |h, f, s| objective.evaluate(h, f, s), Some(&dir.join(TRIALS_FILE)))?;
    write_json(
        &dir.join(BEST_FILE),
        &BestTrial {
            scenario: a.scenario,
            search,
            best: outcome.best,
        },
    )
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    require_run(&a.run)?;
    let template = model_template(a.scenario, &a.model)?;
    let prepared = load_prepared(&a.run)?;
    let dir = scenario_dir(&a.run, a.scenario)?;
    let seed = derive_seed(a.seed, "train");
    let base = base_train_config(&a.model, seed);

    let best = match a.family {
        Some(family) => {
            let defaults = TrainConfig::default();
            let h = Hyperparameters {
                family,
                batch_size: a.batch_size.unwrap_or(defaults.batch_size),
                learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
                weight_decay: a.weight_decay.unwrap_or(defaults.weight_decay),
                downsample_factor: a.downsample_factor.unwrap_or(1),
            };
            let dev = prepared.dev.map_ref(|s| s.decimated(h.downsample_factor)).try_map(|r| r)?;
            let folds = cross_validate(&dev, h.model_spec(template), &h.train_config(&base), a.model.workers)?;
            Trial {
                id: 0,
                config: h,
                fold_aucs: folds.iter().map(|f| f.best_val_auc).collect(),
                best_epochs: folds.iter().map(|f| f.best_epoch).collect(),
                status: TrialStatus::Complete,
                objective: Some(folds.iter().map(|f| f.best_val_auc).sum::<f64>() / folds.len() as f64),
                error: None,
            }
        }
        None => {
            let tuned: BestTrial = read_json(
                &dir.join(BEST_FILE),
                "tuned hyperparameters",
                "run `acuity tune` first or pass --family",
            )?;
            if tuned.scenario != a.scenario {
                return Err(CliError::Conflict(format!(
                    "{} holds a search for {}, not {}",
                    dir.join(BEST_FILE).display(),
                    tuned.scenario,
                    a.scenario
                )));
            }
            tuned.best
        }
    };
    let (model, _) = finalize(&best, &prepared.dev, template, &base, seed)?;
    save_checkpoint(model.params(), &dir.join(CHECKPOINT_FILE))?;
    let meta = ModelMeta {
        scenario: a.scenario,
        spec: *model.spec(),
        input_len: model.input_len(),
        hyperparameters: best.config.clone(),
        epochs: crate::hpo::final_epochs(&best),
        folds: best
            .fold_aucs
            .iter()
            .zip(&best.best_epochs)
            .enumerate()
            .map(|(fold, (&auc, &epoch))| FoldSummary {
                fold,
                best_epoch: epoch,
                best_val_auc: auc,
            })
            .collect(),
        seed,
    };
    write_json(&dir.join(MODEL_META_FILE), &meta)
}

fn write_roc(report: &EvalReport, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "fpr", "tpr"])?;
    if let Ok(points) = report.roc() {
        for p in points {
            w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    require_run(&a.run)?;
    let dir = a.run.join(a.scenario.slug());
    let ckpt = dir.join(CHECKPOINT_FILE);
    if !ckpt.is_file() {
        return Err(CliError::Missing {
            what: "checkpoint",
            path: ckpt,
            hint: "run `acuity train` first",
        });
    }
    let meta: ModelMeta = read_json(&dir.join(MODEL_META_FILE), "model description", "run `acuity train` first")?;
    if meta.scenario != a.scenario {
        return Err(CliError::Conflict(format!("checkpoint was trained for {}", meta.scenario)));
    }
    let model = AcuityModel::from_params(meta.spec, meta.input_len, load_checkpoint(&ckpt)?)?;
    let prepared = load_prepared(&a.run)?;
    let factor = meta.hyperparameters.downsample_factor;
    let test: Vec<LabeledSample> = prepared
        .holdout
        .open()
        .iter()
        .map(|s| s.decimated(factor))
        .collect::<Result<_, _>>()?;
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet.into());
    }
    let refs: Vec<&LabeledSample> = test.iter().collect();
    let scores = predict(&model, &refs, meta.hyperparameters.batch_size)?;
    let labels: Vec<bool> = test.iter().map(|s| s.unstable).collect();
    let mut report = bootstrap_report(
        a.scenario,
        &scores,
        &labels,
        a.threshold,
        a.resamples,
        derive_seed(a.seed, "bootstrap"),
    )?;
    report.hyperparameters = Some(meta.hyperparameters);
    report.folds = meta.folds;
    save_report(&report, &dir.join(REPORT_FILE))?;
    write_roc(&report, &dir.join(ROC_FILE))
}

fn baseline(a: BaselineArgs) -> Result<(), CliError> {
    require_run(&a.run)?;
    let prepared = load_prepared(&a.run)?;
    let dev = prepared.dev.items();
    let dev_sofa: Vec<Option<u8>> = dev.iter().map(|s| s.sofa).collect();
    let dev_labels: Vec<bool> = dev.iter().map(|s| s.unstable).collect();
    let fitted = sofa_scores(&dev_sofa, &dev_labels);
    let choice = youden_threshold(&fitted.scores, &fitted.labels)?;

    let test = prepared.holdout.open();
    let sofa: Vec<Option<u8>> = test.iter().map(|s| s.sofa).collect();
    let labels: Vec<bool> = test.iter().map(|s| s.unstable).collect();
    let data = sofa_scores(&sofa, &labels);
    if data.scores.is_empty() {
        return Err(EvalError::EmptyTestSet.into());
    }
    let mut report = bootstrap_report(
        Scenario::Sofa,
        &data.scores,
        &data.labels,
        choice.threshold,
        a.resamples,
        derive_seed(a.seed, "bootstrap"),
    )?;
    report.dropped = data.dropped;
    let dir = scenario_dir(&a.run, Scenario::Sofa)?;
    save_report(&report, &dir.join(REPORT_FILE))?;
    write_roc(&report, &dir.join(ROC_FILE))
}

/// One table cell: bootstrap median and interval, or `NA` when undefined.
fn table_cell(report: &EvalReport, metric: &str) -> String {
    report
        .summary
        .get(metric)
        .map_or_else(|| "NA".to_string(), |m| m.cell())
}

fn report(a: ReportArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for scenario in Scenario::ALL {
        let path = a.run.join(scenario.slug()).join(REPORT_FILE);
        if path.is_file() {
            reports.push(load_report(&path)?);
        }
    }
    if reports.is_empty() {
        return Err(CliError::Missing {
            what: "scenario reports",
            path: a.run.join("<scenario>").join(REPORT_FILE),
            hint: "run `acuity evaluate` or `acuity baseline` first",
        });
    }
    let out = a.out.unwrap_or_else(|| a.run.clone());
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;

    let mut w = csv::Writer::from_path(out.join(METRICS_TABLE_FILE))?;
    let mut header = vec!["Scenario".to_string()];
    header.extend(TABLE_COLUMNS.iter().map(|(_, h)| h.to_string()));
    w.write_record(&header)?;
    for r in &reports {
        let mut row = vec![r.scenario.row_label().to_string()];
        row.extend(TABLE_COLUMNS.iter().map(|(k, _)| table_cell(r, k)));
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(&out))?;

    let mut w = csv::Writer::from_path(out.join(ROC_POINTS_FILE))?;
    w.write_record(["scenario", "threshold", "fpr", "tpr"])?;
    for r in &reports {
        if let Ok(points) = r.roc() {
            for p in points {
                w.write_record([
                    r.scenario.as_str().to_string(),
                    p.threshold.to_string(),
                    p.fpr.to_string(),
                    p.tpr.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(io_err(&out))?;
    Ok(())
}
