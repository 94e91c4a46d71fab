//! Subcommand implementations. Each returns `Ok(())` or an error whose
//! [`CliError::exit_code`] is the process status.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use sec2sec_core::data::{generate_synthetic, load_manifest, write_synthetic, build_examples, TensorCache};
use sec2sec_core::model::{load_checkpoint, save_checkpoint, Model, ModelConfig, Variant};
use sec2sec_core::train::{
    evaluate, grid_search, loss_csv, split_validation, Evaluation, Example, Metrics, MetricsReport, TrainConfig,
    TIMING_FIELDS,
};
use sec2sec_core::Error;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 0 success, 2 usage/config/input, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

pub const CONFIG_ECHO: &str = "config.resolved";
pub const CHECKPOINT: &str = "model.s2s";
pub const METRICS: &str = "metrics.json";
pub const LOSS_CSV: &str = "loss.csv";
pub const PREDICTIONS: &str = "predictions.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ALPHAS: &str = "alphas.csv";
pub const ALPHAS_MEAN: &str = "alphas_mean.csv";

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, contents).map_err(|e| io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

/// Create `out`, refusing to reuse a non-empty directory unless `force`.
pub fn prepare_out_dir(out: &Path, force: bool) -> CliResult {
    if out.exists() {
        if !out.is_dir() {
            return Err(CliError::Usage(format!("{} exists and is not a directory", out.display())));
        }
        let non_empty = fs::read_dir(out).map_err(|e| io(out, e))?.next().is_some();
        if non_empty && !force {
            return Err(CliError::Usage(format!(
                "{} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
    }
    fs::create_dir_all(out).map_err(|e| io(out, e))
}

/// Remove wall-clock fields so two reports can be compared byte for byte.
pub fn strip_timing(mut report: Value) -> Value {
    fn walk(v: &mut Value) {
        match v {
            Value::Object(map) => {
                for f in TIMING_FIELDS {
                    map.remove(f);
                }
                map.values_mut().for_each(walk);
            }
            Value::Array(items) => items.iter_mut().for_each(walk),
            _ => {}
        }
    }
    walk(&mut report);
    report
}

fn load_split(path: &Path, cfg: &ModelConfig, cache: &mut TensorCache) -> CliResult<Vec<Example>> {
    let manifest = load_manifest(path)?;
    if manifest.records.is_empty() {
        return Err(CliError::Core(Error::Input(format!("{} has no records", path.display()))));
    }
    Ok(build_examples(&manifest, cfg, cache)?)
}

/// Training and validation sets from the configured manifests.
fn train_val(cfg: &RunConfig, cache: &mut TensorCache) -> CliResult<(Vec<Example>, Vec<Example>)> {
    let manifest = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::Usage("no training manifest; pass --manifest or set `manifest`".into()))?;
    let all = load_split(manifest, &cfg.model, cache)?;
    match &cfg.val_manifest {
        Some(v) => Ok((all, load_split(v, &cfg.model, cache)?)),
        None => Ok(split_validation(all, cfg.val_fraction, cfg.train.seed)?),
    }
}

/// Grid-search one model configuration and optionally score a test set.
pub struct TrainedRun {
    pub model: Model,
    pub report: MetricsReport,
    pub history_csv: String,
    pub test_eval: Option<Evaluation>,
}

pub fn train_one(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[Example],
    val: &[Example],
    test: Option<&[Example]>,
) -> CliResult<TrainedRun> {
    let (winner, runs) = grid_search(model_cfg, train_cfg, train, val)?;
    let best = &runs[winner];
    let test_eval = test.map(|t| evaluate(&best.best, t)).transpose()?;
    let report = MetricsReport::from_grid(
        model_cfg,
        train_cfg.seed,
        winner,
        &runs,
        test_eval.as_ref().map(|e| e.metrics.clone()),
    );
    Ok(TrainedRun {
        model: best.best.clone(),
        history_csv: loss_csv(&best.history),
        report,
        test_eval,
    })
}

pub fn cmd_train(cfg: &RunConfig, out: &Path, force: bool) -> CliResult {
    cfg.validate()?;
    prepare_out_dir(out, force)?;
    write(&out.join(CONFIG_ECHO), cfg.echo())?;
    let mut cache = TensorCache::new();
    let (train, val) = train_val(cfg, &mut cache)?;
    let test = cfg
        .test_manifest
        .as_ref()
        .map(|p| load_split(p, &cfg.model, &mut cache))
        .transpose()?;
    let run = train_one(&cfg.model, &cfg.train, &train, &val, test.as_deref())?;
    save_checkpoint(&run.model, &out.join(CHECKPOINT))?;
    write_json(&out.join(METRICS), &run.report)?;
    write(&out.join(LOSS_CSV), run.history_csv)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalReport<'a> {
    checkpoint: String,
    manifest: String,
    variant: String,
    metrics: &'a Metrics,
}

fn predictions_csv(examples: &[Example], eval: &Evaluation) -> String {
    let width = eval.predictions.first().map_or(0, Vec::len);
    let mut s = String::from("id");
    for k in 0..width {
        s.push_str(&format!(",pred_{},target_{}", k + 1, k + 1));
    }
    s.push('\n');
    for (ex, p) in examples.iter().zip(&eval.predictions) {
        s.push_str(&ex.id);
        for (pv, t) in p.iter().zip(&ex.target) {
            s.push_str(&format!(",{pv},{t}"));
        }
        s.push('\n');
    }
    s
}

fn load_model(checkpoint: &Path) -> CliResult<Model> {
    if !checkpoint.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} not found", checkpoint.display())));
    }
    Ok(load_checkpoint(checkpoint)?)
}

pub fn cmd_eval(checkpoint: &Path, manifest: &Path, out: &Path, force: bool) -> CliResult {
    let model = load_model(checkpoint)?;
    let examples = load_split(manifest, &model.config, &mut TensorCache::new())?;
    prepare_out_dir(out, force)?;
    let eval = evaluate(&model, &examples)?;
    let report = EvalReport {
        checkpoint: checkpoint.display().to_string(),
        manifest: manifest.display().to_string(),
        variant: model.config.variant.to_string(),
        metrics: &eval.metrics,
    };
    write_json(&out.join(METRICS), &report)?;
    write(&out.join(PREDICTIONS), predictions_csv(&examples, &eval))?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub test_accuracy: Option<f64>,
    pub test_f1: Option<f64>,
    pub test_mean_accuracy: Option<f64>,
    pub val_score: f64,
    pub lr: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub mean_epoch_seconds: f64,
}

/// Train every variant, in fixed order, on one seeded synthetic dataset.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path, force: bool) -> CliResult {
    cfg.validate()?;
    prepare_out_dir(out, force)?;
    write(&out.join(CONFIG_ECHO), cfg.echo())?;
    let data = generate_synthetic(&cfg.synthetic)?;
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let model_cfg = ModelConfig {
            variant,
            interpretable: false,
            ..cfg.model.clone()
        };
        let train_all = data.train.examples(&model_cfg)?;
        let test = data.test.examples(&model_cfg)?;
        let (train, val) = split_validation(train_all, cfg.val_fraction, cfg.train.seed)?;
        let run = train_one(&model_cfg, &cfg.train, &train, &val, Some(&test))?;
        let t = run.report.test.as_ref().expect("test set given");
        rows.push(AblationRow {
            variant: variant.to_string(),
            test_accuracy: t.accuracy,
            test_f1: t.f1,
            test_mean_accuracy: (!t.mean_accuracy.is_empty()).then(|| t.selection_score()),
            val_score: run.report.validation.selection_score(),
            lr: run.report.lr,
            best_epoch: run.report.best_epoch,
            epochs_run: run.report.epochs_run,
            mean_epoch_seconds: run.report.mean_epoch_seconds,
        });
    }
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut csv = String::from(
        "variant,test_accuracy,test_f1,test_mean_accuracy,val_score,lr,best_epoch,epochs_run,mean_epoch_seconds\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.variant,
            opt(r.test_accuracy),
            opt(r.test_f1),
            opt(r.test_mean_accuracy),
            r.val_score,
            r.lr,
            r.best_epoch,
            r.epochs_run,
            r.mean_epoch_seconds
        ));
    }
    write(&out.join(ABLATION_CSV), csv)?;
    write_json(&out.join(ABLATION_JSON), &rows)?;
    Ok(())
}

/// Per-sample and dataset-mean attention weights over segments.
pub fn cmd_interpret(checkpoint: &Path, manifest: &Path, out: &Path, force: bool) -> CliResult {
    let model = load_model(checkpoint)?;
    if !model.config.interpretable {
        return Err(CliError::Usage(format!(
            "{} was not trained with interpretable = true",
            checkpoint.display()
        )));
    }
    let examples = load_split(manifest, &model.config, &mut TensorCache::new())?;
    prepare_out_dir(out, force)?;
    let eval = evaluate(&model, &examples)?;
    let n = model.config.n_segments;
    let mut rows = String::from("id");
    for k in 1..=n {
        rows.push_str(&format!(",alpha_{k}"));
    }
    rows.push('\n');
    let mut mean = vec![0.0; n];
    for (ex, alphas) in examples.iter().zip(&eval.alphas) {
        let a = alphas.as_ref().expect("interpretable model yields weights");
        rows.push_str(&ex.id);
        for (k, v) in a.iter().enumerate() {
            rows.push_str(&format!(",{v}"));
            mean[k] += v / examples.len() as f64;
        }
        rows.push('\n');
    }
    let mut mean_csv = String::from("segment,alpha\n");
    for (k, v) in mean.iter().enumerate() {
        mean_csv.push_str(&format!("{},{v}\n", k + 1));
    }
    write(&out.join(ALPHAS), rows)?;
    write(&out.join(ALPHAS_MEAN), mean_csv)?;
    Ok(())
}

/// Write a synthetic dataset (manifests plus token files).
pub fn cmd_synth(cfg: &RunConfig, out: &Path, force: bool) -> CliResult<(PathBuf, PathBuf)> {
    prepare_out_dir(out, force)?;
    let data = generate_synthetic(&cfg.synthetic)?;
    Ok(write_synthetic(&data, out)?)
}
