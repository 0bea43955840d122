//! The `generate`, `train`, `eval` and `report` commands as library calls.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ess_core::encoder::{load_checkpoint, save_checkpoint};
use ess_core::env::dataset::{read_plan, read_trajectory, Dataset, MANIFEST_FILE};
use ess_core::env::{default_palette, generate_floorplan, random_walk, replay, FloorPlan};
use ess_core::ess::{EpochMetrics, LossMode, Trainer, TrainingSet};
use ess_core::eval::{evaluate, EvalReport};
use ess_tensor::ParameterSet;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::stats::{mean_sem, MeanSem};
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const EVAL_REPORT: &str = "eval.json";
pub const EVAL_SUMMARY: &str = "eval.md";
pub const EVAL_CONFIG: &str = "eval_config.toml";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";

#[derive(Clone, Debug)]
pub struct GenerateSummary {
    pub dataset_dir: PathBuf,
    pub frames: usize,
    pub eval_frames: Option<usize>,
}

pub fn plan_for(cfg: &RunConfig) -> Result<FloorPlan, CliError> {
    Ok(match &cfg.env.plan_file {
        Some(p) => read_plan(p)?,
        None => generate_floorplan(cfg.env.plan_seed, &cfg.env.plan)?,
    })
}

fn write_dataset(ds: &Dataset, dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    ds.write(dir)?;
    cfg.echo(dir)
}

/// Plan, walk (or recorded trajectory), replay, write.
pub fn generate(cfg: &RunConfig) -> Result<GenerateSummary, CliError> {
    let env = &cfg.env;
    let plan = plan_for(cfg)?;
    let palette = default_palette();
    let trajectory = match &env.trajectory {
        Some(p) => read_trajectory(p)?,
        None => random_walk(&plan, env.steps, &env.motion, env.walk_seed)?,
    };
    let frames = replay(&plan, &trajectory, &env.lighting, &palette, env.resolution, env.resolution)?;
    let ds = Dataset::from_frames(plan.clone(), palette.clone(), frames);
    write_dataset(&ds, &cfg.dataset_dir(), cfg)?;

    let eval_dir = cfg.eval_dataset_dir();
    let eval_frames = match env.eval_walk_seed {
        Some(seed) => {
            let walk = random_walk(&plan, env.steps, &env.motion, seed)?;
            let frames = replay(&plan, &walk, &env.lighting, &palette, env.resolution, env.resolution)?;
            let eval = Dataset::from_frames(plan, palette, frames);
            write_dataset(&eval, &eval_dir, cfg)?;
            Some(eval.len())
        }
        None => {
            if eval_dir.exists() {
                fs::remove_dir_all(&eval_dir)?;
            }
            None
        }
    };
    Ok(GenerateSummary {
        dataset_dir: cfg.dataset_dir(),
        frames: ds.len(),
        eval_frames,
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(CliError::Usage(format!(
            "no dataset at {} (run `ess-lab generate` first)",
            dir.display()
        )));
    }
    Ok(Dataset::load(dir)?)
}

/// The dataset downstream evaluation reads: the separate eval walk when one
/// was generated, the training dataset otherwise.
pub fn load_eval_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let dir = cfg.eval_dataset_dir();
    if dir.join(MANIFEST_FILE).is_file() {
        load_dataset(&dir)
    } else {
        load_dataset(&cfg.dataset_dir())
    }
}

pub fn training_set(cfg: &RunConfig, ds: &Dataset) -> Result<TrainingSet, CliError> {
    let res = cfg.arch.resolution;
    if let Some(img) = ds.images.first() {
        if img.width() != res || img.height() != res {
            return Err(CliError::Usage(format!(
                "dataset frames are {}x{} but arch.resolution is {res}",
                img.width(),
                img.height()
            )));
        }
    }
    if cfg.pretext.lighting_ids.is_empty() {
        return Ok(TrainingSet::from_dataset(ds));
    }
    let frames: Vec<u64> = ds.records.iter().map(|r| r.step).collect();
    Ok(TrainingSet::with_lighting(
        &ds.plan,
        &ds.palette,
        &frames,
        &ds.poses,
        &cfg.pretext.lighting_ids,
        res,
    )?)
}

fn write_atomic(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn save_atomic(path: &Path, cfg: &RunConfig, params: &ParameterSet<f32>) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    save_checkpoint(&tmp, &cfg.arch, params)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub epochs: Vec<EpochMetrics>,
    pub params: ParameterSet<f32>,
}

/// Trains into `run_dir`, saving the checkpoint after every epoch so a
/// non-finite abort leaves the last good one behind.
pub fn train_on(
    cfg: &RunConfig,
    set: &TrainingSet,
    run_dir: &Path,
    progress: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainSummary, CliError> {
    fs::create_dir_all(run_dir)?;
    cfg.echo(run_dir)?;
    let checkpoint = run_dir.join(CHECKPOINT_FILE);
    let log_path = run_dir.join(TRAIN_LOG);
    let mut trainer = Trainer::new(cfg.arch, cfg.loss.clone(), cfg.augment.clone(), cfg.train.clone())?;
    save_atomic(&checkpoint, cfg, &trainer.pair.query)?;
    let mut log = String::new();
    fs::write(&log_path, &log)?;
    let mut epochs = Vec::with_capacity(cfg.train.epochs);
    for _ in 0..cfg.train.epochs {
        match trainer.train_epoch(set) {
            Ok(m) => {
                log.push_str(&serde_json::to_string(&m)?);
                log.push('\n');
                fs::write(&log_path, &log)?;
                save_atomic(&checkpoint, cfg, &trainer.pair.query)?;
                progress(&m);
                epochs.push(m);
            }
            Err(e) => {
                let line = serde_json::json!({ "event": "aborted", "epoch": trainer.epochs_done(), "error": e.to_string() });
                log.push_str(&line.to_string());
                log.push('\n');
                fs::write(&log_path, &log)?;
                return Err(e.into());
            }
        }
    }
    Ok(TrainSummary {
        run_dir: run_dir.to_path_buf(),
        checkpoint,
        epochs,
        params: trainer.pair.query,
    })
}

pub fn train(cfg: &RunConfig, progress: &mut dyn FnMut(&EpochMetrics)) -> Result<TrainSummary, CliError> {
    let ds = load_dataset(&cfg.dataset_dir())?;
    let set = training_set(cfg, &ds)?;
    train_on(cfg, &set, &cfg.run_dir(), progress)
}

/// Flat name/value view of an evaluation, in a fixed order.
pub fn eval_metrics(report: &EvalReport) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    if let Some(p) = &report.probe {
        out.extend([
            ("probe_train_loss", p.train_loss),
            ("probe_test_loss", p.test_loss),
            ("probe_train_accuracy", p.train_accuracy),
            ("probe_test_accuracy", p.test_accuracy),
        ]);
    }
    if let Some(l) = &report.localization {
        out.extend([
            ("loc_train_loss", l.train_loss),
            ("loc_test_loss", l.test_loss),
            ("loc_position_error", l.position_error),
            ("loc_rotation_error", l.rotation_error),
            ("loc_position_drop", l.position_drop),
            ("loc_rotation_drop", l.rotation_drop),
        ]);
    }
    if let Some(c) = &report.clusters {
        out.extend([
            ("silhouette", c.silhouette),
            ("calinski_harabasz", c.calinski_harabasz),
            ("davies_bouldin", c.davies_bouldin),
        ]);
    }
    out
}

pub fn eval_table(report: &EvalReport) -> String {
    let mut s = String::from("| metric | value |\n|---|---|\n");
    for (k, v) in eval_metrics(report) {
        s.push_str(&format!("| {k} | {v:.6} |\n"));
    }
    s
}

/// Evaluates `params` and writes the JSON report and summary table to `dir`.
pub fn eval_on(
    cfg: &RunConfig,
    params: &ParameterSet<f32>,
    ds: &Dataset,
    dir: &Path,
) -> Result<EvalReport, CliError> {
    let report = evaluate(params, ds, &cfg.eval)?;
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(EVAL_REPORT), serde_json::to_string_pretty(&report)?)?;
    write_atomic(&dir.join(EVAL_SUMMARY), eval_table(&report))?;
    fs::write(dir.join(EVAL_CONFIG), cfg.to_toml()?)?;
    Ok(report)
}

pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalReport, CliError> {
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.run_dir().join(CHECKPOINT_FILE));
    if !path.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} not found", path.display())));
    }
    let params = load_checkpoint(&path, &cfg.arch)?;
    let ds = load_eval_dataset(cfg)?;
    eval_on(cfg, &params, &ds, &cfg.run_dir())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: LossMode,
    pub seed: u64,
    pub final_loss: f64,
    pub mean_positives: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: LossMode,
    pub metric: String,
    #[serde(flatten)]
    pub stats: MeanSem,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

pub fn summarize(runs: &[RunRecord], modes: &[LossMode]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &mode in modes {
        let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.mode == mode).collect();
        let Some(first) = mine.first() else { continue };
        let mut names = vec!["final_loss".to_string(), "mean_positives".to_string()];
        names.extend(first.metrics.keys().cloned());
        for name in names {
            let values: Vec<f64> = mine
                .iter()
                .filter_map(|r| match name.as_str() {
                    "final_loss" => Some(r.final_loss),
                    "mean_positives" => Some(r.mean_positives),
                    k => r.metrics.get(k).copied(),
                })
                .collect();
            rows.push(SummaryRow {
                mode,
                metric: name,
                stats: mean_sem(&values),
            });
        }
    }
    rows
}

pub fn report_table(summary: &[SummaryRow]) -> String {
    let modes: Vec<LossMode> = summary.iter().fold(Vec::new(), |mut v, r| {
        if !v.contains(&r.mode) {
            v.push(r.mode);
        }
        v
    });
    let mut metrics: Vec<&str> = Vec::new();
    for r in summary {
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
    }
    let mut s = String::from("| metric |");
    for m in &modes {
        s.push_str(&format!(" {} |", m.name()));
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(modes.len()));
    s.push('\n');
    for metric in metrics {
        s.push_str(&format!("| {metric} |"));
        for m in &modes {
            match summary.iter().find(|r| r.mode == *m && r.metric == metric) {
                Some(r) => s.push_str(&format!(" {:.4} ± {:.4} |", r.stats.mean, r.stats.sem)),
                None => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    s
}

/// Trains and evaluates every configured mode under every seed, then writes
/// per-run results and the mean ± standard error summary.
pub fn report(
    cfg: &RunConfig,
    progress: &mut dyn FnMut(&str, &EpochMetrics),
) -> Result<Report, CliError> {
    if cfg.report.seeds.is_empty() || cfg.report.modes.is_empty() {
        return Err(CliError::Usage("report needs at least one seed and one mode".into()));
    }
    let ds = load_dataset(&cfg.dataset_dir())?;
    let eval_ds = load_eval_dataset(cfg)?;
    let set = training_set(cfg, &ds)?;
    let root = cfg.run_dir();
    fs::create_dir_all(&root)?;
    cfg.echo(&root)?;
    let mut runs = Vec::new();
    for &mode in &cfg.report.modes {
        for &seed in &cfg.report.seeds {
            let mut run = cfg.clone();
            run.loss.mode = mode;
            run.train.seed = seed;
            run.validate()?;
            let label = format!("{}-s{seed}", mode.name());
            let dir = root.join(&label);
            let trained = train_on(&run, &set, &dir, &mut |m| progress(&label, m))?;
            let eval = eval_on(&run, &trained.params, &eval_ds, &dir)?;
            let last = trained.epochs.last();
            runs.push(RunRecord {
                mode,
                seed,
                final_loss: last.map_or(f64::NAN, |m| m.loss),
                mean_positives: last.map_or(f64::NAN, |m| m.mean_positives),
                metrics: eval_metrics(&eval).into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            });
        }
    }
    let summary = summarize(&runs, &cfg.report.modes);
    let report = Report { runs, summary };
    write_atomic(&root.join(REPORT_JSON), serde_json::to_string_pretty(&report)?)?;
    write_atomic(&root.join(REPORT_MD), report_table(&report.summary))?;
    Ok(report)
}
