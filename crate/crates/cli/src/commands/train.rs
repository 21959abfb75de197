use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use cmkt_core::data::{compute_difficulty, split_folds, Dataset, DifficultyTable, FoldData};
use cmkt_core::metrics::MetricsReport;
use cmkt_core::model::{Checkpoint, Cmkt, ModelConfig};
use cmkt_core::training::{evaluate, train, EvalOptions};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::io::{ensure_dir, fmt_opt, load_dataset, write_json};

pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const EPOCH_LOG_FILE: &str = "epochs.log";

pub const GAUCM_NOTICE: &str = "gaucm omitted: some questions carry more than one concept";

#[derive(Clone, Debug, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub initial_validation: MetricsReport,
    pub best_validation: MetricsReport,
    pub test: MetricsReport,
    #[serde(skip)]
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub folds: Vec<FoldResult>,
    pub acc: Option<f64>,
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaucm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotonic_rate: Option<f64>,
}

/// The checkpoint's `run_config` for a fold: the resolved configuration plus the fold index.
pub fn checkpoint_run_config(cfg: &RunConfig, fold: usize) -> serde_json::Value {
    json!({ "run": cfg.to_json(), "fold": fold })
}

pub fn fold_dir(cfg: &RunConfig, fold: usize) -> PathBuf {
    cfg.out_dir.join(format!("fold{fold}"))
}

/// Difficulty statistics from the training split only.
pub fn fold_difficulty(cfg: &RunConfig, data: &Dataset, parts: &FoldData<'_>) -> Result<DifficultyTable> {
    Ok(compute_difficulty(
        parts.train.iter().flat_map(|s| s.records.iter()),
        &data.questions,
        data.concepts.len(),
        cfg.model.c_q,
        cfg.model.c_k,
    )?)
}

/// Mean of the defined values; `None` when any fold left the metric undefined.
fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    let v = v?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn run_fold(cfg: &RunConfig, data: &Dataset, fold: usize, parts: &FoldData<'_>) -> Result<FoldResult> {
    let dir = fold_dir(cfg, fold);
    ensure_dir(&dir)?;
    let diff = fold_difficulty(cfg, data, parts)?;
    let model_cfg = ModelConfig::new(cfg.model.clone(), data.questions.len(), data.concepts.len())?;
    let model = Cmkt::new(model_cfg, cfg.seed)?;

    let mut log = String::from("epoch\tbce\tcm\ttheta_reg\tval_acc\tval_auc\n");
    let outcome = train(
        model,
        &parts.train,
        &parts.validation,
        &diff,
        &data.concepts,
        &cfg.train,
        |r| {
            let line = format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
                r.epoch,
                r.train.bce,
                r.train.cm,
                r.train.theta_reg,
                fmt_opt(r.validation.acc),
                fmt_opt(r.validation.auc)
            );
            eprintln!("fold {fold} {line}");
            let _ = writeln!(log, "{line}");
        },
    )
    .with_context(|| format!("training fold {fold}"))?;
    std::fs::write(dir.join(EPOCH_LOG_FILE), &log).context("writing the epoch log")?;

    let single = data.questions.single_concept();
    let opts = EvalOptions {
        gaucm: single,
        trajectories: false,
    };
    let best_validation = evaluate(&outcome.model, &parts.validation, &diff, &data.concepts, &cfg.train, opts)?.report;
    let test = evaluate(&outcome.model, &parts.test, &diff, &data.concepts, &cfg.train, opts)
        .with_context(|| format!("evaluating fold {fold}"))?
        .report;

    let checkpoint = dir.join(CHECKPOINT_FILE);
    Checkpoint::new(
        &outcome.model,
        cfg.seed,
        checkpoint_run_config(cfg, fold),
        &data.concepts,
        &data.questions,
        &diff,
    )
    .save(&checkpoint)?;

    let notices: Vec<&str> = if single { vec![] } else { vec![GAUCM_NOTICE] };
    write_json(
        &dir.join(METRICS_FILE),
        &json!({
            "config": cfg.to_json(),
            "seed": cfg.seed,
            "fold": fold,
            "windows": {
                "train": parts.train.len(),
                "validation": parts.validation.len(),
                "test": parts.test.len(),
            },
            "best_epoch": outcome.best_epoch,
            "stopped_early": outcome.stopped_early,
            "initial_validation": outcome.initial_validation,
            "best_validation": best_validation,
            "epochs": outcome.epochs,
            "test": test,
            "notices": notices,
        }),
    )?;
    println!(
        "fold {fold}: best epoch {}, test acc {} auc {} gaucm {}",
        outcome.best_epoch,
        fmt_opt(test.acc),
        fmt_opt(test.auc),
        fmt_opt(test.gaucm)
    );
    Ok(FoldResult {
        fold,
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
        initial_validation: outcome.initial_validation,
        best_validation,
        test,
        checkpoint,
    })
}

pub fn run(cfg: &RunConfig) -> Result<TrainSummary> {
    let data = load_dataset(cfg)?;
    let splits = split_folds(&data.student_ids(), cfg.seed)?;
    ensure_dir(&cfg.out_dir)?;
    let mut folds = Vec::new();
    for fold in cfg.fold.folds() {
        let parts = splits[fold].partition(&data.sequences);
        folds.push(run_fold(cfg, &data, fold, &parts)?);
    }
    let single = data.questions.single_concept();
    let summary = TrainSummary {
        acc: mean(folds.iter().map(|f| f.test.acc)),
        auc: mean(folds.iter().map(|f| f.test.auc)),
        gaucm: if single { mean(folds.iter().map(|f| f.test.gaucm)) } else { None },
        monotonic_rate: mean(folds.iter().map(|f| f.test.monotonic_rate)),
        folds,
    };
    let mut doc = json!({
        "config": cfg.to_json(),
        "seed": cfg.seed,
        "folds": summary.folds,
        "acc": summary.acc,
        "auc": summary.auc,
    });
    if single {
        doc["gaucm"] = json!(summary.gaucm);
    } else {
        doc["notices"] = json!([GAUCM_NOTICE]);
        eprintln!("notice: {GAUCM_NOTICE}");
    }
    if let Some(rate) = summary.monotonic_rate {
        doc["monotonic_rate"] = json!(rate);
    }
    write_json(&cfg.out_dir.join(SUMMARY_FILE), &doc)?;
    Ok(summary)
}
