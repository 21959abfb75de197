use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use cmkt_core::data::{ingest_csv, split_folds, StudentSequence};
use cmkt_core::metrics::write_outcomes_csv;
use cmkt_core::model::Checkpoint;
use cmkt_core::synthetic::{read_truth_csv, score_against_truth, MasteryPoint, TruthScore};
use cmkt_core::training::{evaluate, EvalOptions, Evaluation};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::exit::UsageError;
use crate::io::{ensure_dir, fmt_opt, remap, write_json};

pub const EVAL_FILE: &str = "eval.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const MASTERY_OUTCOMES_FILE: &str = "mastery_outcomes.csv";
pub const MASTERY_FILE: &str = "mastery.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
    Test,
    /// Every window of the log, ignoring the fold.
    All,
}

/// What `eval` computed, for callers that want the numbers without re-reading files.
#[derive(Clone, Debug)]
pub struct EvalResult {
    pub evaluation: Evaluation,
    pub truth: Option<TruthScore>,
}

/// The run configuration and fold a checkpoint was trained with.
pub fn checkpoint_run(ckpt: &Checkpoint) -> Result<(RunConfig, usize)> {
    let run = ckpt
        .run_config
        .get("run")
        .cloned()
        .ok_or_else(|| UsageError("checkpoint carries no run configuration".into()))?;
    let run: RunConfig = serde_json::from_value(run).context("checkpoint run configuration")?;
    let fold = ckpt
        .run_config
        .get("fold")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| UsageError("checkpoint carries no fold".into()))? as usize;
    Ok((run, fold))
}

/// Loads the log a checkpoint applies to (the checkpoint's own log unless
/// `cfg` names one) and re-indexes it against the checkpoint catalogs.
pub fn load_for_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint, run: &RunConfig) -> Result<Vec<StudentSequence>> {
    let path = cfg
        .data
        .log
        .as_deref()
        .or(run.data.log.as_deref())
        .ok_or_else(|| UsageError("no practice log given (use --log)".into()))?;
    let data = ingest_csv(path, &run.data.schema, run.data.windows)
        .with_context(|| format!("ingesting {}", path.display()))?;
    Ok(remap(&data, ckpt)?)
}

fn student_ids(seqs: &[StudentSequence]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    seqs.iter()
        .filter(|s| seen.insert(s.student_id.as_str()))
        .map(|s| s.student_id.clone())
        .collect()
}

fn write_mastery_csv(path: &Path, points: &[MasteryPoint]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["student_id", "t", "concept_id", "mastery"])?;
    for p in points {
        w.write_record([p.student_id.as_str(), &p.t.to_string(), &p.concept_id, &p.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn evaluate_checkpoint(cfg: &RunConfig, checkpoint: &Path, split: Split, truth: Option<&Path>) -> Result<EvalResult> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let model = ckpt.to_model()?;
    let (run, fold) = checkpoint_run(&ckpt)?;
    let seqs = load_for_checkpoint(cfg, &ckpt, &run)?;
    let windows: Vec<&StudentSequence> = match split {
        Split::All => seqs.iter().collect(),
        _ => {
            let splits = split_folds(&student_ids(&seqs), ckpt.seed)?;
            let parts = splits
                .get(fold)
                .ok_or_else(|| UsageError(format!("checkpoint fold {fold} out of range")))?
                .partition(&seqs);
            match split {
                Split::Train => parts.train,
                Split::Validation => parts.validation,
                _ => parts.test,
            }
        }
    };
    let opts = EvalOptions {
        gaucm: ckpt.questions.single_concept(),
        trajectories: true,
    };
    let evaluation = evaluate(&model, &windows, &ckpt.difficulty, &ckpt.concepts, &run.train, opts)?;
    let truth = match truth {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let points = read_truth_csv(file).with_context(|| format!("reading {}", path.display()))?;
            Some(score_against_truth(&evaluation.trajectories, &points)?)
        }
        None => None,
    };
    Ok(EvalResult { evaluation, truth })
}

pub fn run(cfg: &RunConfig, checkpoint: &Path, split: Split, truth: Option<&Path>) -> Result<()> {
    let result = evaluate_checkpoint(cfg, checkpoint, split, truth)?;
    let ev = &result.evaluation;
    ensure_dir(&cfg.out_dir)?;
    let mut doc = json!({
        "config": cfg.to_json(),
        "seed": cfg.seed,
        "checkpoint": checkpoint,
        "split": split,
        "report": ev.report,
    });
    if let Some(t) = &result.truth {
        doc["truth"] = json!(t);
    }
    write_json(&cfg.out_dir.join(EVAL_FILE), &doc)?;
    let predictions = File::create(cfg.out_dir.join(PREDICTIONS_FILE)).context("creating predictions.csv")?;
    write_outcomes_csv(BufWriter::new(predictions), &ev.predictions)?;
    if !ev.mastery_outcomes.is_empty() {
        let outcomes = File::create(cfg.out_dir.join(MASTERY_OUTCOMES_FILE)).context("creating mastery_outcomes.csv")?;
        write_outcomes_csv(BufWriter::new(outcomes), &ev.mastery_outcomes)?;
    }
    write_mastery_csv(&cfg.out_dir.join(MASTERY_FILE), &ev.trajectories)?;
    let r = &ev.report;
    println!(
        "{} samples: acc {} auc {} gaucm {} monotonic {}",
        r.samples,
        fmt_opt(r.acc),
        fmt_opt(r.auc),
        fmt_opt(r.gaucm),
        fmt_opt(r.monotonic_rate)
    );
    if let Some(t) = &result.truth {
        println!("truth: spearman {} mae {:.6} over {} points", fmt_opt(t.pooled.spearman), t.pooled.mae, t.pooled.n);
    }
    Ok(())
}
