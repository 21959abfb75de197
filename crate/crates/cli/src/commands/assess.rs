use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cmkt_core::model::Checkpoint;
use cmkt_core::Error as CoreError;
use serde_json::json;

use super::eval::{checkpoint_run, load_for_checkpoint};
use crate::config::RunConfig;
use crate::io::ensure_dir;

pub const HEADER: [&str; 6] = [
    "t",
    "question_id",
    "answer",
    "concept_id",
    "factual_mastery",
    "counterfactual_mastery",
];

/// `trajectory_<student>.csv`, with characters outside `[A-Za-z0-9_-]` replaced.
pub fn trajectory_path(out_dir: &Path, student: &str) -> PathBuf {
    let safe: String = student
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    out_dir.join(format!("trajectory_{safe}.csv"))
}

/// Writes one row per step and concept the student practiced, holding the
/// mastery after the observed answer and after the flipped answer.
///
/// The first line is a `#` comment carrying the resolved configuration.
pub fn run(cfg: &RunConfig, checkpoint: &Path, student: &str) -> Result<PathBuf> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let model = ckpt.to_model()?;
    let (run, _) = checkpoint_run(&ckpt)?;
    let seqs = load_for_checkpoint(cfg, &ckpt, &run)?;
    let mine: Vec<_> = seqs.iter().filter(|s| s.student_id == student).collect();
    if mine.is_empty() {
        return Err(CoreError::UnknownId {
            kind: "student",
            id: student.to_string(),
        }
        .into());
    }
    let involved: BTreeSet<usize> = mine
        .iter()
        .flat_map(|s| s.records.iter().flat_map(|r| r.concepts.iter().copied()))
        .collect();

    ensure_dir(&cfg.out_dir)?;
    let path = trajectory_path(&cfg.out_dir, student);
    let mut file = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    let meta = json!({ "config": cfg.to_json(), "seed": cfg.seed, "checkpoint": checkpoint, "student": student });
    writeln!(file, "# {}", serde_json::to_string(&meta)?)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(HEADER)?;
    let mut rows = 0;
    for seq in mine {
        let trace = model.trace(&seq.records, &ckpt.difficulty)?;
        for (rec, step) in seq.records.iter().zip(&trace.steps) {
            for &k in &involved {
                w.write_record([
                    rec.order_index.to_string(),
                    rec.question_id.clone(),
                    rec.answer.to_string(),
                    ckpt.concepts.id(k).to_string(),
                    step.post_mastery[k].to_string(),
                    step.counterfactual_mastery[k].to_string(),
                ])?;
                rows += 1;
            }
        }
    }
    w.flush()?;
    println!("wrote {rows} rows to {}", path.display());
    Ok(path)
}
