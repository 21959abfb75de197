use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use cmkt_core::data::{ingest_csv, Dataset, PracticeRecord, StudentSequence};
use cmkt_core::model::Checkpoint;
use cmkt_core::Error as CoreError;
use serde::Serialize;

use crate::config::RunConfig;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.log_path()?;
    ingest_csv(path, &cfg.data.schema, cfg.data.windows).with_context(|| format!("ingesting {}", path.display()))
}

/// Re-indexes a dataset's records against a checkpoint's catalogs.
pub fn remap(data: &Dataset, ckpt: &Checkpoint) -> Result<Vec<StudentSequence>, CoreError> {
    let mut out = Vec::with_capacity(data.sequences.len());
    for seq in &data.sequences {
        let mut records = Vec::with_capacity(seq.records.len());
        for rec in &seq.records {
            let question = ckpt
                .questions
                .questions
                .get(&rec.question_id)
                .ok_or_else(|| CoreError::UnknownId {
                    kind: "question",
                    id: rec.question_id.clone(),
                })?;
            let mut concepts = Vec::with_capacity(rec.concept_ids.len());
            for k in &rec.concept_ids {
                concepts.push(ckpt.concepts.get(k).ok_or_else(|| CoreError::UnknownId {
                    kind: "concept",
                    id: k.clone(),
                })?);
            }
            let mut expected = ckpt.questions.concepts[question].clone();
            let mut seen = concepts.clone();
            expected.sort_unstable();
            seen.sort_unstable();
            if expected != seen {
                return Err(CoreError::Data(format!(
                    "question `{}` is tagged differently than in the checkpoint",
                    rec.question_id
                )));
            }
            records.push(PracticeRecord {
                question,
                concepts,
                ..rec.clone()
            });
        }
        out.push(StudentSequence {
            student_id: seq.student_id.clone(),
            window: seq.window,
            records,
        });
    }
    Ok(out)
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}
