use anyhow::Result;
use cmkt_core::data::{compute_difficulty, std_log_statistic};
use cmkt_core::Error as CoreError;
use serde_json::json;

use crate::config::RunConfig;
use crate::io::{ensure_dir, load_dataset, write_json};

/// Validates the log and exports its catalogs and whole-log difficulty
/// statistics. Training recomputes difficulty from each fold's training split.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let difficulty = compute_difficulty(
        data.records(),
        &data.questions,
        data.concepts.len(),
        cfg.model.c_q,
        cfg.model.c_k,
    )?;
    let std_log = match std_log_statistic(&data.sequences) {
        Ok(v) => Some(v),
        Err(CoreError::Undefined(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let students = data.student_ids().len();
    let records = data.records().count();
    ensure_dir(&cfg.out_dir)?;
    write_json(
        &cfg.out_dir.join("catalog.json"),
        &json!({ "concepts": data.concepts, "questions": data.questions }),
    )?;
    write_json(&cfg.out_dir.join("difficulty.json"), &difficulty)?;
    write_json(
        &cfg.out_dir.join("ingest.json"),
        &json!({
            "config": cfg.to_json(),
            "seed": cfg.seed,
            "students": students,
            "windows": data.sequences.len(),
            "records": records,
            "questions": data.questions.len(),
            "concepts": data.concepts.len(),
            "single_concept_questions": data.questions.single_concept(),
            "std_log": std_log,
        }),
    )?;
    println!(
        "{students} students, {} windows, {records} records, {} questions, {} concepts",
        data.sequences.len(),
        data.questions.len(),
        data.concepts.len()
    );
    Ok(())
}
