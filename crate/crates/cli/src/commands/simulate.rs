use std::fs::File;
use std::io::BufWriter;

use anyhow::{Context, Result};
use cmkt_core::synthetic::generate;
use serde_json::json;

use crate::config::RunConfig;
use crate::io::{ensure_dir, write_json};

pub const LOG_FILE: &str = "log.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const META_FILE: &str = "simulate.json";

pub fn run(cfg: &RunConfig) -> Result<()> {
    let corpus = generate(&cfg.simulate)?;
    ensure_dir(&cfg.out_dir)?;
    let log_path = cfg.out_dir.join(LOG_FILE);
    let truth_path = cfg.out_dir.join(TRUTH_FILE);
    let log = File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    corpus.write_log_csv(BufWriter::new(log))?;
    let truth = File::create(&truth_path).with_context(|| format!("creating {}", truth_path.display()))?;
    corpus.write_truth_csv(BufWriter::new(truth))?;
    write_json(
        &cfg.out_dir.join(META_FILE),
        &json!({
            "config": cfg.to_json(),
            "seed": cfg.seed,
            "students": cfg.simulate.n_students,
            "log_rows": corpus.log.len(),
            "truth_rows": corpus.truth.len(),
            "question_difficulty": corpus.question_difficulty,
        }),
    )?;
    println!(
        "wrote {} practice rows to {} and {} truth rows to {}",
        corpus.log.len(),
        log_path.display(),
        corpus.truth.len(),
        truth_path.display()
    );
    Ok(())
}
