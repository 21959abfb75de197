use anyhow::{Context, Result};
use cmkt_core::autodiff::{finite_difference_check, SlotCheck};
use cmkt_core::data::{compute_difficulty, Catalog, DifficultyTable, PracticeRecord, QuestionCatalog, StudentSequence};
use cmkt_core::model::{Cmkt, ModelConfig, ModelHyper};
use cmkt_core::training::batch_objective;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::RunConfig;
use crate::exit::{NumericFailure, UsageError};
use crate::io::{ensure_dir, write_json};

pub const REPORT_FILE: &str = "gradcheck.json";

/// A small random model and practice sequence, all drawn from the run seed.
pub struct Problem {
    pub model: Cmkt,
    pub sequence: StudentSequence,
    pub difficulty: DifficultyTable,
}

pub fn build_problem(cfg: &RunConfig) -> Result<Problem> {
    let g = &cfg.gradcheck;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let concepts_per = g.max_concepts_per_question.min(g.n_concepts);
    let questions = QuestionCatalog {
        questions: Catalog::from((0..g.n_questions).map(|q| format!("q{q}")).collect::<Vec<_>>()),
        concepts: (0..g.n_questions)
            .map(|_| {
                let n = rng.random_range(1..=concepts_per);
                let mut ks = sample(&mut rng, g.n_concepts, n).into_vec();
                ks.sort_unstable();
                ks
            })
            .collect(),
    };
    let records: Vec<PracticeRecord> = (0..g.steps)
        .map(|t| {
            let q = rng.random_range(0..g.n_questions);
            let ks = questions.concepts[q].clone();
            PracticeRecord {
                student_id: "gradcheck".into(),
                order_index: t as u64,
                question_id: format!("q{q}"),
                answer: u8::from(rng.random_bool(0.5)),
                concept_ids: ks.iter().map(|k| format!("k{k}")).collect(),
                question: q,
                concepts: ks,
            }
        })
        .collect();
    let difficulty = compute_difficulty(&records, &questions, g.n_concepts, g.levels, g.levels)?;
    let hyper = ModelHyper {
        c_q: g.levels,
        c_k: g.levels,
        head: cfg.model.head,
        zero_mastery_head: false,
        ..ModelHyper::uniform(g.d)
    };
    let model = Cmkt::new(ModelConfig::new(hyper, g.n_questions, g.n_concepts)?, cfg.seed)?;
    Ok(Problem {
        model,
        sequence: StudentSequence {
            student_id: "gradcheck".into(),
            window: 0,
            records,
        },
        difficulty,
    })
}

/// Checks every slot of the full training objective. `fault` names a slot
/// whose analytic gradient is deliberately corrupted before the comparison.
pub fn check(cfg: &RunConfig, fault: Option<&str>) -> Result<Vec<SlotCheck>> {
    let Problem {
        model,
        sequence,
        difficulty,
    } = build_problem(cfg)?;
    let fault_id = match fault {
        Some(name) => Some(
            model
                .params
                .id(name)
                .ok_or_else(|| UsageError(format!("--inject-fault: no parameter slot named `{name}`")))?,
        ),
        None => None,
    };
    let config = model.config.clone();
    let mut store = model.params.clone();
    let batch = [&sequence];
    let report = finite_difference_check(&mut store, cfg.gradcheck.epsilon, |s, grads| {
        let m = Cmkt::from_params(config.clone(), s.clone())?;
        match grads {
            Some(buf) => {
                let value = batch_objective(&m, &batch, &difficulty, &cfg.train, Some(&mut *buf))?.differentiated;
                if let Some(id) = fault_id {
                    let shape = s.value(id).shape().to_vec();
                    let g = buf.slot_mut(id, &shape);
                    let v = &mut g.values_mut()[0];
                    *v += 0.5 * v.abs() + 1e-3;
                }
                Ok(value)
            }
            None => Ok(batch_objective(&m, &batch, &difficulty, &cfg.train, None)?.differentiated),
        }
    })
    .context("gradient check")?;
    Ok(report)
}

pub fn run(cfg: &RunConfig, explicit_out: bool, fault: Option<&str>) -> Result<Vec<SlotCheck>> {
    let tol = cfg.gradcheck.tolerance;
    let report = check(cfg, fault)?;
    println!("{:<32} {:>12} {:>6} {:>14} {:>14}", "slot", "max_rel_err", "index", "analytic", "numeric");
    for r in &report {
        println!(
            "{:<32} {:>12.3e} {:>6} {:>14.6e} {:>14.6e}",
            r.name, r.max_rel_error, r.worst_index, r.analytic, r.numeric
        );
    }
    let worst = report
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .context("model has no parameters")?;
    println!("worst slot: {} ({:.3e}, tolerance {tol:e})", worst.name, worst.max_rel_error);
    if explicit_out {
        ensure_dir(&cfg.out_dir)?;
        write_json(
            &cfg.out_dir.join(REPORT_FILE),
            &json!({
                "config": cfg.to_json(),
                "seed": cfg.seed,
                "tolerance": tol,
                "slots": report,
                "worst": worst,
            }),
        )?;
    }
    let failing: Vec<&str> = report
        .iter()
        .filter(|r| !(r.max_rel_error < tol))
        .map(|r| r.name.as_str())
        .collect();
    if !failing.is_empty() {
        return Err(NumericFailure(format!(
            "gradient check failed for slot(s) {} (tolerance {tol:e})",
            failing.join(", ")
        ))
        .into());
    }
    Ok(report)
}
