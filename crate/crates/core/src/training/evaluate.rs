//! Read-only evaluation of a model over a set of windows.

use std::collections::BTreeSet;

use super::config::TrainConfig;
use super::losses::{answer_sign, bce_loss, cm_loss, LossBreakdown};
use super::objective::theta_term;
use crate::data::{Catalog, DifficultyTable, StudentSequence};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, auc, gaucm, MetricsReport, ScoredOutcome};
use crate::model::Cmkt;
use crate::synthetic::MasteryPoint;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions {
    /// Compute the question-grouped mastery AUC (needs one concept per question).
    pub gaucm: bool,
    /// Keep the pre-answer mastery of every concept at every step.
    pub trajectories: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// Predicted probability of each answer after the first of its window.
    pub predictions: Vec<ScoredOutcome>,
    /// Pre-answer mastery of the practiced concept for each answer after
    /// the first of its window; filled only when GAUCM is requested.
    pub mastery_outcomes: Vec<ScoredOutcome>,
    pub trajectories: Vec<MasteryPoint>,
}

fn join_concepts(concepts: &Catalog, ks: &[usize]) -> String {
    ks.iter().map(|&k| concepts.id(k)).collect::<Vec<_>>().join(";")
}

/// Fraction of `(step, practiced concept)` pairs where the factual mastery
/// sits on the answer's side of the counterfactual one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MonotonicCount {
    pub satisfied: usize,
    pub total: usize,
}

impl MonotonicCount {
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.satisfied as f64 / self.total as f64)
    }
}

pub fn evaluate(
    model: &Cmkt,
    windows: &[&StudentSequence],
    diff: &DifficultyTable,
    concepts: &Catalog,
    cfg: &TrainConfig,
    opts: EvalOptions,
) -> Result<Evaluation> {
    let mut out = Evaluation::default();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let (mut bce_sum, mut cm_sum) = (0.0, 0.0);
    let mut mono = MonotonicCount::default();
    let mut questions = BTreeSet::new();

    for seq in windows {
        let trace = model.trace(&seq.records, diff)?;
        let mut window_scores = Vec::with_capacity(seq.len());
        let mut window_labels = Vec::with_capacity(seq.len());
        for (rec, step) in seq.records.iter().zip(&trace.steps) {
            questions.insert(rec.question);
            let sign = answer_sign(rec.answer)?;
            let factual: Vec<f64> = rec.concepts.iter().map(|&k| step.post_mastery[k]).collect();
            let counter: Vec<f64> = rec.concepts.iter().map(|&k| step.counterfactual_mastery[k]).collect();
            for (f, c) in factual.iter().zip(&counter) {
                mono.total += 1;
                mono.satisfied += usize::from((f - c) * sign > 0.0);
            }
            if cfg.cm_weight > 0.0 {
                cm_sum += cm_loss(&factual, &counter, rec.answer, cfg.mu)?;
            }
            if opts.trajectories {
                for (k, &m) in step.pre_mastery.iter().enumerate() {
                    out.trajectories.push(MasteryPoint {
                        student_id: rec.student_id.clone(),
                        t: rec.order_index,
                        concept_id: concepts.id(k).to_string(),
                        value: m,
                    });
                }
            }
            let Some(pred) = step.prediction else { continue };
            window_scores.push(pred);
            window_labels.push(rec.answer);
            out.predictions.push(ScoredOutcome {
                score: pred,
                label: rec.answer,
                question_id: rec.question_id.clone(),
                concept_id: join_concepts(concepts, &rec.concepts),
                student_id: rec.student_id.clone(),
                t: rec.order_index,
            });
            if opts.gaucm {
                if rec.concepts.len() != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "GAUCM needs one concept per question; `{}` has {}",
                        rec.question_id,
                        rec.concepts.len()
                    )));
                }
                let k = rec.concepts[0];
                out.mastery_outcomes.push(ScoredOutcome {
                    score: step.pre_mastery[k],
                    label: rec.answer,
                    question_id: rec.question_id.clone(),
                    concept_id: concepts.id(k).to_string(),
                    student_id: rec.student_id.clone(),
                    t: rec.order_index,
                });
            }
        }
        bce_sum += bce_loss(&window_scores, &window_labels)?.0;
        scores.extend(window_scores);
        labels.extend(window_labels);
    }

    let n = windows.len().max(1) as f64;
    let questions: Vec<usize> = questions.into_iter().collect();
    let theta = theta_term(model, &questions, diff, cfg.theta_weight, None)?;
    let loss = LossBreakdown::new(cfg.bce_weight * bce_sum / n, cfg.cm_weight * cm_sum / cfg.mu / n, theta);

    let (gaucm_value, skipped) = if opts.gaucm {
        match gaucm(&out.mastery_outcomes) {
            Ok(g) => (Some(g.value), g.questions_skipped),
            Err(Error::Undefined(_)) => (None, 0),
            Err(e) => return Err(e),
        }
    } else {
        (None, 0)
    };
    out.report = MetricsReport {
        acc: accuracy(&scores, &labels, 0.5).ok(),
        auc: auc(&scores, &labels).ok(),
        gaucm: gaucm_value,
        monotonic_rate: mono.rate(),
        bce: loss.bce,
        cm: loss.cm,
        theta_reg: loss.theta_reg,
        total: loss.total,
        samples: scores.len(),
        questions: questions.len(),
        gaucm_skipped_questions: skipped,
    };
    Ok(out)
}
