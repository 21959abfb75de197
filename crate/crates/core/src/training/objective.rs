//! The joint objective on the tape: response cross-entropy, counterfactual
//! hinge and difficulty regression.

use std::collections::BTreeSet;

use super::config::TrainConfig;
use super::losses::{answer_sign, LossBreakdown, PRED_CLAMP};
use crate::autodiff::{GradBuffer, NodeId, Tensor};
use crate::data::{DifficultyTable, PracticeRecord, StudentSequence};
use crate::error::{Error, Result};
use crate::model::{Cmkt, SequenceGraph};

/// Objective value of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveValue {
    pub loss: LossBreakdown,
    /// Sum of the scalar nodes handed to the backward pass.
    pub differentiated: f64,
    pub predictions: usize,
    pub clamped: usize,
}

struct WindowTerms {
    bce: Option<NodeId>,
    cm: Option<NodeId>,
    predictions: usize,
    clamped: usize,
}

fn sum_terms(g: &mut SequenceGraph<'_>, terms: &[NodeId], scale: f64) -> Result<Option<NodeId>> {
    if terms.is_empty() {
        return Ok(None);
    }
    let stacked = g.tape.concat(terms)?;
    let total = g.tape.sum(stacked);
    Ok(Some(g.tape.scale(total, scale)))
}

/// Builds the cross-entropy and hinge terms of one window. Step `t > 0`
/// is predicted from the mastery after step `t - 1`; the hinge covers every
/// step and the practiced concepts only.
fn window_terms(
    g: &mut SequenceGraph<'_>,
    records: &[PracticeRecord],
    diff: &DifficultyTable,
    cfg: &TrainConfig,
    scale: f64,
) -> Result<WindowTerms> {
    let with_cm = cfg.cm_weight > 0.0;
    let mut bce_terms = Vec::with_capacity(records.len());
    let mut cm_terms = Vec::with_capacity(records.len());
    let mut clamped = 0;
    let mut h = g.initial_state();
    let mut mastery: Option<NodeId> = None;
    for rec in records {
        if let Some(m) = mastery {
            let y = g.predict_response(m, rec.question, &rec.concepts)?;
            let raw = g.tape.scalar(y);
            let yc = g.tape.clamp(y, PRED_CLAMP, 1.0 - PRED_CLAMP);
            if g.tape.scalar(yc) != raw {
                clamped += 1;
            }
            let likelihood = if rec.answer == 1 { yc } else { g.tape.one_minus(yc) };
            bce_terms.push(g.tape.log(likelihood));
        }
        if with_cm {
            let step = g.counterfactual_step(h, rec, diff)?;
            let sign = answer_sign(rec.answer)?;
            let gap = g.tape.sub(step.factual, step.counterfactual)?;
            let margin = g.tape.affine(gap, -sign, 1.0);
            let hinge = g.tape.relu(margin);
            let sq = g.tape.square(hinge);
            cm_terms.push(g.tape.sum(sq));
            h = step.state;
            mastery = Some(step.mastery);
        } else {
            let p = g.encode_practice(rec, diff, None)?;
            h = g.step_state(h, p)?;
            mastery = Some(g.mastery(h)?);
        }
    }
    let predictions = bce_terms.len();
    Ok(WindowTerms {
        bce: sum_terms(g, &bce_terms, -cfg.bce_weight * scale)?,
        cm: sum_terms(g, &cm_terms, cfg.cm_weight * scale / cfg.mu)?,
        predictions,
        clamped,
    })
}

fn backward_sum(g: &mut SequenceGraph<'_>, nodes: &[NodeId], grads: Option<&mut GradBuffer>) -> Result<f64> {
    let Some(grads) = grads else {
        return Ok(nodes.iter().map(|&n| g.tape.scalar(n)).sum());
    };
    let mut root = None;
    for &n in nodes {
        root = Some(match root {
            None => n,
            Some(acc) => g.tape.add(acc, n)?,
        });
    }
    match root {
        None => Ok(0.0),
        Some(r) => {
            g.tape.backward(r, grads)?;
            Ok(g.tape.scalar(r))
        }
    }
}

fn graph(model: &Cmkt, track: bool) -> SequenceGraph<'_> {
    if track {
        SequenceGraph::new(model)
    } else {
        SequenceGraph::forward_only(model)
    }
}

/// Squared error between learned and statistical difficulty, averaged over
/// `questions` (which should be distinct) and multiplied by `weight`.
pub fn theta_term(
    model: &Cmkt,
    questions: &[usize],
    diff: &DifficultyTable,
    weight: f64,
    grads: Option<&mut GradBuffer>,
) -> Result<f64> {
    if questions.is_empty() || weight == 0.0 {
        return Ok(0.0);
    }
    let mut g = graph(model, grads.is_some());
    let mut learned = Vec::with_capacity(questions.len());
    for &q in questions {
        learned.push(g.learned_difficulty(q)?);
    }
    let learned = g.tape.concat(&learned)?;
    let target = Tensor::vector(questions.iter().map(|&q| diff.question_theta(q)).collect());
    let target = g.tape.constant(target);
    let residual = g.tape.sub(learned, target)?;
    let sq = g.tape.square(residual);
    let total = g.tape.sum(sq);
    let loss = g.tape.scale(total, weight / questions.len() as f64);
    backward_sum(&mut g, &[loss], grads)
}

/// Cross-entropy and hinge of one window scaled by `scale`, returned as
/// `(bce, cm, predictions, clamped)`. Gradients are added to `grads` when given.
pub fn window_loss(
    model: &Cmkt,
    records: &[PracticeRecord],
    diff: &DifficultyTable,
    cfg: &TrainConfig,
    scale: f64,
    grads: Option<&mut GradBuffer>,
) -> Result<(f64, f64, usize, usize)> {
    let mut g = graph(model, grads.is_some());
    let terms = window_terms(&mut g, records, diff, cfg, scale)?;
    let bce = terms.bce.map_or(0.0, |n| g.tape.scalar(n));
    let cm = terms.cm.map_or(0.0, |n| g.tape.scalar(n));
    let roots: Vec<NodeId> = terms.bce.into_iter().chain(terms.cm).collect();
    backward_sum(&mut g, &roots, grads)?;
    Ok((bce, cm, terms.predictions, terms.clamped))
}

/// The full objective of a batch: window terms averaged over the batch plus
/// the difficulty regression over the batch's distinct questions.
pub fn batch_objective(
    model: &Cmkt,
    batch: &[&StudentSequence],
    diff: &DifficultyTable,
    cfg: &TrainConfig,
    mut grads: Option<&mut GradBuffer>,
) -> Result<ObjectiveValue> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let (mut bce, mut cm) = (0.0, 0.0);
    let (mut predictions, mut clamped) = (0, 0);
    for seq in batch {
        let (b, c, p, k) = window_loss(model, &seq.records, diff, cfg, scale, grads.as_deref_mut())?;
        bce += b;
        cm += c;
        predictions += p;
        clamped += k;
    }
    let questions: BTreeSet<usize> = batch.iter().flat_map(|s| s.records.iter().map(|r| r.question)).collect();
    let questions: Vec<usize> = questions.into_iter().collect();
    let theta = theta_term(model, &questions, diff, cfg.theta_weight, grads)?;
    Ok(ObjectiveValue {
        loss: LossBreakdown::new(bce, cm, theta),
        differentiated: bce + cm + theta,
        predictions,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParameterStore;
    use crate::data::{compute_difficulty, Catalog, QuestionCatalog};
    use crate::model::{ModelConfig, ModelHyper};
    use crate::training::losses::{bce_loss, cm_loss, theta_reg_loss};

    fn fixture(len: usize) -> (Cmkt, StudentSequence, DifficultyTable) {
        let hyper = ModelHyper {
            c_q: 10,
            c_k: 10,
            ..ModelHyper::uniform(5)
        };
        let model = Cmkt::new(ModelConfig::new(hyper, 4, 3).unwrap(), 7).unwrap();
        let mut questions = QuestionCatalog {
            questions: Catalog::default(),
            concepts: Vec::new(),
        };
        for (q, ks) in [("q0", vec![0]), ("q1", vec![1, 2]), ("q2", vec![2]), ("q3", vec![0, 1])] {
            questions.questions.intern(q);
            questions.concepts.push(ks);
        }
        let records: Vec<PracticeRecord> = (0..len)
            .map(|t| {
                let q = (t * 3 + 1) % 4;
                PracticeRecord {
                    student_id: "s".into(),
                    order_index: t as u64,
                    question_id: format!("q{q}"),
                    answer: ((t * 7 + 2) % 3 != 0) as u8,
                    concept_ids: Vec::new(),
                    question: q,
                    concepts: questions.concepts[q].clone(),
                }
            })
            .collect();
        let diff = compute_difficulty(&records, &questions, 3, 10, 10).unwrap();
        let seq = StudentSequence {
            student_id: "s".into(),
            window: 0,
            records,
        };
        (model, seq, diff)
    }

    #[test]
    fn tape_terms_match_plain_losses() {
        let (model, seq, diff) = fixture(6);
        let cfg = TrainConfig::default();
        let trace = model.trace(&seq.records, &diff).unwrap();
        let preds: Vec<f64> = trace.steps.iter().filter_map(|s| s.prediction).collect();
        let labels: Vec<u8> = seq.records[1..].iter().map(|r| r.answer).collect();
        let (bce, _) = bce_loss(&preds, &labels).unwrap();
        let mut cm = 0.0;
        for (rec, st) in seq.records.iter().zip(&trace.steps) {
            let f: Vec<f64> = rec.concepts.iter().map(|&k| st.post_mastery[k]).collect();
            let c: Vec<f64> = rec.concepts.iter().map(|&k| st.counterfactual_mastery[k]).collect();
            cm += cm_loss(&f, &c, rec.answer, cfg.mu).unwrap();
        }
        let (b, c, p, _) = window_loss(&model, &seq.records, &diff, &cfg, 1.0, None).unwrap();
        assert_eq!(p, 5);
        assert!((b - bce).abs() < 1e-12, "{b} vs {bce}");
        assert!((c - cm).abs() < 1e-12, "{c} vs {cm}");

        let mut g = SequenceGraph::forward_only(&model);
        let qs = [0, 1, 3];
        let learned: Vec<f64> = qs
            .iter()
            .map(|&q| {
                let n = g.learned_difficulty(q).unwrap();
                g.tape.scalar(n)
            })
            .collect();
        let stat: Vec<f64> = qs.iter().map(|&q| diff.question_theta(q)).collect();
        let theta = theta_term(&model, &qs, &diff, 1.0, None).unwrap();
        assert!((theta - theta_reg_loss(&learned, &stat).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn total_is_the_differentiated_value() {
        let (model, seq, diff) = fixture(5);
        let cfg = TrainConfig::default();
        let mut grads = GradBuffer::for_store(&model.params);
        let v = batch_objective(&model, &[&seq, &seq], &diff, &cfg, Some(&mut grads)).unwrap();
        assert!((v.loss.total - v.differentiated).abs() < 1e-12);
        let plain = batch_objective(&model, &[&seq, &seq], &diff, &cfg, None).unwrap();
        assert_eq!(plain.loss, v.loss);
    }

    #[test]
    fn zero_cm_weight_reports_zero() {
        let (model, seq, diff) = fixture(5);
        let cfg = TrainConfig {
            cm_weight: 0.0,
            ..TrainConfig::default()
        };
        let v = batch_objective(&model, &[&seq], &diff, &cfg, None).unwrap();
        assert_eq!(v.loss.cm, 0.0);
        let full = batch_objective(&model, &[&seq], &diff, &TrainConfig::default(), None).unwrap();
        assert_eq!(v.loss.bce, full.loss.bce);
    }

    #[test]
    fn full_objective_passes_gradcheck() {
        let (mut model, seq, diff) = fixture(3);
        let cfg = TrainConfig::default();
        let config = model.config.clone();
        let report = crate::autodiff::finite_difference_check(&mut model.params, 1e-2, |store: &ParameterStore, grads| {
            let m = Cmkt::from_params(config.clone(), store.clone())?;
            Ok(batch_objective(&m, &[&seq], &diff, &cfg, grads)?.loss.total)
        })
        .unwrap();
        for s in &report {
            assert!(s.max_rel_error < 1e-4, "{s:?}");
        }
    }
}
