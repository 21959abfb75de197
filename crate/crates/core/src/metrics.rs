//! Response-prediction metrics (ACC, AUC) and the question-grouped mastery AUC.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scored binary outcome with its grouping keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredOutcome {
    pub score: f64,
    pub label: u8,
    pub question_id: String,
    pub concept_id: String,
    pub student_id: String,
    pub t: u64,
}

pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_pairs(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::Undefined("accuracy of an empty set"));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| (s >= threshold) == (y == 1))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

fn check_pairs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(y) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidArgument(format!("label {y} is not binary")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("score".into()));
    }
    Ok(())
}

/// Area under the ROC curve via the Mann-Whitney rank sum; tied scores
/// share their average rank, so a tied positive/negative pair counts 1/2.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_pairs(scores, labels)?;
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Undefined("AUC (needs both classes)"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += mean_rank * pos_in_tie as f64;
        i = j + 1;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaucmResult {
    pub value: f64,
    pub questions_used: usize,
    pub questions_skipped: usize,
    pub outcomes_used: usize,
}

/// Question-grouped AUC of mastery values, weighted by each question's
/// outcome count. Single-class questions are skipped.
pub fn gaucm(outcomes: &[ScoredOutcome]) -> Result<GaucmResult> {
    let mut groups: BTreeMap<&str, (&str, Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for o in outcomes {
        let g = groups
            .entry(o.question_id.as_str())
            .or_insert_with(|| (o.concept_id.as_str(), Vec::new(), Vec::new()));
        if g.0 != o.concept_id {
            return Err(Error::InvalidArgument(format!(
                "GAUCM needs one concept per question; `{}` has `{}` and `{}`",
                o.question_id, g.0, o.concept_id
            )));
        }
        g.1.push(o.score);
        g.2.push(o.label);
    }
    let (mut num, mut den) = (0.0, 0usize);
    let (mut used, mut skipped) = (0, 0);
    for (_, scores, labels) in groups.values() {
        match auc(scores, labels) {
            Ok(a) => {
                num += scores.len() as f64 * a;
                den += scores.len();
                used += 1;
            }
            Err(Error::Undefined(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::Undefined("GAUCM (every question group is single-class)"));
    }
    Ok(GaucmResult {
        value: num / den as f64,
        questions_used: used,
        questions_skipped: skipped,
        outcomes_used: den,
    })
}

/// Metric values for one evaluation, serialized with a fixed field order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: Option<f64>,
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gaucm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub monotonic_rate: Option<f64>,
    pub bce: f64,
    pub cm: f64,
    pub theta_reg: f64,
    pub total: f64,
    pub samples: usize,
    pub questions: usize,
    pub gaucm_skipped_questions: usize,
}

pub fn write_outcomes_csv<W: Write>(writer: W, outcomes: &[ScoredOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for o in outcomes {
        w.serialize(o)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_outcomes_csv<R: Read>(reader: R) -> Result<Vec<ScoredOutcome>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Reference implementations used to test the fast paths.
pub mod oracle {
    /// AUC by explicit comparison of every positive/negative pair.
    pub fn auc_all_pairs(scores: &[f64], labels: &[u8]) -> Option<f64> {
        let mut credit = 0.0;
        let mut pairs = 0u64;
        for (i, &yi) in labels.iter().enumerate() {
            if yi != 1 {
                continue;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yj != 0 {
                    continue;
                }
                pairs += 1;
                if scores[i] > scores[j] {
                    credit += 1.0;
                } else if scores[i] == scores[j] {
                    credit += 0.5;
                }
            }
        }
        (pairs > 0).then(|| credit / pairs as f64)
    }
}
