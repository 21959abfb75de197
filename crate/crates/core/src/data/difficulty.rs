use serde::{Deserialize, Serialize};

use super::ingest::{PracticeRecord, QuestionCatalog};
use crate::error::{Error, Result};

/// Theta assigned to questions with no training attempts.
pub const UNSEEN_THETA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionDifficulty {
    pub wrong: u64,
    pub total: u64,
    pub theta: f64,
    pub level: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptDifficulty {
    pub theta: f64,
    pub level: usize,
}

/// Wrong-answer ratios per question and concept, discretized into levels `0..=C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyTable {
    pub c_q: usize,
    pub c_k: usize,
    pub questions: Vec<QuestionDifficulty>,
    pub concepts: Vec<ConceptDifficulty>,
}

/// `round(theta * c)` with halves rounded up, kept inside `0..=c`.
pub fn level_of(theta: f64, c: usize) -> usize {
    let l = (theta * c as f64 + 0.5).floor();
    (l.max(0.0) as usize).min(c)
}

impl DifficultyTable {
    pub fn question_level(&self, q: usize) -> usize {
        self.questions[q].level
    }

    pub fn question_theta(&self, q: usize) -> f64 {
        self.questions[q].theta
    }

    pub fn concept_level(&self, k: usize) -> usize {
        self.concepts[k].level
    }
}

/// Builds the table from (training) records.
///
/// Question levels are computed from the integer counts, so `wrong/total`
/// exactly halfway between two levels always rounds up.
pub fn compute_difficulty<'a, I>(
    records: I,
    catalog: &QuestionCatalog,
    n_concepts: usize,
    c_q: usize,
    c_k: usize,
) -> Result<DifficultyTable>
where
    I: IntoIterator<Item = &'a PracticeRecord>,
{
    if c_q == 0 || c_k == 0 {
        return Err(Error::InvalidArgument("difficulty constants must be >= 1".into()));
    }
    let mut wrong = vec![0u64; catalog.len()];
    let mut total = vec![0u64; catalog.len()];
    for r in records {
        total[r.question] += 1;
        wrong[r.question] += u64::from(r.answer == 0);
    }
    let questions: Vec<QuestionDifficulty> = (0..catalog.len())
        .map(|q| {
            if total[q] == 0 {
                QuestionDifficulty {
                    wrong: 0,
                    total: 0,
                    theta: UNSEEN_THETA,
                    level: level_of(UNSEEN_THETA, c_q),
                }
            } else {
                let (w, t, c) = (wrong[q] as u128, total[q] as u128, c_q as u128);
                QuestionDifficulty {
                    wrong: wrong[q],
                    total: total[q],
                    theta: wrong[q] as f64 / total[q] as f64,
                    level: ((2 * w * c + t) / (2 * t)) as usize,
                }
            }
        })
        .collect();

    let mut sums = vec![0.0; n_concepts];
    let mut counts = vec![0usize; n_concepts];
    for (q, concepts) in catalog.concepts.iter().enumerate() {
        for &k in concepts {
            sums[k] += questions[q].theta;
            counts[k] += 1;
        }
    }
    let concepts = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| {
            let theta = if n == 0 { UNSEEN_THETA } else { s / n as f64 };
            ConceptDifficulty {
                theta,
                level: level_of(theta, c_k),
            }
        })
        .collect();

    Ok(DifficultyTable {
        c_q,
        c_k,
        questions,
        concepts,
    })
}
