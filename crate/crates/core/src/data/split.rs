use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ingest::StudentSequence;
use crate::error::{Error, Result};

pub const NUM_FOLDS: usize = 5;

/// Student-level partition for one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Five folds whose test sets partition the students; the remaining 80% of
/// each fold is divided 8:2 into train and validation.
pub fn split_folds(student_ids: &[String], seed: u64) -> Result<Vec<FoldSplit>> {
    let mut ids: Vec<String> = student_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < NUM_FOLDS {
        return Err(Error::Data(format!(
            "cross-validation needs at least {NUM_FOLDS} students, got {}",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let mut bounds = Vec::with_capacity(NUM_FOLDS + 1);
    bounds.push(0);
    for f in 0..NUM_FOLDS {
        let size = n / NUM_FOLDS + usize::from(f < n % NUM_FOLDS);
        bounds.push(bounds[f] + size);
    }

    Ok((0..NUM_FOLDS)
        .map(|f| {
            let test = ids[bounds[f]..bounds[f + 1]].to_vec();
            let rest: Vec<String> = ids[..bounds[f]]
                .iter()
                .chain(&ids[bounds[f + 1]..])
                .cloned()
                .collect();
            // round(rest / 5), leaving at least one training student
            let n_val = ((rest.len() + 2) / 5).min(rest.len().saturating_sub(1));
            let (train, validation) = rest.split_at(rest.len() - n_val);
            FoldSplit {
                fold_id: f,
                train: train.to_vec(),
                validation: validation.to_vec(),
                test,
            }
        })
        .collect())
}

/// Windows of a dataset grouped by split role.
pub struct FoldData<'a> {
    pub train: Vec<&'a StudentSequence>,
    pub validation: Vec<&'a StudentSequence>,
    pub test: Vec<&'a StudentSequence>,
}

impl FoldSplit {
    pub fn partition<'a>(&self, sequences: &'a [StudentSequence]) -> FoldData<'a> {
        let mut role = HashMap::new();
        for s in &self.train {
            role.insert(s.as_str(), 0);
        }
        for s in &self.validation {
            role.insert(s.as_str(), 1);
        }
        for s in &self.test {
            role.insert(s.as_str(), 2);
        }
        let mut out = FoldData {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for seq in sequences {
            match role.get(seq.student_id.as_str()) {
                Some(0) => out.train.push(seq),
                Some(1) => out.validation.push(seq),
                Some(2) => out.test.push(seq),
                _ => {}
            }
        }
        out
    }
}
