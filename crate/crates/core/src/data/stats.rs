use std::collections::HashMap;

use super::ingest::StudentSequence;
use crate::error::{Error, Result};

/// Mean per-student score volatility: for every (student, concept) pair with
/// more than one attempt, the population standard deviation of the 0/1
/// scores; averaged over a student's concepts, then over students.
pub fn std_log_statistic(sequences: &[StudentSequence]) -> Result<f64> {
    // student -> concept -> (n, sum); scores are 0/1 so sum of squares == sum
    let mut order: Vec<&str> = Vec::new();
    let mut per_student: HashMap<&str, HashMap<usize, (u64, u64)>> = HashMap::new();
    for seq in sequences {
        let entry = per_student.entry(seq.student_id.as_str()).or_insert_with(|| {
            order.push(seq.student_id.as_str());
            HashMap::new()
        });
        for r in &seq.records {
            for &k in &r.concepts {
                let c = entry.entry(k).or_insert((0, 0));
                c.0 += 1;
                c.1 += u64::from(r.answer);
            }
        }
    }

    let mut student_means = Vec::new();
    for s in order {
        let mut concepts: Vec<_> = per_student[s].iter().filter(|(_, c)| c.0 > 1).collect();
        if concepts.is_empty() {
            continue;
        }
        concepts.sort_by_key(|(k, _)| **k);
        let stds: Vec<f64> = concepts
            .iter()
            .map(|(_, &(n, ones))| {
                let p = ones as f64 / n as f64;
                (p * (1.0 - p)).sqrt()
            })
            .collect();
        student_means.push(stds.iter().sum::<f64>() / stds.len() as f64);
    }
    if student_means.is_empty() {
        return Err(Error::Undefined("statistic (no student has a concept with more than one attempt)"));
    }
    Ok(student_means.iter().sum::<f64>() / student_means.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ingest::PracticeRecord;

    fn seq(student: &str, items: &[(usize, u8)]) -> StudentSequence {
        StudentSequence {
            student_id: student.into(),
            window: 0,
            records: items
                .iter()
                .enumerate()
                .map(|(i, &(k, a))| PracticeRecord {
                    student_id: student.into(),
                    order_index: i as u64,
                    question_id: "q".into(),
                    answer: a,
                    concept_ids: vec![format!("k{k}")],
                    question: 0,
                    concepts: vec![k],
                })
                .collect(),
        }
    }

    /// Direct population std over an explicit list, used as the reference.
    fn pop_std(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
    }

    #[test]
    fn constant_scores_have_zero_spread() {
        assert_eq!(std_log_statistic(&[seq("a", &[(0, 1), (0, 1), (0, 1)])]).unwrap(), 0.0);
    }

    #[test]
    fn one_right_one_wrong_is_half() {
        assert_eq!(std_log_statistic(&[seq("a", &[(0, 1), (0, 0)])]).unwrap(), 0.5);
    }

    #[test]
    fn averages_concepts_then_students() {
        let a = seq("a", &[(0, 1), (0, 0), (0, 0), (1, 1), (1, 1), (2, 1)]);
        let b = seq("b", &[(0, 1), (0, 0)]);
        let expect_a = (pop_std(&[1.0, 0.0, 0.0]) + pop_std(&[1.0, 1.0])) / 2.0;
        let expect = (expect_a + 0.5) / 2.0;
        let got = std_log_statistic(&[a, b]).unwrap();
        assert!((got - expect).abs() < 1e-15);
    }

    #[test]
    fn undefined_without_repeats() {
        assert!(std_log_statistic(&[seq("a", &[(0, 1), (1, 0)])]).is_err());
    }
}
