//! A simulated student population with known mastery trajectories.
//!
//! Each student starts with a per-concept mastery, answers uniformly drawn
//! single-concept questions through a slip/guess logistic response model,
//! and gains mastery on the practiced concept after every answer (more after
//! a correct one). The hidden mastery before each answer is recorded so
//! that assessed mastery can be scored against it.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub n_students: usize,
    pub n_questions: usize,
    pub n_concepts: usize,
    pub questions_per_student: usize,
    /// Must be 1: every question carries exactly one concept.
    pub concepts_per_question: usize,
    pub seed: u64,
    pub difficulty_min: f64,
    pub difficulty_max: f64,
    /// Steepness of the logistic response curve.
    pub alpha: f64,
    /// Student ability is uniform on `ability_mean ± ability_spread`.
    pub ability_mean: f64,
    pub ability_spread: f64,
    /// Per-concept deviation from the student's ability, uniform on `±concept_spread`.
    pub concept_spread: f64,
    pub learn_correct_min: f64,
    pub learn_correct_max: f64,
    /// Learn rate after a wrong answer, as a fraction of the correct-answer rate.
    pub learn_incorrect_ratio_max: f64,
    pub slip_max: f64,
    pub guess_max: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_students: 200,
            n_questions: 50,
            n_concepts: 10,
            questions_per_student: 60,
            concepts_per_question: 1,
            seed: 0,
            difficulty_min: 0.2,
            difficulty_max: 0.8,
            alpha: 8.0,
            ability_mean: 0.45,
            ability_spread: 0.25,
            concept_spread: 0.1,
            learn_correct_min: 0.02,
            learn_correct_max: 0.06,
            learn_incorrect_ratio_max: 0.5,
            slip_max: 0.1,
            guess_max: 0.1,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.concepts_per_question != 1 {
            return Err(Error::InvalidArgument(format!(
                "concepts_per_question must be 1 (mastery AUC needs single-concept questions), got {}",
                self.concepts_per_question
            )));
        }
        if self.n_students == 0 || self.n_questions == 0 || self.n_concepts == 0 || self.questions_per_student == 0 {
            return Err(Error::InvalidArgument("oracle counts must be >= 1".into()));
        }
        if self.n_questions < self.n_concepts {
            return Err(Error::InvalidArgument(
                "need at least one question per concept".into(),
            ));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.difficulty_min) && unit(self.difficulty_max) && self.difficulty_min <= self.difficulty_max) {
            return Err(Error::InvalidArgument("difficulty range must lie in [0, 1]".into()));
        }
        if !(0.0..0.5).contains(&self.slip_max) || !(0.0..0.5).contains(&self.guess_max) {
            return Err(Error::InvalidArgument("slip and guess must lie in [0, 0.5)".into()));
        }
        if !(self.learn_correct_min >= 0.0 && self.learn_correct_min <= self.learn_correct_max) {
            return Err(Error::InvalidArgument("learn_correct range is invalid".into()));
        }
        if !unit(self.learn_incorrect_ratio_max) {
            return Err(Error::InvalidArgument("learn_incorrect_ratio_max must lie in [0, 1]".into()));
        }
        if !(self.alpha > 0.0) || self.ability_spread < 0.0 || self.concept_spread < 0.0 {
            return Err(Error::InvalidArgument("alpha must be positive and spreads non-negative".into()));
        }
        Ok(())
    }
}

/// Hidden parameters of one simulated student.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleStudent {
    pub initial_mastery: Vec<f64>,
    pub learn_correct: f64,
    pub learn_incorrect: f64,
    pub slip: f64,
    pub guess: f64,
}

impl OracleStudent {
    pub fn response_probability(&self, mastery: f64, difficulty: f64, alpha: f64) -> f64 {
        self.guess + (1.0 - self.slip - self.guess) * sigmoid(alpha * (mastery - difficulty))
    }

    /// Mastery after answering, clamped to `[0, 1]`.
    pub fn update(&self, mastery: f64, correct: bool) -> f64 {
        let gain = if correct { self.learn_correct } else { self.learn_incorrect };
        (mastery + gain).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub student_id: String,
    pub order_index: u64,
    pub question_id: String,
    pub answer: u8,
    pub concept_ids: String,
}

/// Mastery of one concept for one student before the answer at step `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasteryPoint {
    pub student_id: String,
    pub t: u64,
    pub concept_id: String,
    #[serde(rename = "true_mastery")]
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub log: Vec<LogRow>,
    pub truth: Vec<MasteryPoint>,
    pub students: Vec<OracleStudent>,
    pub question_difficulty: Vec<f64>,
    pub question_concept: Vec<usize>,
}

pub fn student_id(i: usize) -> String {
    format!("s{i:04}")
}

pub fn question_id(i: usize) -> String {
    format!("q{i:03}")
}

pub fn concept_id(i: usize) -> String {
    format!("k{i:02}")
}

pub fn generate(cfg: &OracleConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let question_difficulty: Vec<f64> = (0..cfg.n_questions)
        .map(|_| master.random_range(cfg.difficulty_min..=cfg.difficulty_max))
        .collect();
    let question_concept: Vec<usize> = (0..cfg.n_questions).map(|q| q % cfg.n_concepts).collect();

    let mut log = Vec::with_capacity(cfg.n_students * cfg.questions_per_student);
    let mut truth = Vec::with_capacity(cfg.n_students * cfg.questions_per_student * cfg.n_concepts);
    let mut students = Vec::with_capacity(cfg.n_students);
    for s in 0..cfg.n_students {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(s as u64 + 1);
        let ability = cfg.ability_mean + rng.random_range(-1.0..=1.0) * cfg.ability_spread;
        let initial_mastery = (0..cfg.n_concepts)
            .map(|_| (ability + rng.random_range(-1.0..=1.0) * cfg.concept_spread).clamp(0.0, 1.0))
            .collect();
        let learn_correct = rng.random_range(cfg.learn_correct_min..=cfg.learn_correct_max);
        let student = OracleStudent {
            initial_mastery,
            learn_correct,
            learn_incorrect: learn_correct * rng.random_range(0.0..=cfg.learn_incorrect_ratio_max),
            slip: rng.random_range(0.0..=cfg.slip_max),
            guess: rng.random_range(0.0..=cfg.guess_max),
        };

        let sid = student_id(s);
        let mut mastery = student.initial_mastery.clone();
        for t in 0..cfg.questions_per_student {
            for (k, &m) in mastery.iter().enumerate() {
                truth.push(MasteryPoint {
                    student_id: sid.clone(),
                    t: t as u64,
                    concept_id: concept_id(k),
                    value: m,
                });
            }
            let q = rng.random_range(0..cfg.n_questions);
            let k = question_concept[q];
            let p = student.response_probability(mastery[k], question_difficulty[q], cfg.alpha);
            let correct = rng.random_bool(p.clamp(0.0, 1.0));
            mastery[k] = student.update(mastery[k], correct);
            log.push(LogRow {
                student_id: sid.clone(),
                order_index: t as u64,
                question_id: question_id(q),
                answer: u8::from(correct),
                concept_ids: concept_id(k),
            });
        }
        students.push(student);
    }
    Ok(SyntheticCorpus {
        log,
        truth,
        students,
        question_difficulty,
        question_concept,
    })
}

impl SyntheticCorpus {
    pub fn write_log_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.log {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_truth_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.truth {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn log_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_log_csv(&mut buf)?;
        Ok(buf)
    }
}

pub fn read_truth_csv<R: std::io::Read>(reader: R) -> Result<Vec<MasteryPoint>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// `None` when either side is constant.
    pub spearman: Option<f64>,
    pub mae: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthScore {
    pub pooled: Agreement,
    pub per_concept: BTreeMap<String, Agreement>,
}

/// Ranks starting at 1, ties sharing their mean rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

fn agreement(assessed: &[f64], truth: &[f64]) -> Agreement {
    let mae = assessed.iter().zip(truth).map(|(a, t)| (a - t).abs()).sum::<f64>() / assessed.len() as f64;
    Agreement {
        spearman: spearman(assessed, truth),
        mae,
        n: assessed.len(),
    }
}

/// Rank correlation and mean absolute error between assessed and true
/// mastery over the `(student, t, concept)` keys present in both.
pub fn score_against_truth(assessed: &[MasteryPoint], truth: &[MasteryPoint]) -> Result<TruthScore> {
    let index: HashMap<(&str, u64, &str), f64> = truth
        .iter()
        .map(|p| ((p.student_id.as_str(), p.t, p.concept_id.as_str()), p.value))
        .collect();
    let mut pooled = (Vec::new(), Vec::new());
    let mut by_concept: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in assessed {
        if let Some(&t) = index.get(&(p.student_id.as_str(), p.t, p.concept_id.as_str())) {
            pooled.0.push(p.value);
            pooled.1.push(t);
            let e = by_concept.entry(p.concept_id.clone()).or_default();
            e.0.push(p.value);
            e.1.push(t);
        }
    }
    if pooled.0.is_empty() {
        return Err(Error::Undefined("truth score (no aligned (student, t, concept) keys)"));
    }
    Ok(TruthScore {
        pooled: agreement(&pooled.0, &pooled.1),
        per_concept: by_concept
            .into_iter()
            .map(|(k, (a, t))| (k, agreement(&a, &t)))
            .collect(),
    })
}
