use std::collections::HashMap;

use super::{Cmkt, PredictionHead};
use crate::autodiff::{NodeId, Tape, Tensor};
use crate::data::{DifficultyTable, PracticeRecord};
use crate::error::{Error, Result};

/// Answer-independent pieces of an encoded practice.
#[derive(Clone, Copy, Debug)]
pub struct PracticeParts {
    pub question: NodeId,
    pub question_level: NodeId,
    /// Sum over the practice's concepts of the projected concept ⊕ level embedding.
    pub concept_sum: NodeId,
}

/// Output of one factual step together with its flipped-answer twin.
#[derive(Clone, Debug)]
pub struct CounterfactualStep {
    /// State after the observed answer; the only state carried forward.
    pub state: NodeId,
    /// Mastery of every concept after the observed answer.
    pub mastery: NodeId,
    /// `mastery` restricted to the practice's concepts.
    pub factual: NodeId,
    /// Mastery of the practice's concepts had the answer been flipped.
    pub counterfactual: NodeId,
}

/// Builds the CMKT computation for one sequence on a fresh tape.
pub struct SequenceGraph<'m> {
    model: &'m Cmkt,
    pub tape: Tape<'m>,
    virtual_questions: Option<NodeId>,
    relations: HashMap<usize, NodeId>,
    difficulties: HashMap<usize, NodeId>,
}

impl<'m> SequenceGraph<'m> {
    pub fn new(model: &'m Cmkt) -> Self {
        Self::with_tape(model, Tape::new(&model.params))
    }

    pub fn forward_only(model: &'m Cmkt) -> Self {
        Self::with_tape(model, Tape::forward_only(&model.params))
    }

    fn with_tape(model: &'m Cmkt, tape: Tape<'m>) -> Self {
        Self {
            model,
            tape,
            virtual_questions: None,
            relations: HashMap::new(),
            difficulties: HashMap::new(),
        }
    }

    pub fn initial_state(&mut self) -> NodeId {
        self.tape.constant(Tensor::zeros(&[self.model.hidden_size()]))
    }

    fn check_question(&self, q: usize) -> Result<()> {
        if q >= self.model.config.n_questions {
            return Err(Error::UnknownId {
                kind: "question",
                id: q.to_string(),
            });
        }
        Ok(())
    }

    fn check_concepts(&self, concepts: &[usize]) -> Result<()> {
        match concepts.iter().find(|&&k| k >= self.model.n_concepts()) {
            Some(k) => Err(Error::UnknownId {
                kind: "concept",
                id: k.to_string(),
            }),
            None => Ok(()),
        }
    }

    fn check_table(&self, diff: &DifficultyTable) -> Result<()> {
        let h = &self.model.config.hyper;
        if diff.c_q != h.c_q || diff.c_k != h.c_k {
            return Err(Error::InvalidArgument(format!(
                "difficulty table levels ({}, {}) do not match the model ({}, {})",
                diff.c_q, diff.c_k, h.c_q, h.c_k
            )));
        }
        if diff.questions.len() != self.model.config.n_questions || diff.concepts.len() != self.model.n_concepts() {
            return Err(Error::InvalidArgument("difficulty table does not match the catalogs".into()));
        }
        Ok(())
    }

    pub fn practice_parts(&mut self, rec: &PracticeRecord, diff: &DifficultyTable) -> Result<PracticeParts> {
        self.check_question(rec.question)?;
        self.check_concepts(&rec.concepts)?;
        self.check_table(diff)?;
        if rec.concepts.is_empty() {
            return Err(Error::Data(format!("question `{}` has no concepts", rec.question_id)));
        }
        let s = self.model.slots;
        let question = self.tape.param_row(s.question_emb, rec.question)?;
        let question_level = self.tape.param_row(s.question_level_emb, diff.question_level(rec.question))?;
        let w0 = self.tape.param(s.concept_proj_w);
        let b0 = self.tape.param(s.concept_proj_b);
        let mut concept_sum = None;
        for &k in &rec.concepts {
            let emb = self.tape.param_row(s.concept_emb, k)?;
            let level = self.tape.param_row(s.concept_level_emb, diff.concept_level(k))?;
            let x = self.tape.concat(&[emb, level])?;
            let proj = self.tape.matmul(x, w0)?;
            let term = self.tape.add(proj, b0)?;
            concept_sum = Some(match concept_sum {
                None => term,
                Some(acc) => self.tape.add(acc, term)?,
            });
        }
        Ok(PracticeParts {
            question,
            question_level,
            concept_sum: concept_sum.expect("non-empty concepts"),
        })
    }

    /// `p = (a ⊕ q ⊕ θ_q ⊕ Σ_k (W0 (k ⊕ θ_k) + b0)) W1 + b1`.
    pub fn encode(&mut self, parts: &PracticeParts, answer: u8) -> Result<NodeId> {
        if answer > 1 {
            return Err(Error::InvalidArgument(format!("answer {answer} is not 0 or 1")));
        }
        let s = self.model.slots;
        let a = self.tape.param_row(s.answer_emb, usize::from(answer))?;
        let x = self
            .tape
            .concat(&[a, parts.question, parts.question_level, parts.concept_sum])?;
        let w1 = self.tape.param(s.practice_proj_w);
        let b1 = self.tape.param(s.practice_proj_b);
        let y = self.tape.matmul(x, w1)?;
        self.tape.add(y, b1)
    }

    pub fn encode_practice(
        &mut self,
        rec: &PracticeRecord,
        diff: &DifficultyTable,
        answer_override: Option<u8>,
    ) -> Result<NodeId> {
        let parts = self.practice_parts(rec, diff)?;
        self.encode(&parts, answer_override.unwrap_or(rec.answer))
    }

    fn gate(&mut self, x: NodeId, w: crate::autodiff::SlotId, b: crate::autodiff::SlotId) -> Result<NodeId> {
        let w = self.tape.param(w);
        let b = self.tape.param(b);
        let y = self.tape.matmul(x, w)?;
        self.tape.add(y, b)
    }

    /// Learning gain and forgetting update of the knowledge state.
    pub fn step_state(&mut self, h: NodeId, p: NodeId) -> Result<NodeId> {
        let s = self.model.slots;
        let hp = self.tape.concat(&[h, p])?;
        let z_pre = self.gate(hp, s.gain_gate_w, s.gain_gate_b)?;
        let z = self.tape.sigmoid(z_pre);
        let gain = self.tape.mul(z, p)?;
        let hl = self.tape.concat(&[h, gain])?;
        let cand_pre = self.gate(hl, s.candidate_w, s.candidate_b)?;
        let candidate = self.tape.tanh(cand_pre);
        let f_pre = self.gate(hp, s.forget_gate_w, s.forget_gate_b)?;
        let f = self.tape.sigmoid(f_pre);
        let keep = self.tape.mul(f, h)?;
        let one_minus_f = self.tape.one_minus(f);
        let fresh = self.tape.mul(one_minus_f, candidate)?;
        self.tape.add(keep, fresh)
    }

    /// Virtual questions for every concept paired with the top difficulty level, `[N_k, d]`.
    fn virtual_questions(&mut self) -> Result<NodeId> {
        if let Some(id) = self.virtual_questions {
            return Ok(id);
        }
        let s = self.model.slots;
        let n = self.model.n_concepts();
        let concepts = self.tape.param(s.concept_emb);
        let top = self.tape.param_row(s.concept_level_emb, self.model.config.hyper.c_k)?;
        let tops = self.tape.repeat_rows(top, n)?;
        let x = self.tape.concat(&[concepts, tops])?;
        let pre = self.gate(x, s.virtual_q_w, s.virtual_q_b)?;
        let q = self.tape.tanh(pre);
        self.virtual_questions = Some(q);
        Ok(q)
    }

    /// Mastery of every concept for state `h`, `[N_k]`.
    pub fn mastery(&mut self, h: NodeId) -> Result<NodeId> {
        let vq = self.virtual_questions()?;
        let hs = self.tape.repeat_rows(h, self.model.n_concepts())?;
        let x = self.tape.concat(&[vq, hs])?;
        let w = self.tape.param(self.model.slots.mastery_w);
        let logits = self.tape.matmul(x, w)?;
        Ok(self.tape.sigmoid(logits))
    }

    pub fn mastery_subset(&mut self, h: NodeId, concepts: &[usize]) -> Result<NodeId> {
        self.check_concepts(concepts)?;
        let all = self.mastery(h)?;
        self.tape.select(all, concepts)
    }

    /// Advances the factual state and evaluates the flipped-answer branch
    /// from the same prior state. The flipped state is not carried forward.
    pub fn counterfactual_step(
        &mut self,
        h_prev: NodeId,
        rec: &PracticeRecord,
        diff: &DifficultyTable,
    ) -> Result<CounterfactualStep> {
        let parts = self.practice_parts(rec, diff)?;
        let p = self.encode(&parts, rec.answer)?;
        let state = self.step_state(h_prev, p)?;
        let mastery = self.mastery(state)?;
        let factual = self.tape.select(mastery, &rec.concepts)?;

        let p_cf = self.encode(&parts, 1 - rec.answer)?;
        let h_cf = self.step_state(h_prev, p_cf)?;
        let counterfactual = self.mastery_subset(h_cf, &rec.concepts)?;
        Ok(CounterfactualStep {
            state,
            mastery,
            factual,
            counterfactual,
        })
    }

    /// Normalized question-concept relation scores, `[N_k]`. Labeled
    /// concepts get +1 in both the numerator and the normalizer.
    pub fn relation_scores(&mut self, question: usize, labeled: &[usize]) -> Result<NodeId> {
        self.check_question(question)?;
        self.check_concepts(labeled)?;
        if let Some(&id) = self.relations.get(&question) {
            return Ok(id);
        }
        let s = self.model.slots;
        let q = self.tape.param_row(s.question_emb, question)?;
        let wr = self.tape.param(s.relation_w);
        let projected = self.tape.matmul(wr, q)?;
        let concepts = self.tape.param(s.concept_emb);
        let affinity = self.tape.matmul(concepts, projected)?;
        let sig = self.tape.sigmoid(affinity);
        let mut delta = vec![0.0; self.model.n_concepts()];
        for &k in labeled {
            delta[k] = 1.0;
        }
        let delta = self.tape.constant(Tensor::vector(delta));
        let numer = self.tape.add(sig, delta)?;
        let denom = self.tape.sum(numer);
        let r = self.tape.div(numer, denom)?;
        self.relations.insert(question, r);
        Ok(r)
    }

    /// Difficulty learned from the question embedding, shape `[1]`.
    pub fn learned_difficulty(&mut self, question: usize) -> Result<NodeId> {
        self.check_question(question)?;
        if let Some(&id) = self.difficulties.get(&question) {
            return Ok(id);
        }
        let s = self.model.slots;
        let q = self.tape.param_row(s.question_emb, question)?;
        let pre = self.gate(q, s.difficulty_w, s.difficulty_b)?;
        let theta = self.tape.sigmoid(pre);
        self.difficulties.insert(question, theta);
        Ok(theta)
    }

    /// Probability of a correct answer to `question` given the mastery vector.
    pub fn predict_response(&mut self, mastery: NodeId, question: usize, labeled: &[usize]) -> Result<NodeId> {
        match self.model.slots.dense {
            None => {
                let r = self.relation_scores(question, labeled)?;
                let weighted = self.tape.mul(r, mastery)?;
                let ability = self.tape.sum(weighted);
                let theta = self.learned_difficulty(question)?;
                let logit = self.tape.sub(ability, theta)?;
                Ok(self.tape.sigmoid(logit))
            }
            Some([wh, bh, wo, bo]) => {
                self.check_question(question)?;
                let q = self.tape.param_row(self.model.slots.question_emb, question)?;
                let x = self.tape.concat(&[mastery, q])?;
                let hidden_pre = self.gate(x, wh, bh)?;
                let hidden = self.tape.tanh(hidden_pre);
                let out = self.gate(hidden, wo, bo)?;
                Ok(self.tape.sigmoid(out))
            }
        }
    }

    pub fn model(&self) -> &'m Cmkt {
        self.model
    }

    pub fn head(&self) -> PredictionHead {
        self.model.config.hyper.head
    }
}

/// Per-step values of a forward pass over one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    /// Mastery of every concept before this step's answer (from the prior state).
    pub pre_mastery: Vec<f64>,
    /// Predicted probability of this step's answer; absent for the first step.
    pub prediction: Option<f64>,
    /// Mastery of every concept after the observed answer.
    pub post_mastery: Vec<f64>,
    /// Mastery of every concept had the answer been flipped.
    pub counterfactual_mastery: Vec<f64>,
    /// Knowledge state after the observed answer.
    pub state: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceTrace {
    pub steps: Vec<StepTrace>,
}

impl Cmkt {
    /// Forward pass over a sequence recording states, masteries and predictions.
    pub fn trace(&self, records: &[PracticeRecord], diff: &DifficultyTable) -> Result<SequenceTrace> {
        let mut g = SequenceGraph::forward_only(self);
        let mut h = g.initial_state();
        let mut pre = g.mastery(h)?;
        let mut steps = Vec::with_capacity(records.len());
        for (t, rec) in records.iter().enumerate() {
            let prediction = if t > 0 {
                let y = g.predict_response(pre, rec.question, &rec.concepts)?;
                Some(g.tape.scalar(y))
            } else {
                None
            };
            let parts = g.practice_parts(rec, diff)?;
            let p = g.encode(&parts, rec.answer)?;
            let h_next = g.step_state(h, p)?;
            let post = g.mastery(h_next)?;
            let p_cf = g.encode(&parts, 1 - rec.answer)?;
            let h_cf = g.step_state(h, p_cf)?;
            let cf = g.mastery(h_cf)?;
            steps.push(StepTrace {
                pre_mastery: g.tape.value(pre).values().to_vec(),
                prediction,
                post_mastery: g.tape.value(post).values().to_vec(),
                counterfactual_mastery: g.tape.value(cf).values().to_vec(),
                state: g.tape.value(h_next).values().to_vec(),
            });
            h = h_next;
            pre = post;
        }
        Ok(SequenceTrace { steps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::sigmoid;
    use crate::data::{compute_difficulty, Catalog, QuestionCatalog};
    use crate::model::{ModelConfig, ModelHyper};
    use proptest::prelude::*;

    const D: usize = 3;

    fn catalog() -> QuestionCatalog {
        QuestionCatalog {
            questions: Catalog::from(vec!["q0".to_string(), "q1".into(), "q2".into()]),
            concepts: vec![vec![0], vec![1], vec![0, 1]],
        }
    }

    fn rec(q: usize, a: u8) -> PracticeRecord {
        let concepts = catalog().concepts[q].clone();
        PracticeRecord {
            student_id: "s".into(),
            order_index: 0,
            question_id: format!("q{q}"),
            answer: a,
            concept_ids: concepts.iter().map(|k| format!("k{k}")).collect(),
            question: q,
            concepts,
        }
    }

    fn model(seed: u64, zero_head: bool) -> (Cmkt, DifficultyTable) {
        let hyper = ModelHyper {
            c_q: 4,
            c_k: 4,
            zero_mastery_head: zero_head,
            ..ModelHyper::uniform(D)
        };
        let cfg = ModelConfig::new(hyper, 3, 2).unwrap();
        let records = [rec(0, 1), rec(1, 0), rec(2, 1), rec(2, 0)];
        let diff = compute_difficulty(&records, &catalog(), 2, 4, 4).unwrap();
        (Cmkt::new(cfg, seed).unwrap(), diff)
    }

    fn set(m: &mut Cmkt, name: &str, value: f64) {
        let id = m.params.id(name).unwrap();
        m.params.value_mut(id).fill(value);
    }

    fn values(g: &SequenceGraph<'_>, n: NodeId) -> Vec<f64> {
        g.tape.value(n).values().to_vec()
    }

    /// `x W + b` with `W` stored `[in, out]`.
    fn affine(x: &[f64], w: &Tensor, b: &[f64]) -> Vec<f64> {
        let (rows, cols) = w.dims2();
        assert_eq!(rows, x.len());
        (0..cols)
            .map(|j| b[j] + (0..rows).map(|i| x[i] * w.values()[i * cols + j]).sum::<f64>())
            .collect()
    }

    fn step_with_prev(m: &Cmkt, diff: &DifficultyTable, h_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut g = SequenceGraph::forward_only(m);
        let h = g.tape.constant(Tensor::vector(h_prev.to_vec()));
        let p = g.encode_practice(&rec(2, 1), diff, None).unwrap();
        let h2 = g.step_state(h, p).unwrap();
        (values(&g, p), values(&g, h2))
    }

    #[test]
    fn full_retention_keeps_the_state() {
        let (mut m, diff) = model(3, false);
        set(&mut m, super::super::names::FORGET_GATE_W, 0.0);
        set(&mut m, super::super::names::FORGET_GATE_B, 1e3);
        let h_prev = [0.3, -0.7, 0.05];
        let (_, h) = step_with_prev(&m, &diff, &h_prev);
        assert_eq!(h, h_prev);
    }

    #[test]
    fn full_forgetting_yields_the_candidate() {
        use super::super::names::*;
        let (mut m, diff) = model(4, false);
        set(&mut m, FORGET_GATE_W, 0.0);
        set(&mut m, FORGET_GATE_B, -1e3);
        let h_prev = [0.3, -0.7, 0.05];
        let (p, h) = step_with_prev(&m, &diff, &h_prev);
        let val = |n: &str| m.params.value(m.params.id(n).unwrap()).clone();
        let hp: Vec<f64> = h_prev.iter().chain(&p).copied().collect();
        let z: Vec<f64> = affine(&hp, &val(GAIN_GATE_W), val(GAIN_GATE_B).values())
            .into_iter()
            .map(sigmoid)
            .collect();
        let hl: Vec<f64> = h_prev.iter().copied().chain(z.iter().zip(&p).map(|(z, p)| z * p)).collect();
        let expected: Vec<f64> = affine(&hl, &val(CANDIDATE_W), val(CANDIDATE_B).values())
            .into_iter()
            .map(f64::tanh)
            .collect();
        for (a, b) in h.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14, "{h:?} vs {expected:?}");
        }
    }

    #[test]
    fn zero_head_gives_half_mastery_everywhere() {
        let (m, diff) = model(5, true);
        let trace = m.trace(&[rec(0, 1), rec(2, 0), rec(1, 1)], &diff).unwrap();
        for step in &trace.steps {
            for v in step.pre_mastery.iter().chain(&step.post_mastery).chain(&step.counterfactual_mastery) {
                assert_eq!(*v, 0.5);
            }
        }
    }

    #[test]
    fn relation_scores_hand_example() {
        let (mut m, _) = model(6, false);
        set(&mut m, super::super::names::RELATION_W, 0.0);
        let mut g = SequenceGraph::forward_only(&m);
        let r = g.relation_scores(0, &[0]).unwrap();
        assert_eq!(values(&g, r), vec![0.75, 0.25]);
        let r = g.relation_scores(1, &[]).unwrap();
        assert_eq!(values(&g, r), vec![0.5, 0.5]);
    }

    #[test]
    fn labeled_concepts_dominate_at_equal_affinity() {
        let (mut m, _) = model(7, false);
        set(&mut m, super::super::names::RELATION_W, 0.0);
        let mut g = SequenceGraph::forward_only(&m);
        let r = g.relation_scores(1, &[1]).unwrap();
        let r = values(&g, r);
        assert!(r[1] > r[0]);
    }

    #[test]
    fn response_is_half_when_ability_equals_difficulty() {
        use super::super::names::*;
        let (mut m, _) = model(8, true);
        set(&mut m, DIFFICULTY_W, 0.0);
        set(&mut m, DIFFICULTY_B, 0.0);
        let mut g = SequenceGraph::forward_only(&m);
        let h = g.initial_state();
        let mastery = g.mastery(h).unwrap();
        let y = g.predict_response(mastery, 2, &[0, 1]).unwrap();
        assert_eq!(g.tape.scalar(y), 0.5);
    }

    #[test]
    fn response_at_logit_ln3_is_three_quarters() {
        use super::super::names::*;
        let (mut m, _) = model(9, false);
        set(&mut m, DIFFICULTY_W, 0.0);
        // Ability 2 (relation scores sum to 1) minus difficulty 2 - ln 3.
        let theta: f64 = 2.0 - 3f64.ln();
        set(&mut m, DIFFICULTY_B, (theta / (1.0 - theta)).ln());
        let mut g = SequenceGraph::forward_only(&m);
        let mastery = g.tape.constant(Tensor::vector(vec![2.0, 2.0]));
        let y = g.predict_response(mastery, 1, &[1]).unwrap();
        assert!((g.tape.scalar(y) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn response_increases_with_mastery() {
        let (m, _) = model(10, false);
        let mut prev = 0.0;
        for step in 0..=10 {
            let v = step as f64 / 10.0;
            let mut g = SequenceGraph::forward_only(&m);
            let mastery = g.tape.constant(Tensor::vector(vec![0.4, v]));
            let y = g.predict_response(mastery, 2, &[0, 1]).unwrap();
            let y = g.tape.scalar(y);
            assert!(y > prev);
            prev = y;
        }
    }

    #[test]
    fn override_with_the_true_answer_changes_nothing() {
        let (m, diff) = model(11, false);
        let mut g = SequenceGraph::forward_only(&m);
        for a in [0, 1] {
            let r = rec(2, a);
            let p = g.encode_practice(&r, &diff, None).unwrap();
            let q = g.encode_practice(&r, &diff, Some(a)).unwrap();
            assert_eq!(values(&g, p), values(&g, q));
        }
    }

    #[test]
    fn answer_enters_only_through_its_embedding() {
        use super::super::names::*;
        let (m, diff) = model(12, false);
        let mut g = SequenceGraph::forward_only(&m);
        let p1 = g.encode_practice(&rec(2, 1), &diff, None).unwrap();
        let p0 = g.encode_practice(&rec(2, 1), &diff, Some(0)).unwrap();
        let (p1, p0) = (values(&g, p1), values(&g, p0));
        let emb = m.params.value(m.params.id(ANSWER_EMB).unwrap());
        let w1 = m.params.value(m.params.id(PRACTICE_PROJ_W).unwrap());
        let diff_emb: Vec<f64> = emb.row(1).iter().zip(emb.row(0)).map(|(a, b)| a - b).collect();
        let w_rows = Tensor::new(vec![D, D], w1.values()[..D * D].to_vec()).unwrap();
        let expected = affine(&diff_emb, &w_rows, &[0.0; D]);
        for j in 0..D {
            assert!((p1[j] - p0[j] - expected[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn two_concept_sum_is_sum_of_single_concept_maps() {
        let (m, diff) = model(13, false);
        let mut g = SequenceGraph::forward_only(&m);
        let both = g.practice_parts(&rec(2, 1), &diff).unwrap();
        let mut single = |k: usize| {
            let mut r = rec(2, 1);
            r.concepts = vec![k];
            let parts = g.practice_parts(&r, &diff).unwrap();
            g.tape.value(parts.concept_sum).values().to_vec()
        };
        let (a, b) = (single(0), single(1));
        let sum = g.tape.value(both.concept_sum).values().to_vec();
        for j in 0..D {
            assert!((sum[j] - a[j] - b[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_concept_embeddings_give_identical_mastery() {
        use super::super::names::*;
        let (mut m, diff) = model(14, false);
        let id = m.params.id(CONCEPT_EMB).unwrap();
        let row0 = m.params.value(id).row(0).to_vec();
        m.params.value_mut(id).row_mut(1).copy_from_slice(&row0);
        let trace = m.trace(&[rec(0, 1), rec(1, 0)], &diff).unwrap();
        for s in &trace.steps {
            assert_eq!(s.post_mastery[0], s.post_mastery[1]);
        }
    }

    #[test]
    fn record_order_matters() {
        let (m, diff) = model(15, false);
        let a = m.trace(&[rec(0, 1), rec(1, 0)], &diff).unwrap();
        let b = m.trace(&[rec(1, 0), rec(0, 1)], &diff).unwrap();
        assert_eq!(a.steps.len(), 2);
        assert_ne!(a.steps[1].state, b.steps[1].state);
    }

    #[test]
    fn flipped_branch_is_not_carried_forward() {
        let (m, diff) = model(16, false);
        let recs = [rec(0, 1), rec(2, 0), rec(1, 1)];
        let trace = m.trace(&recs, &diff).unwrap();
        let mut g = SequenceGraph::forward_only(&m);
        let mut h = g.initial_state();
        for (r, s) in recs.iter().zip(&trace.steps) {
            let step = g.counterfactual_step(h, r, &diff).unwrap();
            assert_eq!(values(&g, step.state), s.state);
            let cf: Vec<f64> = r.concepts.iter().map(|&k| s.counterfactual_mastery[k]).collect();
            assert_eq!(values(&g, step.counterfactual), cf);
            h = step.state;
        }
    }

    #[test]
    fn unknown_question_is_rejected() {
        let (m, diff) = model(17, false);
        let mut r = rec(0, 1);
        r.question = 9;
        assert!(matches!(m.trace(&[r], &diff), Err(Error::UnknownId { kind: "question", .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn ranges_hold_on_random_sequences(
            seed in 0u64..1000,
            steps in proptest::collection::vec((0usize..3, 0u8..2), 1..12),
        ) {
            let (m, diff) = model(seed, false);
            let recs: Vec<PracticeRecord> = steps.iter().map(|&(q, a)| rec(q, a)).collect();
            let trace = m.trace(&recs, &diff).unwrap();
            let mut g = SequenceGraph::forward_only(&m);
            for q in 0..3 {
                let r = g.relation_scores(q, &catalog().concepts[q]).unwrap();
                let total: f64 = values(&g, r).iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
            for s in &trace.steps {
                prop_assert!(s.state.iter().all(|v| *v > -1.0 && *v < 1.0));
                for v in s.pre_mastery.iter().chain(&s.post_mastery).chain(&s.counterfactual_mastery) {
                    prop_assert!((0.0..=1.0).contains(v));
                }
                if let Some(y) = s.prediction {
                    prop_assert!(y > 0.0 && y < 1.0);
                }
            }
        }
    }
}
