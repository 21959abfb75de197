//! The CMKT network: practice encoding, gated knowledge-state updates,
//! virtual-question mastery, relation scores and the response head.

mod checkpoint;
mod config;
mod graph;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{ModelConfig, ModelHyper, PredictionHead};
pub use graph::{PracticeParts, SequenceGraph, SequenceTrace, StepTrace};

use crate::autodiff::{ParameterStore, SlotId};
use crate::error::{Error, Result};

/// Parameter names, in creation (and serialization) order.
pub mod names {
    pub const QUESTION_EMB: &str = "embedding.question";
    pub const CONCEPT_EMB: &str = "embedding.concept";
    pub const QUESTION_LEVEL_EMB: &str = "embedding.question_level";
    pub const CONCEPT_LEVEL_EMB: &str = "embedding.concept_level";
    pub const ANSWER_EMB: &str = "embedding.answer";
    pub const CONCEPT_PROJ_W: &str = "practice.concept_proj.weight";
    pub const CONCEPT_PROJ_B: &str = "practice.concept_proj.bias";
    pub const PRACTICE_PROJ_W: &str = "practice.proj.weight";
    pub const PRACTICE_PROJ_B: &str = "practice.proj.bias";
    pub const GAIN_GATE_W: &str = "state.gain_gate.weight";
    pub const GAIN_GATE_B: &str = "state.gain_gate.bias";
    pub const CANDIDATE_W: &str = "state.candidate.weight";
    pub const CANDIDATE_B: &str = "state.candidate.bias";
    pub const FORGET_GATE_W: &str = "state.forget_gate.weight";
    pub const FORGET_GATE_B: &str = "state.forget_gate.bias";
    pub const VIRTUAL_Q_W: &str = "mastery.virtual_question.weight";
    pub const VIRTUAL_Q_B: &str = "mastery.virtual_question.bias";
    pub const MASTERY_W: &str = "mastery.head.weight";
    pub const DIFFICULTY_W: &str = "response.difficulty.weight";
    pub const DIFFICULTY_B: &str = "response.difficulty.bias";
    pub const RELATION_W: &str = "response.relation.weight";
    pub const DENSE_HIDDEN_W: &str = "response.dense.hidden.weight";
    pub const DENSE_HIDDEN_B: &str = "response.dense.hidden.bias";
    pub const DENSE_OUT_W: &str = "response.dense.out.weight";
    pub const DENSE_OUT_B: &str = "response.dense.out.bias";
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Slots {
    pub question_emb: SlotId,
    pub concept_emb: SlotId,
    pub question_level_emb: SlotId,
    pub concept_level_emb: SlotId,
    pub answer_emb: SlotId,
    pub concept_proj_w: SlotId,
    pub concept_proj_b: SlotId,
    pub practice_proj_w: SlotId,
    pub practice_proj_b: SlotId,
    pub gain_gate_w: SlotId,
    pub gain_gate_b: SlotId,
    pub candidate_w: SlotId,
    pub candidate_b: SlotId,
    pub forget_gate_w: SlotId,
    pub forget_gate_b: SlotId,
    pub virtual_q_w: SlotId,
    pub virtual_q_b: SlotId,
    pub mastery_w: SlotId,
    pub difficulty_w: SlotId,
    pub difficulty_b: SlotId,
    pub relation_w: SlotId,
    pub dense: Option<[SlotId; 4]>,
}

/// Shapes of every parameter for a configuration. Weights use the
/// `[in, out]` layout and are applied as `x W`.
fn layout(cfg: &ModelConfig) -> Vec<(&'static str, Vec<usize>)> {
    use names::*;
    let h = &cfg.hyper;
    let mut out = vec![
        (QUESTION_EMB, vec![cfg.n_questions, h.d_q]),
        (CONCEPT_EMB, vec![cfg.n_concepts, h.d_k]),
        (QUESTION_LEVEL_EMB, vec![h.c_q + 1, h.d_q_theta]),
        (CONCEPT_LEVEL_EMB, vec![h.c_k + 1, h.d_k_theta]),
        (ANSWER_EMB, vec![2, h.d_a]),
        (CONCEPT_PROJ_W, vec![h.d_k + h.d_k_theta, h.d]),
        (CONCEPT_PROJ_B, vec![h.d]),
        (PRACTICE_PROJ_W, vec![h.d_a + h.d_q + h.d_q_theta + h.d, h.d]),
        (PRACTICE_PROJ_B, vec![h.d]),
        (GAIN_GATE_W, vec![2 * h.d, h.d]),
        (GAIN_GATE_B, vec![h.d]),
        (CANDIDATE_W, vec![2 * h.d, h.d]),
        (CANDIDATE_B, vec![h.d]),
        (FORGET_GATE_W, vec![2 * h.d, h.d]),
        (FORGET_GATE_B, vec![h.d]),
        (VIRTUAL_Q_W, vec![h.d_k + h.d_k_theta, h.d]),
        (VIRTUAL_Q_B, vec![h.d]),
        (MASTERY_W, vec![2 * h.d]),
        (DIFFICULTY_W, vec![h.d_q, 1]),
        (DIFFICULTY_B, vec![1]),
        (RELATION_W, vec![h.d_k, h.d_q]),
    ];
    if h.head == PredictionHead::Dense {
        out.extend([
            (DENSE_HIDDEN_W, vec![cfg.n_concepts + h.d_q, h.d]),
            (DENSE_HIDDEN_B, vec![h.d]),
            (DENSE_OUT_W, vec![h.d, 1]),
            (DENSE_OUT_B, vec![1]),
        ]);
    }
    out
}

/// Init bound for a slot: `1/sqrt(fan_in)` where fan-in is the input width
/// of the weight a bias belongs to, or the row width of an embedding table.
fn init_bound(cfg: &ModelConfig, name: &str, shape: &[usize]) -> f64 {
    use names::*;
    let h = &cfg.hyper;
    let fan_in = match name {
        CONCEPT_PROJ_B | VIRTUAL_Q_B => h.d_k + h.d_k_theta,
        PRACTICE_PROJ_B => h.d_a + h.d_q + h.d_q_theta + h.d,
        GAIN_GATE_B | CANDIDATE_B | FORGET_GATE_B => 2 * h.d,
        DIFFICULTY_B => h.d_q,
        DENSE_HIDDEN_B => cfg.n_concepts + h.d_q,
        DENSE_OUT_B => h.d,
        _ if name.starts_with("embedding.") => shape[1],
        _ => shape[0],
    };
    1.0 / (fan_in as f64).sqrt()
}

/// A CMKT model: configuration plus its trainable parameters.
#[derive(Clone, Debug)]
pub struct Cmkt {
    pub config: ModelConfig,
    pub params: ParameterStore,
    pub(crate) slots: Slots,
}

impl Cmkt {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterStore::new();
        for (name, shape) in layout(&config) {
            let bound = init_bound(&config, name, &shape);
            params.insert_uniform(name, &shape, bound, &mut rng)?;
        }
        if config.hyper.zero_mastery_head {
            let id = params.id(names::MASTERY_W).expect("created above");
            params.value_mut(id).fill(0.0);
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing store, checking that names and shapes match the configuration.
    pub fn from_params(config: ModelConfig, params: ParameterStore) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        let mut ids = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let id = params
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if params.value(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    params.value(id).shape()
                )));
            }
            ids.push(id);
        }
        let dense = (config.hyper.head == PredictionHead::Dense).then(|| [ids[21], ids[22], ids[23], ids[24]]);
        let slots = Slots {
            question_emb: ids[0],
            concept_emb: ids[1],
            question_level_emb: ids[2],
            concept_level_emb: ids[3],
            answer_emb: ids[4],
            concept_proj_w: ids[5],
            concept_proj_b: ids[6],
            practice_proj_w: ids[7],
            practice_proj_b: ids[8],
            gain_gate_w: ids[9],
            gain_gate_b: ids[10],
            candidate_w: ids[11],
            candidate_b: ids[12],
            forget_gate_w: ids[13],
            forget_gate_b: ids[14],
            virtual_q_w: ids[15],
            virtual_q_b: ids[16],
            mastery_w: ids[17],
            difficulty_w: ids[18],
            difficulty_b: ids[19],
            relation_w: ids[20],
            dense,
        };
        Ok(Self { config, params, slots })
    }

    pub fn n_concepts(&self) -> usize {
        self.config.n_concepts
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hyper.d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig::new(ModelHyper { c_q: 4, c_k: 4, ..ModelHyper::uniform(3) }, 5, 2).unwrap()
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Cmkt::new(tiny(), 11).unwrap();
        let b = Cmkt::new(tiny(), 11).unwrap();
        let c = Cmkt::new(tiny(), 12).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        for (_, slot) in a.params.slots() {
            assert!(slot.value.max_abs() <= 1.0, "{}", slot.name);
        }
        let w1 = a.params.value(a.slots.practice_proj_w);
        assert_eq!(w1.shape(), &[12, 3]);
        assert!(w1.max_abs() <= 1.0 / 12f64.sqrt());
    }

    #[test]
    fn zero_head_option() {
        let mut cfg = tiny();
        cfg.hyper.zero_mastery_head = true;
        let m = Cmkt::new(cfg, 1).unwrap();
        assert_eq!(m.params.value(m.slots.mastery_w).max_abs(), 0.0);
    }

    #[test]
    fn from_params_rejects_wrong_shapes() {
        let m = Cmkt::new(tiny(), 1).unwrap();
        let mut other = tiny();
        other.n_questions = 6;
        assert!(Cmkt::from_params(other, m.params.clone()).is_err());
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(ModelConfig::new(ModelHyper::uniform(0), 1, 1).is_err());
        assert!(ModelConfig::new(ModelHyper::uniform(2), 1, 0).is_err());
    }
}
