use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the response probability is produced from the mastery vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionHead {
    /// `sigmoid(r_q . M - difficulty)`.
    #[default]
    Irt,
    /// A one-hidden-layer network over `M ⊕ q`; used for ablations only.
    Dense,
}

/// Size hyperparameters that do not depend on the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelHyper {
    /// Hidden state and practice vector size.
    pub d: usize,
    pub d_q: usize,
    pub d_k: usize,
    pub d_q_theta: usize,
    pub d_k_theta: usize,
    pub d_a: usize,
    /// Number of question difficulty levels minus one.
    pub c_q: usize,
    /// Number of concept difficulty levels minus one.
    pub c_k: usize,
    pub head: PredictionHead,
    /// Start the mastery head at zero so every untrained mastery is 0.5.
    pub zero_mastery_head: bool,
}

impl Default for ModelHyper {
    fn default() -> Self {
        Self {
            d: 64,
            d_q: 64,
            d_k: 64,
            d_q_theta: 64,
            d_k_theta: 64,
            d_a: 64,
            c_q: 100,
            c_k: 100,
            head: PredictionHead::Irt,
            zero_mastery_head: false,
        }
    }
}

impl ModelHyper {
    /// All embedding and hidden sizes set to `d`.
    pub fn uniform(d: usize) -> Self {
        Self {
            d,
            d_q: d,
            d_k: d,
            d_q_theta: d,
            d_k_theta: d,
            d_a: d,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_questions: usize,
    pub n_concepts: usize,
    pub hyper: ModelHyper,
}

impl ModelConfig {
    pub fn new(hyper: ModelHyper, n_questions: usize, n_concepts: usize) -> Result<Self> {
        let cfg = Self {
            n_questions,
            n_concepts,
            hyper,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        let sizes = [
            ("d", h.d),
            ("d_q", h.d_q),
            ("d_k", h.d_k),
            ("d_q_theta", h.d_q_theta),
            ("d_k_theta", h.d_k_theta),
            ("d_a", h.d_a),
            ("c_q", h.c_q),
            ("c_k", h.c_k),
            ("n_questions", self.n_questions),
            ("n_concepts", self.n_concepts),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("model size `{name}` must be >= 1")));
            }
        }
        Ok(())
    }
}
