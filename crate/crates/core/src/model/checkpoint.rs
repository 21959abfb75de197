use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cmkt, ModelConfig};
use crate::autodiff::{ParameterStore, Tensor};
use crate::data::{Catalog, DifficultyTable, QuestionCatalog};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "cmkt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Everything needed to run a trained model on new logs.
///
/// Parameters are listed in creation order, which is fixed by the model
/// configuration, so equal models serialize to identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// The resolved run configuration that produced this checkpoint.
    pub run_config: serde_json::Value,
    pub model: ModelConfig,
    pub concepts: Catalog,
    pub questions: QuestionCatalog,
    pub difficulty: DifficultyTable,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(
        model: &Cmkt,
        seed: u64,
        run_config: serde_json::Value,
        concepts: &Catalog,
        questions: &QuestionCatalog,
        difficulty: &DifficultyTable,
    ) -> Self {
        let params = model
            .params
            .slots()
            .map(|(_, s)| NamedTensor {
                name: s.name.clone(),
                shape: s.value.shape().to_vec(),
                values: s.value.values().to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed,
            run_config,
            model: model.config.clone(),
            concepts: concepts.clone(),
            questions: questions.clone(),
            difficulty: difficulty.clone(),
            params,
        }
    }

    pub fn to_model(&self) -> Result<Cmkt> {
        let mut store = ParameterStore::new();
        for p in &self.params {
            store.insert(&p.name, Tensor::new(p.shape.clone(), p.values.clone())?)?;
        }
        Cmkt::from_params(self.model.clone(), store)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(bytes)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
