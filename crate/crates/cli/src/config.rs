//! The run configuration: a TOML file, `--set key=value` overrides and
//! dedicated flags, resolved in that order on top of the defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use cmkt_core::data::{CsvSchema, WindowOptions};
use cmkt_core::model::{ModelHyper, PredictionHead};
use cmkt_core::synthetic::OracleConfig;
use cmkt_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::exit::UsageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Drop the counterfactual hinge.
    NoCm,
    /// Drop the difficulty regression.
    NoTheta,
    /// Replace the IRT response head with a dense network.
    NoIrtHead,
}

/// Which cross-validation fold(s) to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FoldSelection {
    One(usize),
    All,
}

impl FoldSelection {
    pub fn folds(self) -> Vec<usize> {
        match self {
            Self::One(f) => vec![f],
            Self::All => (0..cmkt_core::data::NUM_FOLDS).collect(),
        }
    }
}

impl fmt::Display for FoldSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::One(k) => write!(f, "{k}"),
            Self::All => f.write_str("all"),
        }
    }
}

impl std::str::FromStr for FoldSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(Self::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k < cmkt_core::data::NUM_FOLDS => Ok(Self::One(k)),
            _ => Err(format!("fold must be 0..={} or `all`, got `{s}`", cmkt_core::data::NUM_FOLDS - 1)),
        }
    }
}

impl Serialize for FoldSelection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FoldSelection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Str(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Int(k) => k.to_string(),
            Raw::Str(s) => s,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub log: Option<PathBuf>,
    pub windows: WindowOptions,
    pub schema: CsvSchema,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            log: None,
            windows: WindowOptions::default(),
            schema: CsvSchema::default(),
        }
    }
}

/// Sizes of the small random problem used by `gradcheck`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    /// Finite-difference step.
    pub epsilon: f64,
    /// Largest accepted relative error per slot.
    pub tolerance: f64,
    pub steps: usize,
    pub d: usize,
    pub n_questions: usize,
    pub n_concepts: usize,
    pub max_concepts_per_question: usize,
    pub levels: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            tolerance: 1e-4,
            steps: 3,
            d: 6,
            n_questions: 5,
            n_concepts: 4,
            max_concepts_per_question: 2,
            levels: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Drives every random choice: corpus, split, initialization and shuffles.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub fold: FoldSelection,
    pub ablate: Vec<Ablation>,
    pub data: DataConfig,
    pub model: ModelHyper,
    pub train: TrainConfig,
    pub simulate: OracleConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("cmkt-out"),
            fold: FoldSelection::One(0),
            ablate: Vec::new(),
            data: DataConfig::default(),
            model: ModelHyper::default(),
            train: TrainConfig::default(),
            simulate: OracleConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file and `--set`.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub fold: Option<FoldSelection>,
    pub epochs: Option<usize>,
    pub ablate: Vec<Ablation>,
    pub log: Option<PathBuf>,
    pub epsilon: Option<f64>,
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_set(table: &mut toml::Table, assignment: &str) -> Result<(), UsageError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| UsageError(format!("--set expects key=value, got `{assignment}`")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(UsageError(format!("bad key path `{path}`")));
    }
    let mut node = table;
    for key in &keys[..keys.len() - 1] {
        let entry = node
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| UsageError(format!("`{key}` in `{path}` is not a table")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, UsageError> {
        toml::from_str(text).map_err(|e| UsageError(format!("invalid config: {e}")))
    }

    pub fn resolve(ov: &Overrides) -> Result<Self, UsageError> {
        let mut table = match &ov.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for s in &ov.set {
            apply_set(&mut table, s)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| UsageError(format!("invalid config: {e}")))?;
        if let Some(seed) = ov.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &ov.out_dir {
            cfg.out_dir = dir.clone();
        }
        if let Some(fold) = ov.fold {
            cfg.fold = fold;
        }
        if let Some(epochs) = ov.epochs {
            cfg.train.epochs = epochs;
        }
        if let Some(log) = &ov.log {
            cfg.data.log = Some(log.clone());
        }
        if let Some(eps) = ov.epsilon {
            cfg.gradcheck.epsilon = eps;
        }
        cfg.ablate.extend(ov.ablate.iter().copied());
        cfg.finish()?;
        Ok(cfg)
    }

    /// Propagates the seed and ablations into the sub-configurations and validates.
    pub fn finish(&mut self) -> Result<(), UsageError> {
        self.ablate.sort();
        self.ablate.dedup();
        self.train.seed = self.seed;
        self.simulate.seed = self.seed;
        for a in &self.ablate {
            match a {
                Ablation::NoCm => self.train.cm_weight = 0.0,
                Ablation::NoTheta => self.train.theta_weight = 0.0,
                Ablation::NoIrtHead => self.model.head = PredictionHead::Dense,
            }
        }
        self.train.validate().map_err(|e| UsageError(e.to_string()))?;
        let g = &self.gradcheck;
        if !(g.epsilon > 0.0 && g.epsilon <= 1e-2) {
            return Err(UsageError(format!("epsilon must lie in (0, 1e-2], got {}", g.epsilon)));
        }
        if g.steps == 0 || g.d == 0 || g.n_questions == 0 || g.n_concepts == 0 || g.levels == 0 {
            return Err(UsageError("gradcheck sizes must be >= 1".into()));
        }
        if g.max_concepts_per_question == 0 {
            return Err(UsageError("gradcheck.max_concepts_per_question must be >= 1".into()));
        }
        Ok(())
    }

    pub fn log_path(&self) -> Result<&Path, UsageError> {
        self.data
            .log
            .as_deref()
            .ok_or_else(|| UsageError("no practice log given (use --log or data.log)".into()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = RunConfig::resolve(&Overrides::default()).unwrap();
        assert_eq!(cfg.train.lr, 0.002);
        assert_eq!(cfg.model.d, 64);
        assert_eq!(cfg.fold, FoldSelection::One(0));
    }

    #[test]
    fn precedence_is_file_then_set_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 3\n[train]\nepochs = 7\nlr = 0.01\n").unwrap();
        let ov = Overrides {
            config: Some(path),
            set: vec!["train.lr=0.02".into(), "model.d=8".into(), "fold=all".into()],
            epochs: Some(2),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(&ov).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.simulate.seed, 3);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.lr, 0.02);
        assert_eq!(cfg.model.d, 8);
        assert_eq!(cfg.fold, FoldSelection::All);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let ov = Overrides {
            set: vec!["train.learning_rate=0.1".into()],
            ..Overrides::default()
        };
        let err = RunConfig::resolve(&ov).unwrap_err();
        assert!(err.0.contains("learning_rate"), "{}", err.0);
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn ablations_switch_weights_and_head() {
        let ov = Overrides {
            ablate: vec![Ablation::NoCm, Ablation::NoIrtHead, Ablation::NoCm],
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(&ov).unwrap();
        assert_eq!(cfg.train.cm_weight, 0.0);
        assert_eq!(cfg.train.theta_weight, 1.0);
        assert_eq!(cfg.model.head, PredictionHead::Dense);
        assert_eq!(cfg.ablate, vec![Ablation::NoCm, Ablation::NoIrtHead]);
    }

    #[test]
    fn echo_roundtrips() {
        let cfg = RunConfig::resolve(&Overrides {
            ablate: vec![Ablation::NoTheta],
            ..Overrides::default()
        })
        .unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let mut back = RunConfig::from_toml_str(&text).unwrap();
        back.finish().unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_epsilon_and_fold() {
        let ov = Overrides {
            epsilon: Some(0.0),
            ..Overrides::default()
        };
        assert!(RunConfig::resolve(&ov).is_err());
        assert!("5".parse::<FoldSelection>().is_err());
        assert_eq!("4".parse::<FoldSelection>().unwrap(), FoldSelection::One(4));
    }
}
