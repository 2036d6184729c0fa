use std::fs;
use std::path::{Path, PathBuf};

use convgru::models::ModelConfig;
use convgru::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything `convgru train` needs. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Dataset root.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Independent training runs; run `r` adds `r` to the model and
    /// training seeds.
    #[serde(default = "one")]
    pub runs: usize,
}

fn one() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: None,
            out: None,
            runs: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Schema(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let schema = |e: convgru::Error| CliError::Schema(e.to_string());
        self.model.validate().map_err(schema)?;
        self.model.shape_trace().map_err(schema)?;
        self.train.validate().map_err(schema)?;
        if self.runs == 0 {
            return Err(CliError::Schema("runs must be at least 1".into()));
        }
        if self.data.is_none() {
            return Err(CliError::Schema("no dataset given (set \"data\" or pass --data)".into()));
        }
        Ok(())
    }

    /// Configuration of run `r`.
    pub fn for_run(&self, r: usize) -> (ModelConfig, TrainConfig) {
        let mut model = self.model.clone();
        let mut train = self.train.clone();
        model.seed = model.seed.wrapping_add(r as u64);
        train.seed = train.seed.wrapping_add(r as u64);
        (model, train)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_documents_take_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"train": {"epochs": 3}, "data": "d"}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.runs, 1);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [r#"{"lr": 1}"#, r#"{"train": {"lr": 1}}"#, r#"{"model": {"depth": 3}}"#] {
            assert!(serde_json::from_str::<RunConfig>(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn runs_shift_seeds() {
        let c = RunConfig::default();
        let (m0, t0) = c.for_run(0);
        let (m2, t2) = c.for_run(2);
        assert_eq!((m0.seed, t0.seed), (0, 0));
        assert_eq!((m2.seed, t2.seed), (2, 2));
        assert_eq!(t2.split_seed, t0.split_seed);
    }
}
