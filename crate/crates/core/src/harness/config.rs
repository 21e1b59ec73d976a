//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::DatasetSpec;
use crate::engine::UpdaterConfig;
use crate::error::{Error, Result};
use crate::optim::{adam, sgd, BoxedTransformation};
use crate::schedule::ScheduleKind;

/// Environment variable that replaces the run seed.
pub const SEED_ENV: &str = "SPARSEKIT_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
}

impl OptimizerSpec {
    pub fn build(&self) -> Result<BoxedTransformation> {
        Ok(match self.kind {
            OptimizerKind::Sgd => Box::new(sgd(self.learning_rate)?),
            OptimizerKind::Adam => Box::new(adam(self.learning_rate)?),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// JSON-lines metrics file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PathBuf>,
    /// Directory for the final checkpoint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub layer_dims: Vec<usize>,
    pub dataset: DatasetSpec,
    pub optimizer: OptimizerSpec,
    pub updater: UpdaterConfig,
    pub total_steps: u64,
    pub batch_size: usize,
    pub eval_every: u64,
    /// Seeds model init and batch sampling.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies [`SEED_ENV`] if it is set.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut cfg = Self::from_json(&text)?;
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{raw}`")))?;
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }

    /// Replaces the run seed and the updater's seed. The dataset keeps its
    /// own seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.updater.rng_seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return Err(Error::Config(format!("bad layer_dims {:?}", self.layer_dims)));
        }
        self.dataset.validate()?;
        if self.dataset.n_features != self.layer_dims[0] {
            return Err(Error::Config(format!(
                "dataset has {} features but the model takes {}",
                self.dataset.n_features, self.layer_dims[0]
            )));
        }
        if self.dataset.n_classes != *self.layer_dims.last().expect("checked") {
            return Err(Error::Config(format!(
                "dataset has {} classes but the model outputs {}",
                self.dataset.n_classes,
                self.layer_dims.last().expect("checked")
            )));
        }
        self.optimizer.build()?;
        self.updater.validate()?;
        if self.total_steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "total_steps, batch_size and eval_every must all be positive".into(),
            ));
        }
        let sched = &self.updater.schedule;
        if sched.kind != ScheduleKind::NoUpdate && sched.end_step > self.total_steps {
            return Err(Error::Config(format!(
                "schedule end_step {} exceeds total_steps {}",
                sched.end_step, self.total_steps
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "layer_dims": [2, 8, 3],
        "dataset": {"generator": "gaussian_blobs", "n_samples": 60, "noise": 0.5},
        "optimizer": {"kind": "sgd", "learning_rate": 0.1},
        "updater": {
            "algorithm": "mag",
            "distribution": {"kind": "uniform", "target_sparsity": 0.5},
            "schedule": {"kind": "polynomial", "begin_step": 0, "end_step": 50, "frequency": 10, "final_sparsity": 0.5}
        },
        "total_steps": 100,
        "batch_size": 16,
        "eval_every": 25
    }"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(BASE).unwrap();
        assert_eq!(cfg.dataset.n_classes, 3);
        assert_eq!(cfg.dataset.eval_fraction, 0.2);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.output, OutputSpec::default());
    }

    #[test]
    fn schedule_must_end_within_training() {
        let text = BASE.replace("\"total_steps\": 100", "\"total_steps\": 40");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(Error::Config(_))));
    }

    #[test]
    fn dims_must_match_dataset() {
        let text = BASE.replace("[2, 8, 3]", "[2, 8, 4]");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = BASE.replace("\"eval_every\": 25", "\"eval_every\": 25, \"epochs\": 3");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }
}
