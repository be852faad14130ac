//! TOML configuration shared by the CLI subcommands.
//!
//! Every section is optional and falls back to the desk-scale defaults:
//!
//! ```toml
//! [model]
//! input_dim = 16
//! hidden_dims = [32]
//! feature_dim = 8
//! classes_a = 4
//! classes_b = 3
//! wiring = "detached"      # detached | entangled | shared | single_task_a | single_task_b
//!
//! [train]
//! epochs = 120
//! batch_size = 16
//! seed = 0
//! eval_every = 10
//!
//! [train.adam]
//! lr = 1e-3
//!
//! [schedule]
//! gamma_start = 1.0
//! gamma_end = 0.15
//! decay_epochs = 96
//!
//! [loss_a]
//! kind = "daw"             # ce | focal (focus) | gce (q) | daw (alpha_grad, schedule)
//!
//! [loss_b]
//! kind = "daw"
//!
//! [generator]
//! correlation = 0.95
//! ambiguous_fraction = 0.15
//!
//! [experiment]
//! seeds = [0, 1, 2, 3, 4]
//! n_train = 2000
//! n_test = 1000
//! folds = 5
//! execution = "parallel"   # parallel | sequential
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GeneratorConfig;
use crate::error::{LabError, Result};
use crate::exec::Execution;
use crate::losses::{CurriculumSchedule, LossKind};
use crate::model::ModelConfig;
use crate::optim::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { epochs: 120, batch_size: 16, seed: 0, eval_every: 10, adam: AdamConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub n_train: usize,
    pub n_test: usize,
    pub folds: usize,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { seeds: (0..5).collect(), n_train: 2000, n_test: 1000, folds: 5, execution: Execution::Parallel }
    }
}

/// Everything needed to train one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss_a: LossKind,
    pub loss_b: LossKind,
    pub schedule: CurriculumSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        LabConfig::default().train_config()
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss_a.validate()?;
        self.loss_b.validate()?;
        self.schedule.validate()?;
        self.adam.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(LabError::Config("epochs, batch_size and eval_every must be positive".into()));
        }
        if self.schedule.decay_epochs > self.epochs {
            log::warn!(
                "decay_epochs {} exceeds epochs {}; gamma never reaches gamma_end",
                self.schedule.decay_epochs,
                self.epochs
            );
        }
        Ok(())
    }
}

/// The full configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub model: ModelConfig,
    pub train: TrainSection,
    pub schedule: CurriculumSchedule,
    pub loss_a: LossKind,
    pub loss_b: LossKind,
    pub generator: GeneratorConfig,
    pub experiment: ExperimentConfig,
}

impl LabConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            loss_a: self.loss_a,
            loss_b: self.loss_b,
            schedule: self.schedule,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            adam: self.train.adam,
            seed: self.train.seed,
            eval_every: self.train.eval_every,
        }
    }
}
