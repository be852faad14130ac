//! Versioned JSON checkpoints: model config, named parameter arrays and
//! (optionally) Adam state. Floats round-trip bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{LabError, Result};
use crate::model::{DualStreamModel, ModelConfig};
use crate::optim::AdamState;

use super::train::TrainState;

pub const FORMAT: &str = "detach-lab-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<NamedArray>,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
    #[serde(default)]
    pub epochs_completed: usize,
}

impl Checkpoint {
    pub fn from_model(model: &DualStreamModel) -> Self {
        let params = model
            .named_parameters()
            .into_iter()
            .map(|(name, t)| NamedArray { name, shape: t.shape().to_vec(), data: t.data().to_vec() })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config: model.config.clone(),
            params,
            optimizer: None,
            epochs_completed: 0,
        }
    }

    pub fn from_state(state: &TrainState) -> Self {
        Self {
            optimizer: Some(state.optimizer.clone()),
            epochs_completed: state.epochs_completed,
            ..Self::from_model(&state.model)
        }
    }

    /// Rebuilds the model, checking every parameter name and shape.
    pub fn model(&self) -> Result<DualStreamModel> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(LabError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut model = DualStreamModel::build(self.config.clone(), 0)?;
        let names: Vec<String> = model.named_parameters().into_iter().map(|(n, _)| n).collect();
        if names.len() != self.params.len() {
            return Err(LabError::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                names.len(),
                self.params.len()
            )));
        }
        for ((name, slot), stored) in names.iter().zip(model.parameters_mut()).zip(&self.params) {
            if *name != stored.name || slot.shape() != stored.shape.as_slice() {
                return Err(LabError::Checkpoint(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {:?}",
                    stored.name,
                    stored.shape,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(stored.shape.clone(), stored.data.clone())
                .map_err(|e| LabError::Checkpoint(format!("parameter `{name}`: {e}")))?;
        }
        Ok(model)
    }

    pub fn train_state(&self) -> Result<TrainState> {
        let model = self.model()?;
        let optimizer = self
            .optimizer
            .clone()
            .ok_or_else(|| LabError::Checkpoint("checkpoint has no optimizer state".into()))?;
        let shapes_match = optimizer.first_moment.len() == self.params.len()
            && optimizer.first_moment.iter().zip(&self.params).all(|(m, p)| m.shape() == p.shape.as_slice());
        if !shapes_match {
            return Err(LabError::Checkpoint("optimizer moments do not match parameters".into()));
        }
        Ok(TrainState { model, optimizer, epochs_completed: self.epochs_completed })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
