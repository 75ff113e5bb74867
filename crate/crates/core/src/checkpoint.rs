//! Everything needed to serve or explain a trained model.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::PlayerValues;
use crate::geo::FeatureConfig;
use crate::graph::GraphBuilderConfig;
use crate::model::{LinearModel, Model, ModelConfig, NeuralModel, Variant};
use crate::nn::ParamStore;
use crate::pipeline::Scalers;
use crate::time::YearMonth;
use crate::train::TrainRunConfig;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelWeights {
    Neural { config: ModelConfig, params: ParamStore },
    Linear { model: LinearModel },
}

impl ModelWeights {
    /// Parameter values of `model`; accumulated gradients are dropped.
    pub fn of(model: &Model) -> Self {
        match model {
            Model::Neural(m) => {
                let mut params = m.params().clone();
                params.zero_grad();
                ModelWeights::Neural { config: m.config().clone(), params }
            }
            Model::Linear(m) => ModelWeights::Linear { model: m.clone() },
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        match self {
            ModelWeights::Neural { config, params } => Ok(Model::Neural(NeuralModel::from_params(config.clone(), params.clone())?)),
            ModelWeights::Linear { model } => Ok(Model::Linear(model.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub variant: Variant,
    pub weights: ModelWeights,
    pub scalers: Scalers,
    /// Graph settings with bandwidths resolved when the scope is global.
    pub graph_config: GraphBuilderConfig,
    pub feature_config: FeatureConfig,
    pub feature_names: Vec<String>,
    pub train_config: TrainRunConfig,
    pub seed: u64,
    pub best_epoch: usize,
    pub train_end: YearMonth,
    pub test_start: YearMonth,
    /// Training samples used as the KernelSHAP background.
    pub background: Vec<PlayerValues>,
}

impl Checkpoint {
    /// Rebuilds the model and checks it against the stored metadata.
    pub fn model(&self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(alloc::format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_FORMAT})",
                self.format
            )));
        }
        let model = self.weights.to_model()?;
        if model.variant() != self.variant {
            return Err(Error::Config(alloc::format!(
                "checkpoint declares variant {} but holds {} weights",
                self.variant,
                model.variant()
            )));
        }
        if model.input_dim() != self.feature_names.len() {
            return Err(Error::Config(alloc::format!(
                "checkpoint has {} feature names for a model with {} inputs",
                self.feature_names.len(),
                model.input_dim()
            )));
        }
        Ok(model)
    }
}
