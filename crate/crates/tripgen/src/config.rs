//! Experiment configuration files (TOML).

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use tripgen_core::explain::ShapConfig;
use tripgen_core::graph::GraphBuilderConfig;
use tripgen_core::model::ModelConfig;
use tripgen_core::pipeline::PipelineConfig;
use tripgen_core::train::TrainRunConfig;
use tripgen_core::YearMonth;

use crate::dataset::DatasetManifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSection {
    /// Falls back to the dataset manifest when absent.
    pub train_end: Option<YearMonth>,
    pub test_start: Option<YearMonth>,
    pub val_fraction: f64,
    pub split_seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { train_end: None, test_start: None, val_fraction: 0.2, split_seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub split: SplitSection,
    pub graph: GraphBuilderConfig,
    pub model: ModelConfig,
    pub train: TrainRunConfig,
    pub shap: ShapConfig,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn pipeline(&self, manifest: &DatasetManifest) -> Result<PipelineConfig> {
        let train_end = self
            .split
            .train_end
            .or(manifest.train_end)
            .ok_or_else(|| anyhow!("no train_end in the config or the dataset manifest"))?;
        let test_start = self.split.test_start.or(manifest.test_start).unwrap_or(train_end.succ());
        Ok(PipelineConfig {
            graph: self.graph.clone(),
            train_end,
            test_start,
            val_fraction: self.split.val_fraction,
            split_seed: self.split.split_seed,
        })
    }
}
