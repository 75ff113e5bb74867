//! Training, checkpointing and serving setup shared by the CLI, the server
//! and the tests.

use std::path::Path;

use anyhow::{bail, Context, Result};
use tripgen_core::checkpoint::{Checkpoint, ModelWeights, CHECKPOINT_FORMAT};
use tripgen_core::explain::sample_background;
use tripgen_core::model::ModelConfig;
use tripgen_core::pipeline::ExperimentData;
use tripgen_core::scenario::ScenarioEngine;
use tripgen_core::train::{train, TrainOutcome};

use crate::config::ExperimentConfig;
use crate::dataset::Dataset;

pub fn prepare(dataset: &Dataset, config: &ExperimentConfig) -> Result<ExperimentData> {
    let pipeline = config.pipeline(&dataset.manifest)?;
    Ok(ExperimentData::build(&dataset.stations, &dataset.samples, &dataset.layers, pipeline)?)
}

pub fn model_config(config: &ExperimentConfig) -> ModelConfig {
    ModelConfig { variant: config.train.variant, k: config.graph.k, ..config.model.clone() }
}

/// Trains one model with `config.train.seed` and packages it with the
/// preprocessing state and a KernelSHAP background.
pub fn train_checkpoint(dataset: &Dataset, data: &ExperimentData, config: &ExperimentConfig) -> Result<(Checkpoint, TrainOutcome)> {
    let outcome = train(&model_config(config), &config.train, &data.table, &data.train, &data.validation)?;
    let checkpoint = Checkpoint {
        format: CHECKPOINT_FORMAT,
        variant: config.train.variant,
        weights: ModelWeights::of(&outcome.model),
        scalers: data.scalers.clone(),
        graph_config: data.graph_config.clone(),
        feature_config: dataset.layers.config.clone(),
        feature_names: dataset.layers.config.feature_names(),
        train_config: config.train.clone(),
        seed: outcome.seed,
        best_epoch: outcome.best_epoch,
        train_end: data.config.train_end,
        test_start: data.config.test_start,
        background: sample_background(&data.table, &data.train, config.shap.background_size, config.shap.seed),
    };
    Ok((checkpoint, outcome))
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_vec(checkpoint)?).with_context(|| format!("writing {}", path.display()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let checkpoint: Checkpoint = serde_json::from_slice(&bytes).with_context(|| format!("parsing checkpoint {}", path.display()))?;
    checkpoint.model()?;
    Ok(checkpoint)
}

/// Serving engine for a checkpoint over a dataset built with the same
/// feature layout.
pub fn engine(checkpoint: &Checkpoint, dataset: &Dataset) -> Result<ScenarioEngine> {
    if dataset.layers.config != checkpoint.feature_config {
        bail!("the dataset's feature configuration differs from the one the checkpoint was trained with");
    }
    Ok(ScenarioEngine::new(
        checkpoint.model()?,
        checkpoint.scalers.clone(),
        checkpoint.graph_config.clone(),
        dataset.layers.clone(),
        &dataset.stations,
        &dataset.samples,
    )?)
}
