//! Seeded training with early stopping, metrics in trips per day and the
//! repeated-run experiment protocol.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphBuilderConfig;
use crate::model::{FeatureTable, GdOptions, GdReport, LinearModel, LinearSolver, Model, ModelConfig, ModelInput, NeuralModel, Variant};
use crate::nn::{Adam, AdamConfig, ParamStore};
use crate::pipeline::{ExperimentData, Scalers, SplitData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub variant: Variant,
    pub n_runs: usize,
    pub linear_solver: LinearSolver,
    pub gd: GdOptions,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            patience: 10,
            learning_rate: 0.002,
            batch_size: 32,
            weight_decay: 1e-5,
            seed: 0,
            variant: Variant::Mgat,
            n_runs: 10,
            linear_solver: LinearSolver::Ols,
            gd: GdOptions::default(),
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience >= self.epochs {
            return Err(Error::Config(format!("patience ({}) must be smaller than epochs ({})", self.patience, self.epochs)));
        }
        if self.batch_size == 0 || self.n_runs == 0 {
            return Err(Error::Config("batch_size and n_runs must be at least 1".into()));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }
}

/// Mean summed squared error per sample, on the normalized scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

/// Patience counter over validation losses; strict improvement resets it.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, since_best: 0 }
    }

    /// Records the validation loss of `epoch`; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept; 0 for closed-form fits.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub gd_reports: Option<[GdReport; 2]>,
    pub seed: u64,
}

/// Validation-loss batches are larger than training batches; the loss is
/// the same sum either way.
const EVAL_BATCH: usize = 512;

fn split_loss(model: &NeuralModel, store: &ParamStore, table: &FeatureTable, split: &SplitData) -> Result<f64> {
    let mut total = 0.0;
    for (inputs, targets) in split.inputs.chunks(EVAL_BATCH).zip(split.targets.chunks(EVAL_BATCH)) {
        let refs: Vec<&ModelInput> = inputs.iter().collect();
        total += model.batch_loss_with(store, table, &refs, targets)?;
    }
    Ok(total / split.len().max(1) as f64)
}

/// Trains one model. Neural variants use shuffled mini-batch Adam with early
/// stopping on the validation loss and return the best-validation
/// parameters; linear variants are fitted in closed form or by gradient
/// descent on the training split.
pub fn train(
    model_config: &ModelConfig,
    config: &TrainRunConfig,
    table: &FeatureTable,
    train: &SplitData,
    validation: &SplitData,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let variant = config.variant;
    if !variant.is_neural() {
        let (model, gd_reports) = match config.linear_solver {
            LinearSolver::Ols => (LinearModel::fit_ols(variant, table, &train.inputs, &train.targets)?, None),
            LinearSolver::Gd => {
                let (m, r) = LinearModel::fit_gd(variant, table, &train.inputs, &train.targets, config.gd)?;
                (m, Some(r))
            }
        };
        return Ok(TrainOutcome {
            model: Model::Linear(model),
            log: Vec::new(),
            best_epoch: 0,
            epochs_run: 0,
            stopped_early: false,
            gd_reports,
            seed: config.seed,
        });
    }
    if validation.is_empty() {
        return Err(Error::Data("early stopping needs a non-empty validation split".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model_config = ModelConfig { variant, ..model_config.clone() };
    let mut model = NeuralModel::new(model_config, &mut rng)?;
    let mut adam = Adam::new(model.params(), config.adam());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.params().clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let inputs: Vec<&ModelInput> = batch.iter().map(|&i| &train.inputs[i]).collect();
            let targets: Vec<[f64; 2]> = batch.iter().map(|&i| train.targets[i]).collect();
            let loss = model.compute_gradients(table, &inputs, &targets)?;
            if !loss.is_finite() {
                let ids: Vec<String> = batch
                    .iter()
                    .map(|&i| match train.keys.get(i) {
                        Some((s, m)) => format!("#{i} ({s}, {m})"),
                        None => format!("#{i}"),
                    })
                    .collect();
                log::error!("non-finite loss in epoch {epoch}; batch samples: {}", ids.join(", "));
                return Err(Error::Diverged(format!("non-finite loss in epoch {epoch}; batch samples: {}", ids.join(", "))));
            }
            epoch_loss += loss;
            adam.step(model.params_mut());
        }
        let validation_loss = split_loss(&model, model.params(), table, validation)?;
        if !validation_loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite validation loss in epoch {epoch}")));
        }
        log.push(EpochLog { epoch, train_loss: epoch_loss / train.len() as f64, validation_loss });
        log::debug!("epoch {epoch}: train {:.6} validation {validation_loss:.6}", epoch_loss / train.len() as f64);
        if stopper.observe(epoch, validation_loss) {
            best = model.params().clone();
        }
        if stopper.should_stop() {
            stopped_early = epoch < config.epochs;
            break;
        }
    }
    let epochs_run = log.len();
    model.set_params(best)?;
    Ok(TrainOutcome {
        model: Model::Neural(model),
        log,
        best_epoch: stopper.best_epoch(),
        epochs_run,
        stopped_early,
        gd_reports: None,
        seed: config.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// Absent when the targets have no variance.
    pub r2: Option<f64>,
    /// Number of values (not samples) compared.
    pub n: usize,
}

/// RMSE, MAE and R² with the total sum of squares taken around the targets'
/// own mean. `None` for empty input.
pub fn compute_metrics(predictions: &[f64], targets: &[f64]) -> Option<Metrics> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return None;
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut abs = 0.0;
    let mut ss_tot = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        ss_res += (p - t) * (p - t);
        abs += crate::math::abs(p - t);
        ss_tot += (t - mean) * (t - mean);
    }
    Some(Metrics {
        rmse: crate::math::sqrt(ss_res / n),
        mae: abs / n,
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
        n: targets.len(),
    })
}

/// Metrics over both flow directions pooled, and per direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub pooled: Metrics,
    pub outflow: Metrics,
    pub inflow: Metrics,
}

pub fn split_metrics(predictions: &[[f64; 2]], targets: &[[f64; 2]]) -> Option<SplitMetrics> {
    let column = |v: &[[f64; 2]], d: usize| v.iter().map(|x| x[d]).collect::<Vec<f64>>();
    let flat = |v: &[[f64; 2]]| v.iter().flat_map(|x| *x).collect::<Vec<f64>>();
    Some(SplitMetrics {
        pooled: compute_metrics(&flat(predictions), &flat(targets))?,
        outflow: compute_metrics(&column(predictions, 0), &column(targets, 0))?,
        inflow: compute_metrics(&column(predictions, 1), &column(targets, 1))?,
    })
}

/// Predictions of `model` for every sample of `split`, in trips per day.
pub fn predict_split(model: &Model, table: &FeatureTable, split: &SplitData, scalers: &Scalers) -> Result<Vec<[f64; 2]>> {
    split.inputs.iter().map(|i| Ok(scalers.denormalize_targets(model.predict(table, i)?))).collect()
}

/// Metrics of `model` on `split` in trips per day; `None` for an empty split.
pub fn evaluate(model: &Model, table: &FeatureTable, split: &SplitData, scalers: &Scalers) -> Result<Option<SplitMetrics>> {
    let predictions = predict_split(model, table, split, scalers)?;
    Ok(split_metrics(&predictions, &split.raw_targets))
}

/// Seed of run `run` derived from the base seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, run: usize) -> u64 {
    let mut z = base.wrapping_add((run as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub validation: Option<SplitMetrics>,
    pub test_new: Option<SplitMetrics>,
    pub test_existing: Option<SplitMetrics>,
    pub log: Vec<EpochLog>,
}

/// Arithmetic means over runs of the pooled metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub r2: Option<f64>,
    pub runs: usize,
}

impl MeanMetrics {
    pub fn over<'a>(values: impl IntoIterator<Item = &'a Metrics>) -> Option<Self> {
        let values: Vec<&Metrics> = values.into_iter().collect();
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let r2: Option<Vec<f64>> = values.iter().map(|m| m.r2).collect();
        Some(Self {
            rmse: values.iter().map(|m| m.rmse).sum::<f64>() / n,
            mae: values.iter().map(|m| m.mae).sum::<f64>() / n,
            r2: r2.map(|v| v.iter().sum::<f64>() / n),
            runs: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test_existing: usize,
    pub test_new: usize,
    pub excluded_gap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub train: TrainRunConfig,
    pub model: ModelConfig,
    /// Graph settings with resolved bandwidths for the global scope.
    pub graph: GraphBuilderConfig,
    pub seeds: Vec<u64>,
    pub optimizer: String,
    /// Headline metrics pool outflow and inflow values into one vector.
    pub pooled_directions: bool,
    pub counts: SplitCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub runs: Vec<RunReport>,
    pub mean_test_new: Option<MeanMetrics>,
    pub mean_test_existing: Option<MeanMetrics>,
    pub metadata: RunMetadata,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: EvalReport,
    pub models: Vec<Model>,
}

pub fn split_counts(data: &ExperimentData) -> SplitCounts {
    SplitCounts {
        train: data.train.len(),
        validation: data.validation.len(),
        test_existing: data.test_existing.len(),
        test_new: data.test_new.len(),
        excluded_gap: data.split.excluded_gap,
    }
}

/// Trains and evaluates `config.n_runs` models with seeds derived from
/// `config.seed`. Any failing run fails the experiment.
pub fn run_experiment(data: &ExperimentData, model_config: &ModelConfig, config: &TrainRunConfig) -> Result<Experiment> {
    config.validate()?;
    let mut runs = Vec::with_capacity(config.n_runs);
    let mut models = Vec::with_capacity(config.n_runs);
    let mut seeds = Vec::with_capacity(config.n_runs);
    for run in 0..config.n_runs {
        let seed = derive_seed(config.seed, run);
        seeds.push(seed);
        let run_config = TrainRunConfig { seed, ..config.clone() };
        let outcome = train(model_config, &run_config, &data.table, &data.train, &data.validation)
            .map_err(|e| Error::Diverged(format!("run {run} (seed {seed}) of {} failed: {e}", config.variant)))?;
        let ev = |split: &SplitData| evaluate(&outcome.model, &data.table, split, &data.scalers);
        runs.push(RunReport {
            run,
            seed,
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.epochs_run,
            stopped_early: outcome.stopped_early,
            validation: ev(&data.validation)?,
            test_new: ev(&data.test_new)?,
            test_existing: ev(&data.test_existing)?,
            log: outcome.log,
        });
        log::info!("{} run {run}: best epoch {}", config.variant, outcome.best_epoch);
        models.push(outcome.model);
    }
    let mean_test_new = MeanMetrics::over(runs.iter().filter_map(|r| r.test_new.as_ref().map(|m| &m.pooled)));
    let mean_test_existing = MeanMetrics::over(runs.iter().filter_map(|r| r.test_existing.as_ref().map(|m| &m.pooled)));
    let metadata = RunMetadata {
        train: config.clone(),
        model: ModelConfig { variant: config.variant, ..model_config.clone() },
        graph: data.graph_config.clone(),
        seeds,
        optimizer: "adam with L2 weight decay added to the gradient".into(),
        pooled_directions: true,
        counts: split_counts(data),
    };
    Ok(Experiment {
        report: EvalReport { variant: config.variant, runs, mean_test_new, mean_test_existing, metadata },
        models,
    })
}
