//! Command-line interface.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tripgen_core::explain::{explain_station, rank_features, FlowDirection, ShapConfig};
use tripgen_core::model::Variant;
use tripgen_core::pipeline::{ExperimentData, SplitData};
use tripgen_core::scenario::ScenarioOptions;
use tripgen_core::synth::{generate_city, SynthConfig};
use tripgen_core::train::{evaluate, run_experiment, split_counts, SplitCounts, SplitMetrics};

use crate::config::ExperimentConfig;
use crate::dataset::{emit_fixtures, Dataset};
use crate::io::tables::{create, write_attributions, write_feature_matrix, write_graphs, write_runs, write_samples, write_stations};
use crate::server::{serve, AppState, ScenarioRequest};
use crate::store::ScenarioStore;
use crate::workflow::{engine, load_checkpoint, model_config, prepare, save_checkpoint, train_checkpoint};

#[derive(Debug, Parser)]
#[command(name = "tripgen", version, about = "Station-level bike-share demand modelling and expansion planning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic city with known spillover as a data directory.
    Synth(SynthArgs),
    /// Aggregate trip files into monthly samples and a reconciled station table.
    Aggregate(AggregateArgs),
    /// Export the raw feature matrix and localized graphs of every month.
    Features(FeaturesArgs),
    /// Train one model and save a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation and test splits.
    Evaluate(EvaluateArgs),
    /// Train and evaluate several seeded runs of one variant.
    Experiment(ExperimentArgs),
    /// KernelSHAP attributions for samples of one split.
    Explain(ExplainArgs),
    /// Evaluate one scenario file against a checkpoint.
    Predict(PredictArgs),
    /// Serve the planning HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub stations: usize,
    #[arg(long, default_value_t = 36)]
    pub months: u32,
    #[arg(long, default_value_t = 0.5)]
    pub spillover: f64,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Full generator configuration (JSON); the flags above override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Output directory for samples.csv and stations.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Directory for features.csv and graphs.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Report JSON; per-run metrics go next to it as `<stem>.runs.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Validation,
    TestNew,
    TestExisting,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::TestNew)]
    pub split: SplitName,
    /// Number of samples, taken evenly across the split.
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    /// Attributions CSV; the global ranking goes next to it as `<stem>.ranking.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServingArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Reuse baseline bandwidths for scenarios instead of recomputing them.
    #[arg(long)]
    pub freeze_sigma: bool,
    /// Age in months given to candidate stations.
    #[arg(long, default_value_t = 0)]
    pub candidate_age: u32,
}

impl ServingArgs {
    fn options(&self) -> ScenarioOptions {
        ScenarioOptions { freeze_sigma: self.freeze_sigma, candidate_age_months: self.candidate_age }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub serving: ServingArgs,
    #[arg(long)]
    pub scenario: PathBuf,
    /// Result JSON; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub serving: ServingArgs,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Scenario store file; scenarios are kept in memory only when absent.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_checkpoint(a),
        Command::Experiment(a) => experiment(a),
        Command::Explain(a) => explain(a),
        Command::Predict(a) => predict(a),
        Command::Serve(a) => serve_api(a),
    }
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn load(data: &DataArgs) -> Result<(Dataset, ExperimentConfig)> {
    let dataset = Dataset::load(&data.data_dir)?;
    let config = ExperimentConfig::load(data.config.as_deref())?;
    Ok((dataset, config))
}

pub fn synth_config(args: &SynthArgs) -> Result<SynthConfig> {
    let mut config: SynthConfig = match &args.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SynthConfig::default(),
    };
    config.seed = args.seed;
    config.n_stations = args.stations;
    config.n_months = args.months;
    config.spillover_strength = args.spillover;
    if let Some(noise) = args.noise {
        config.noise_sd = noise;
    }
    Ok(config)
}

fn synth(args: SynthArgs) -> Result<()> {
    let city = generate_city(&synth_config(&args)?)?;
    emit_fixtures(&city, &args.out)?;
    log::info!(
        "wrote {} stations and {} samples to {} ({:.2}% of values clipped at zero)",
        city.stations.len(),
        city.samples.len(),
        args.out.display(),
        100.0 * city.truncation_rate()
    );
    Ok(())
}

fn aggregate(args: AggregateArgs) -> Result<()> {
    let dataset = Dataset::load(&args.data_dir)?;
    write_samples(create(&args.out.join("samples.csv"))?, &dataset.samples)?;
    write_stations(create(&args.out.join("stations.csv"))?, &dataset.stations)?;
    if let Some(stats) = &dataset.ingest {
        write_json(stats, Some(&args.out.join("ingest.json")))?;
    }
    Ok(())
}

fn features(args: FeaturesArgs) -> Result<()> {
    let (dataset, config) = load(&args.data)?;
    let data = prepare(&dataset, &config)?;
    let names = dataset.layers.config.feature_names();
    let rows = data
        .months
        .values()
        .flat_map(|v| v.stations.iter().zip(&v.raw).map(move |(s, x)| (&s.id, v.month, x.as_slice())));
    write_feature_matrix(create(&args.out.join("features.csv"))?, &names, rows)?;
    write_graphs(create(&args.out.join("graphs.csv"))?, data.months.values().map(|v| &v.graphs))?;
    Ok(())
}

fn apply_overrides(config: &mut ExperimentConfig, variant: Option<Variant>, seed: Option<u64>, runs: Option<usize>) {
    if let Some(v) = variant {
        config.train.variant = v;
    }
    if let Some(s) = seed {
        config.train.seed = s;
    }
    if let Some(r) = runs {
        config.train.n_runs = r;
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let (dataset, mut config) = load(&args.data)?;
    apply_overrides(&mut config, args.variant, args.seed, None);
    let data = prepare(&dataset, &config)?;
    let (checkpoint, outcome) = train_checkpoint(&dataset, &data, &config)?;
    save_checkpoint(&checkpoint, &args.out)?;
    log::info!("{} trained; best epoch {} of {}", config.train.variant, outcome.best_epoch, outcome.epochs_run);
    Ok(())
}

#[derive(Debug, Serialize)]
struct CheckpointEvaluation {
    variant: Variant,
    seed: u64,
    best_epoch: usize,
    counts: SplitCounts,
    validation: Option<SplitMetrics>,
    test_new: Option<SplitMetrics>,
    test_existing: Option<SplitMetrics>,
}

fn checkpoint_data(dataset: &Dataset, config: &mut ExperimentConfig, checkpoint: &tripgen_core::checkpoint::Checkpoint) -> Result<ExperimentData> {
    config.split.train_end = Some(checkpoint.train_end);
    config.split.test_start = Some(checkpoint.test_start);
    config.graph = checkpoint.graph_config.clone();
    let data = prepare(dataset, config)?;
    if data.scalers != checkpoint.scalers {
        log::warn!("scalers refitted on this data differ from the checkpoint's; evaluating with the checkpoint's");
    }
    Ok(data)
}

fn evaluate_checkpoint(args: EvaluateArgs) -> Result<()> {
    let (dataset, mut config) = load(&args.data)?;
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let model = checkpoint.model()?;
    let data = checkpoint_data(&dataset, &mut config, &checkpoint)?;
    let ev = |split: &SplitData| evaluate(&model, &data.table, split, &checkpoint.scalers);
    let report = CheckpointEvaluation {
        variant: checkpoint.variant,
        seed: checkpoint.seed,
        best_epoch: checkpoint.best_epoch,
        counts: split_counts(&data),
        validation: ev(&data.validation)?,
        test_new: ev(&data.test_new)?,
        test_existing: ev(&data.test_existing)?,
    };
    write_json(&report, args.out.as_deref())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let (dataset, mut config) = load(&args.data)?;
    apply_overrides(&mut config, args.variant, args.seed, args.runs);
    let data = prepare(&dataset, &config)?;
    let result = run_experiment(&data, &model_config(&config), &config.train)?;
    write_json(&result.report, Some(&args.out))?;
    write_runs(create(&sibling(&args.out, "runs.csv"))?, config.train.variant.as_str(), &result.report.runs)?;
    if let Some(m) = &result.report.mean_test_new {
        log::info!("{}: mean test-new RMSE {:.4} over {} runs", config.train.variant, m.rmse, m.runs);
    }
    Ok(())
}

fn explain(args: ExplainArgs) -> Result<()> {
    let (dataset, mut config) = load(&args.data)?;
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let model = checkpoint.model()?;
    let data = checkpoint_data(&dataset, &mut config, &checkpoint)?;
    let split = match args.split {
        SplitName::Train => &data.train,
        SplitName::Validation => &data.validation,
        SplitName::TestNew => &data.test_new,
        SplitName::TestExisting => &data.test_existing,
    };
    if split.is_empty() {
        bail!("the {:?} split is empty", args.split);
    }
    let n = args.samples.min(split.len()).max(1);
    let mut all = Vec::new();
    for i in 0..n {
        let (station, month) = &split.keys[i * split.len() / n];
        let (_, attrs) = explain_station(&model, &data.months[month], &checkpoint.scalers, &checkpoint.background, station, &checkpoint.feature_names, &config.shap)?;
        all.extend(attrs);
    }
    write_attributions(create(&args.out)?, &all)?;
    let ranking: Vec<_> = FlowDirection::BOTH
        .into_iter()
        .map(|d| serde_json::json!({ "flow_direction": d, "features": rank_features(&all, Some(d)) }))
        .collect();
    write_json(&ranking, Some(&sibling(&args.out, "ranking.json")))
}

fn serving_state(args: &ServingArgs, store: ScenarioStore) -> Result<AppState> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let dataset = Dataset::load(&args.data_dir)?;
    let engine = engine(&checkpoint, &dataset)?;
    let mut state = AppState::new(engine, &checkpoint, ShapConfig::default(), store);
    state.default_options = args.options();
    Ok(state)
}

fn predict(args: PredictArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.scenario).with_context(|| format!("reading {}", args.scenario.display()))?;
    let request: ScenarioRequest = serde_json::from_str(&text).with_context(|| format!("parsing {}", args.scenario.display()))?;
    let state = serving_state(&args.serving, ScenarioStore::in_memory())?;
    let options = request.options.unwrap_or(state.default_options);
    let result = state.create_scenario(request.scenario, options).map_err(|e| anyhow::anyhow!(e.message))?;
    write_json(&result, args.out.as_deref())
}

fn serve_api(args: ServeArgs) -> Result<()> {
    let store = match &args.store {
        Some(p) => ScenarioStore::open(p)?,
        None => ScenarioStore::in_memory(),
    };
    let state = Arc::new(serving_state(&args.serving, store)?);
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    runtime.block_on(serve(state, args.port))
}
