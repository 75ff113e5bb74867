//! Data directories: station registry, monthly samples or raw trips, and geo
//! layers, plus the synthetic-city fixture writer.
//!
//! Layout:
//!
//! ```text
//! <dir>/dataset.toml          optional; feature names, trip columns, split months
//! <dir>/stations.csv          id, lat, lon, first_active_month, last_active_month
//! <dir>/samples.csv           station_id, month, y_out, y_in, active_days
//! <dir>/trips/*.csv           used when samples.csv is absent
//! <dir>/layers/<kind>.geojson poi, census_tract, road, bike_lane, subway, junction (optional)
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tripgen_core::demand::{reconcile_stations, MonthlySample};
use tripgen_core::geo::{FeatureConfig, LayerKind, LayerSet};
use tripgen_core::synth::SyntheticCity;
use tripgen_core::{StationRecord, YearMonth};

use crate::io::geojson::{read_layer, write_layer};
use crate::io::tables::{create, open, read_samples, read_stations, write_samples, write_stations};
use crate::io::trips::{aggregate_trip_files, IngestStats, TripColumns};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetManifest {
    pub features: FeatureConfig,
    pub trips: TripColumns,
    /// Keep the registry's first_active_month instead of the first month
    /// with trips.
    pub prefer_registry_first_month: bool,
    /// Default temporal split for this dataset.
    pub train_end: Option<YearMonth>,
    pub test_start: Option<YearMonth>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub stations: Vec<StationRecord>,
    pub samples: Vec<MonthlySample>,
    pub layers: LayerSet,
    /// Trip ingestion counts when samples were aggregated from trips.
    pub ingest: Option<IngestStats>,
}

const MANIFEST: &str = "dataset.toml";

pub fn layer_path(root: &Path, kind: LayerKind) -> PathBuf {
    root.join("layers").join(format!("{}.geojson", kind.as_str()))
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST);
    if !path.exists() {
        return Ok(DatasetManifest::default());
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_layers(root: &Path, features: FeatureConfig) -> Result<LayerSet> {
    let mut layers = Vec::new();
    for kind in LayerKind::ALL {
        let path = layer_path(root, kind);
        if !path.exists() {
            if kind == LayerKind::Junction {
                continue;
            }
            bail!("missing layer file {}", path.display());
        }
        layers.push(read_layer(kind, &path)?);
    }
    Ok(LayerSet::from_layers(layers, features)?)
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = read_manifest(root)?;
        let registry = read_stations(open(&root.join("stations.csv"))?).context("reading stations.csv")?;
        let samples_path = root.join("samples.csv");
        let (stations, samples, ingest) = if samples_path.exists() {
            let samples = read_samples(open(&samples_path)?).context("reading samples.csv")?;
            (registry, samples, None)
        } else {
            let trips_dir = root.join("trips");
            let mut files: Vec<PathBuf> = std::fs::read_dir(&trips_dir)
                .with_context(|| format!("neither samples.csv nor {} found", trips_dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                .collect();
            files.sort();
            let (samples, stats) = aggregate_trip_files(&files, &manifest.trips)?;
            log::info!("aggregated {} samples from {} trips ({} rows skipped)", samples.len(), stats.records, stats.skipped);
            let stations = reconcile_stations(&registry, &samples, manifest.prefer_registry_first_month)?;
            (stations, samples, Some(stats))
        };
        let layers = load_layers(root, manifest.features.clone())?;
        Ok(Self { root: root.to_path_buf(), manifest, stations, samples, layers, ingest })
    }
}

/// Writes a synthetic city in the data-directory layout, together with its
/// generator configuration and ground truth as JSON.
pub fn emit_fixtures(city: &SyntheticCity, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root.join("layers")).with_context(|| format!("creating {}", root.display()))?;
    write_stations(create(&root.join("stations.csv"))?, &city.stations)?;
    write_samples(create(&root.join("samples.csv"))?, &city.samples)?;
    for layer in &city.geo_layers {
        write_layer(layer, &layer_path(root, layer.kind))?;
    }
    let (train_end, test_start) = city.config.suggested_split();
    let manifest = DatasetManifest {
        features: city.layers.config.clone(),
        train_end: Some(train_end),
        test_start: Some(test_start),
        ..DatasetManifest::default()
    };
    std::fs::write(root.join(MANIFEST), toml::to_string(&manifest)?)?;
    std::fs::write(root.join("synth_config.json"), serde_json::to_string_pretty(&city.config)?)?;
    std::fs::write(root.join("ground_truth.json"), serde_json::to_string_pretty(&city.truth)?)?;
    Ok(())
}
