//! From samples, stations and geo layers to model-ready datasets.
//!
//! Every month with samples gets a [`MonthView`]: its active stations, their
//! raw and normalized feature vectors and both localized graphs. Scalers are
//! fitted on training-split rows only and then frozen.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::demand::{active_stations, temporal_split, DatasetSplit, MonthlySample};
use crate::error::{Error, Result};
use crate::geo::{extract_bss_network, BssNetwork, FeatureCache, FeatureVector, LayerSet, FEATURE_DIM};
use crate::graph::{
    bandwidth, build_localized_graphs, feature_distance, GraphBuilderConfig, GraphKind, MonthGraphs, SigmaScope,
};
use crate::geo::haversine;
use crate::model::{FeatureTable, ModelInput, NeighborSet};
use crate::nn::MinMaxScaler;
use crate::station::{StationId, StationRecord};
use crate::time::YearMonth;

/// Frozen normalization state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scalers {
    pub features: MinMaxScaler,
    pub age: MinMaxScaler,
    pub targets: MinMaxScaler,
}

impl Scalers {
    pub fn normalize_age(&self, months: u32) -> f64 {
        self.age.transform_value(0, f64::from(months))
    }

    pub fn normalize_targets(&self, y: [f64; 2]) -> [f64; 2] {
        [self.targets.transform_value(0, y[0]), self.targets.transform_value(1, y[1])]
    }

    pub fn denormalize_targets(&self, y: [f64; 2]) -> [f64; 2] {
        [self.targets.inverse_value(0, y[0]), self.targets.inverse_value(1, y[1])]
    }
}

/// One month of the network: active stations sorted by id with aligned
/// feature rows and graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthView {
    pub month: YearMonth,
    pub stations: Vec<StationRecord>,
    pub raw: Vec<FeatureVector>,
    pub bss: Vec<BssNetwork>,
    pub normalized: FeatureTable,
    pub graphs: MonthGraphs,
    index: BTreeMap<StationId, usize>,
}

impl MonthView {
    pub fn position(&self, id: &StationId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    fn neighbor_set(&self, kind: GraphKind, center: &StationId, row_offset: usize) -> Result<NeighborSet> {
        let graph = self.graphs.get(kind, center).ok_or_else(|| Error::NotFound(format!("{} graph of {center} in {}", kind.as_str(), self.month)))?;
        let rows = graph
            .neighbors
            .iter()
            .map(|n| self.position(n).map(|p| p + row_offset).ok_or_else(|| Error::Data(format!("neighbor {n} not active in {}", self.month))))
            .collect::<Result<_>>()?;
        Ok(NeighborSet { rows, kernel_weights: graph.kernel_weights.clone() })
    }

    /// Model input of station `id`, with table rows shifted by `row_offset`.
    pub fn input_for(&self, id: &StationId, scalers: &Scalers, row_offset: usize) -> Result<ModelInput> {
        let pos = self.position(id).ok_or_else(|| Error::NotFound(format!("station {id} is not active in {}", self.month)))?;
        Ok(ModelInput {
            center: pos + row_offset,
            proximity: self.neighbor_set(GraphKind::Proximity, id, row_offset)?,
            similarity: self.neighbor_set(GraphKind::Similarity, id, row_offset)?,
            month_index: self.month.month_index(),
            age: scalers.normalize_age(self.stations[pos].age_in(self.month)),
        })
    }
}

/// Raw features of `active` stations in `month`, sorted by id.
pub fn raw_month_features(
    layers: &LayerSet,
    cache: &mut FeatureCache,
    active: &[StationRecord],
    month: YearMonth,
) -> Result<(Vec<StationRecord>, Vec<FeatureVector>, Vec<BssNetwork>)> {
    let mut stations = active.to_vec();
    stations.sort_by(|a, b| a.id.cmp(&b.id));
    let ids: BTreeSet<&StationId> = stations.iter().map(|s| &s.id).collect();
    if ids.len() != stations.len() {
        return Err(Error::Data(format!("duplicate station ids among active stations in {month}")));
    }
    let mut raw = Vec::with_capacity(stations.len());
    let mut bss = Vec::with_capacity(stations.len());
    for s in &stations {
        let b = extract_bss_network(s, &stations);
        raw.push(cache.insert(layers, s)?.with_network(month, &b));
        bss.push(b);
    }
    Ok((stations, raw, bss))
}

/// Builds the month view from raw features with frozen scalers.
pub fn build_month_view(
    month: YearMonth,
    stations: Vec<StationRecord>,
    raw: Vec<FeatureVector>,
    bss: Vec<BssNetwork>,
    scalers: &Scalers,
    graph_config: &GraphBuilderConfig,
) -> Result<MonthView> {
    let mut normalized = FeatureTable::new(FEATURE_DIM);
    let mut by_id = BTreeMap::new();
    for (s, x) in stations.iter().zip(&raw) {
        let n = scalers.features.transform(x.as_slice());
        normalized.push(&n)?;
        by_id.insert(s.id.clone(), n);
    }
    let graphs = build_localized_graphs(&stations, &by_id, graph_config, month)?;
    let index = stations.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
    Ok(MonthView { month, stations, raw, bss, normalized, graphs, index })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub graph: GraphBuilderConfig,
    pub train_end: YearMonth,
    pub test_start: YearMonth,
    pub val_fraction: f64,
    pub split_seed: u64,
}

/// Samples of one split in model form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitData {
    pub keys: Vec<(StationId, YearMonth)>,
    pub inputs: Vec<ModelInput>,
    /// Normalized targets.
    pub targets: Vec<[f64; 2]>,
    /// Targets in trips per day.
    pub raw_targets: Vec<[f64; 2]>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Everything needed to train and evaluate every variant.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub config: PipelineConfig,
    /// Graph settings with resolved bandwidths when the scope is global.
    pub graph_config: GraphBuilderConfig,
    pub split: DatasetSplit,
    pub scalers: Scalers,
    pub months: BTreeMap<YearMonth, MonthView>,
    /// Normalized rows of every month, concatenated in month order.
    pub table: FeatureTable,
    pub row_offsets: BTreeMap<YearMonth, usize>,
    pub train: SplitData,
    pub validation: SplitData,
    pub test_existing: SplitData,
    pub test_new: SplitData,
}

impl ExperimentData {
    pub fn build(
        stations: &[StationRecord],
        samples: &[MonthlySample],
        layers: &LayerSet,
        config: PipelineConfig,
    ) -> Result<Self> {
        GraphBuilderConfig { sigma_scope: SigmaScope::PerMonth, ..config.graph.clone() }.validate()?;
        let split = temporal_split(samples, config.train_end, config.test_start, config.val_fraction, config.split_seed)?;
        let registry: BTreeMap<StationId, StationRecord> = stations.iter().map(|s| (s.id.clone(), s.clone())).collect();
        let used: Vec<&MonthlySample> =
            split.train.iter().chain(&split.validation).chain(&split.test_existing).chain(&split.test_new).collect();
        for s in &used {
            if !registry.contains_key(&s.station_id) {
                return Err(Error::Data(format!("sample for unknown station {}", s.station_id)));
            }
        }
        let months: BTreeSet<YearMonth> = used.iter().map(|s| s.month).collect();

        let mut cache = FeatureCache::default();
        let mut raw_months = BTreeMap::new();
        for &m in &months {
            let active = active_stations(&registry, samples, m);
            raw_months.insert(m, raw_month_features(layers, &mut cache, &active, m)?);
        }

        let scalers = fit_scalers(&split.train, &raw_months)?;
        let graph_config = resolve_sigmas(&config.graph, &raw_months, &scalers, config.train_end)?;

        let mut views = BTreeMap::new();
        let mut table = FeatureTable::new(FEATURE_DIM);
        let mut row_offsets = BTreeMap::new();
        for (m, (st, raw, bss)) in raw_months {
            let view = build_month_view(m, st, raw, bss, &scalers, &graph_config)?;
            row_offsets.insert(m, table.len());
            for i in 0..view.len() {
                table.push(view.normalized.row(i))?;
            }
            views.insert(m, view);
        }

        let make = |list: &[MonthlySample]| -> Result<SplitData> {
            let mut out = SplitData::default();
            for s in list {
                let view = &views[&s.month];
                out.inputs.push(view.input_for(&s.station_id, &scalers, row_offsets[&s.month])?);
                let raw = [s.y_out, s.y_in];
                out.targets.push(scalers.normalize_targets(raw));
                out.raw_targets.push(raw);
                out.keys.push((s.station_id.clone(), s.month));
            }
            Ok(out)
        };
        let train = make(&split.train)?;
        let validation = make(&split.validation)?;
        let test_existing = make(&split.test_existing)?;
        let test_new = make(&split.test_new)?;
        Ok(Self { config, graph_config, split, scalers, months: views, table, row_offsets, train, validation, test_existing, test_new })
    }

    /// Raw (unnormalized) features of a table row.
    pub fn raw_row(&self, row: usize) -> Option<&FeatureVector> {
        let (m, offset) = self.row_offsets.iter().rev().find(|(_, o)| **o <= row)?;
        self.months.get(m)?.raw.get(row - offset)
    }
}

/// Active stations with their raw features and network summaries, per month.
type RawMonths = BTreeMap<YearMonth, (Vec<StationRecord>, Vec<FeatureVector>, Vec<BssNetwork>)>;

fn fit_scalers(
    train: &[MonthlySample],
    raw_months: &RawMonths,
) -> Result<Scalers> {
    let mut feature_rows: Vec<&[f64]> = Vec::with_capacity(train.len());
    let mut ages: Vec<[f64; 1]> = Vec::with_capacity(train.len());
    for s in train {
        let (stations, raw, _) = &raw_months[&s.month];
        let pos = stations
            .binary_search_by(|r| r.id.cmp(&s.station_id))
            .map_err(|_| Error::Data(format!("station {} has a sample but is not active in {}", s.station_id, s.month)))?;
        feature_rows.push(raw[pos].as_slice());
        ages.push([f64::from(stations[pos].age_in(s.month))]);
    }
    let targets: Vec<[f64; 2]> = train.iter().map(|s| [s.y_out, s.y_in]).collect();
    Ok(Scalers {
        features: MinMaxScaler::fit(feature_rows)?,
        age: MinMaxScaler::fit(ages.iter().map(|a| &a[..]))?,
        targets: MinMaxScaler::fit(targets.iter().map(|t| &t[..]))?,
    })
}

/// For the global scope without explicit bandwidths, pools pairwise
/// distances over all training-period months.
fn resolve_sigmas(
    config: &GraphBuilderConfig,
    raw_months: &RawMonths,
    scalers: &Scalers,
    train_end: YearMonth,
) -> Result<GraphBuilderConfig> {
    let mut resolved = config.clone();
    if config.sigma_scope != SigmaScope::Global {
        return Ok(resolved);
    }
    let mut geo = Vec::new();
    let mut sim = Vec::new();
    for (_, (stations, raw, _)) in raw_months.range(..=train_end) {
        let normalized: Vec<Vec<f64>> = raw.iter().map(|x| scalers.features.transform(x.as_slice())).collect();
        for i in 0..stations.len() {
            for j in i + 1..stations.len() {
                geo.push(haversine(stations[i].location(), stations[j].location()));
                sim.push(feature_distance(&normalized[i], &normalized[j])?);
            }
        }
    }
    if geo.is_empty() {
        return Err(Error::Data("global bandwidth needs at least two stations in the training period".into()));
    }
    resolved.sigma_d = Some(config.sigma_d.unwrap_or_else(|| bandwidth(&geo)));
    resolved.sigma_b = Some(config.sigma_b.unwrap_or_else(|| bandwidth(&sim)));
    Ok(resolved)
}
