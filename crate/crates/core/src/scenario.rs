//! What-if evaluation of station additions and removals at a base month.
//!
//! A scenario rebuilds the month's station set, recomputes network features
//! and both localized graphs with the frozen scalers, and re-predicts every
//! station. The engine never mutates its baseline state.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::demand::MonthlySample;
use crate::error::{Error, Result};
use crate::explain::{export_attention, AttentionEdge};
use crate::geo::{FeatureCache, LatLon, LayerSet};
use crate::graph::{GraphBuilderConfig, GraphKind};
use crate::model::{Model, Variant};
use crate::pipeline::{build_month_view, raw_month_features, MonthView, Scalers};
use crate::station::{StationId, StationRecord};
use crate::time::YearMonth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: StationId,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Assigned by the store when empty.
    #[serde(default)]
    pub id: String,
    pub base_month: YearMonth,
    #[serde(default)]
    pub additions: Vec<Candidate>,
    #[serde(default)]
    pub removals: Vec<StationId>,
}

impl Scenario {
    pub fn empty(id: impl Into<String>, base_month: YearMonth) -> Self {
        Self { id: id.into(), base_month, additions: Vec::new(), removals: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.additions.is_empty() && self.removals.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioOptions {
    /// Reuse the baseline bandwidths instead of recomputing them over the
    /// scenario's station set.
    pub freeze_sigma: bool,
    /// Age assigned to candidates.
    pub candidate_age_months: u32,
}

/// Prediction for one station in trips per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationPrediction {
    pub station_id: StationId,
    pub lat: f64,
    pub lon: f64,
    pub age_months: u32,
    /// Clipped at zero.
    pub y_out: f64,
    pub y_in: f64,
    pub raw_y_out: f64,
    pub raw_y_in: f64,
}

/// Baseline network of one month with its predictions, aligned with
/// `view.stations`.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub view: MonthView,
    pub predictions: Vec<StationPrediction>,
}

impl Baseline {
    pub fn prediction(&self, id: &StationId) -> Option<&StationPrediction> {
        self.view.position(id).map(|i| &self.predictions[i])
    }
}

/// Scenario network at the base month.
#[derive(Debug, Clone)]
pub struct AppliedScenario {
    pub scenario: Scenario,
    pub view: MonthView,
    pub candidates: Vec<StationId>,
    pub sigma_frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStation {
    pub station_id: StationId,
    pub lat: f64,
    pub lon: f64,
    pub candidate: bool,
    pub age_months: u32,
    pub y_out: f64,
    pub y_in: f64,
    pub raw_y_out: f64,
    pub raw_y_in: f64,
    /// Change of the served values against the baseline; absent for candidates.
    pub delta_out: Option<f64>,
    pub delta_in: Option<f64>,
    pub features_changed: bool,
    pub graphs_changed: bool,
    /// A graph neighbor is new or has different features.
    pub neighbor_features_changed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaReport {
    pub sigma_d: f64,
    pub sigma_b: f64,
    pub baseline_sigma_d: f64,
    pub baseline_sigma_b: f64,
    /// Bandwidths were copied from the baseline rather than recomputed.
    pub frozen: bool,
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario_id: String,
    pub base_month: YearMonth,
    pub variant: Variant,
    pub stations: Vec<ScenarioStation>,
    pub removed: Vec<StationId>,
    /// Graph edges of every candidate; empty lists for models without graphs.
    pub candidate_edges: BTreeMap<StationId, Vec<AttentionEdge>>,
    pub sigma: SigmaReport,
    /// Wall-clock time of apply plus predict, filled in by callers with a clock.
    pub recompute_ms: Option<f64>,
}

impl ScenarioResult {
    pub fn station(&self, id: &StationId) -> Option<&ScenarioStation> {
        self.stations.iter().find(|s| &s.station_id == id)
    }
}

/// Immutable serving state: a trained model, its frozen preprocessing and
/// the station network over time.
#[derive(Debug, Clone)]
pub struct ScenarioEngine {
    pub model: Model,
    pub scalers: Scalers,
    pub graph_config: GraphBuilderConfig,
    pub layers: LayerSet,
    pub feature_names: Vec<String>,
    registry: BTreeMap<StationId, StationRecord>,
    active: BTreeMap<YearMonth, Vec<StationId>>,
    cache: FeatureCache,
}

impl ScenarioEngine {
    /// Active stations per month are those with a sample in the month.
    pub fn new(
        model: Model,
        scalers: Scalers,
        graph_config: GraphBuilderConfig,
        layers: LayerSet,
        stations: &[StationRecord],
        samples: &[MonthlySample],
    ) -> Result<Self> {
        graph_config.validate()?;
        let feature_names = layers.config.feature_names();
        if feature_names.len() != model.input_dim() {
            return Err(Error::Config(format!(
                "layers yield {} features but the model expects {}",
                feature_names.len(),
                model.input_dim()
            )));
        }
        let registry: BTreeMap<StationId, StationRecord> = stations.iter().map(|s| (s.id.clone(), s.clone())).collect();
        let mut active: BTreeMap<YearMonth, BTreeSet<StationId>> = BTreeMap::new();
        for s in samples {
            if !registry.contains_key(&s.station_id) {
                return Err(Error::Data(format!("sample for unknown station {}", s.station_id)));
            }
            active.entry(s.month).or_default().insert(s.station_id.clone());
        }
        let used: Vec<StationRecord> =
            active.values().flatten().collect::<BTreeSet<_>>().into_iter().map(|id| registry[id].clone()).collect();
        let cache = FeatureCache::build(&layers, &used)?;
        let active = active.into_iter().map(|(m, ids)| (m, ids.into_iter().collect())).collect();
        Ok(Self { model, scalers, graph_config, layers, feature_names, registry, active, cache })
    }

    pub fn months(&self) -> impl Iterator<Item = YearMonth> + '_ {
        self.active.keys().copied()
    }

    pub fn station(&self, id: &StationId) -> Option<&StationRecord> {
        self.registry.get(id)
    }

    pub fn active_at(&self, month: YearMonth) -> Result<Vec<StationRecord>> {
        let ids = self.active.get(&month).ok_or_else(|| Error::NotFound(format!("no active stations in {month}")))?;
        Ok(ids.iter().map(|id| self.registry[id].clone()).collect())
    }

    fn view_of(&self, active: &[StationRecord], month: YearMonth, graph_config: &GraphBuilderConfig) -> Result<MonthView> {
        let mut cache = self.cache.clone();
        let (stations, raw, bss) = raw_month_features(&self.layers, &mut cache, active, month)?;
        build_month_view(month, stations, raw, bss, &self.scalers, graph_config)
    }

    fn predict_view(&self, view: &MonthView) -> Result<Vec<StationPrediction>> {
        view.stations
            .iter()
            .map(|s| {
                let input = view.input_for(&s.id, &self.scalers, 0)?;
                let raw = self.scalers.denormalize_targets(self.model.predict(&view.normalized, &input)?);
                Ok(StationPrediction {
                    station_id: s.id.clone(),
                    lat: s.lat,
                    lon: s.lon,
                    age_months: s.age_in(view.month),
                    y_out: raw[0].max(0.0),
                    y_in: raw[1].max(0.0),
                    raw_y_out: raw[0],
                    raw_y_in: raw[1],
                })
            })
            .collect()
    }

    pub fn baseline(&self, month: YearMonth) -> Result<Baseline> {
        let active = self.active_at(month)?;
        let view = self.view_of(&active, month, &self.graph_config)?;
        let predictions = self.predict_view(&view)?;
        Ok(Baseline { view, predictions })
    }

    fn validate(&self, baseline: &Baseline, scenario: &Scenario) -> Result<()> {
        if scenario.base_month != baseline.view.month {
            return Err(Error::InvalidInput(format!(
                "scenario is based on {} but the baseline is {}",
                scenario.base_month, baseline.view.month
            )));
        }
        let mut seen = BTreeSet::new();
        let bbox = self.layers.bbox;
        for c in &scenario.additions {
            if !seen.insert(&c.id) {
                return Err(Error::InvalidInput(format!("candidate id {} appears twice", c.id)));
            }
            if self.registry.contains_key(&c.id) {
                return Err(Error::InvalidInput(format!("candidate id {} is already used by an existing station", c.id)));
            }
            let at = LatLon::new(c.lat, c.lon);
            if !at.is_valid() {
                return Err(Error::InvalidInput(format!("candidate {} has invalid coordinates ({}, {})", c.id, c.lat, c.lon)));
            }
            if !bbox.contains(at) {
                return Err(Error::InvalidInput(format!(
                    "candidate {} at ({}, {}) lies outside the geo layers' bounding box (lat {}..{}, lon {}..{}); features cannot be extracted there",
                    c.id, c.lat, c.lon, bbox.min.lat, bbox.max.lat, bbox.min.lon, bbox.max.lon
                )));
            }
        }
        let mut removed = BTreeSet::new();
        for id in &scenario.removals {
            if baseline.view.position(id).is_none() {
                return Err(Error::InvalidInput(format!("removed station {id} is not active in {}", baseline.view.month)));
            }
            if !removed.insert(id) {
                return Err(Error::InvalidInput(format!("station {id} is removed twice")));
            }
        }
        if removed.len() == baseline.view.len() && scenario.additions.is_empty() {
            return Err(Error::InvalidInput("scenario removes every station".into()));
        }
        Ok(())
    }

    /// Station set of the scenario at its base month.
    pub fn scenario_stations(&self, baseline: &Baseline, scenario: &Scenario, options: &ScenarioOptions) -> Result<Vec<StationRecord>> {
        self.validate(baseline, scenario)?;
        let removed: BTreeSet<&StationId> = scenario.removals.iter().collect();
        let opened = scenario.base_month.add_months(-i64::from(options.candidate_age_months));
        let mut active: Vec<StationRecord> = baseline.view.stations.iter().filter(|s| !removed.contains(&s.id)).cloned().collect();
        for c in &scenario.additions {
            active.push(StationRecord::new(c.id.clone(), c.lat, c.lon, opened, None)?);
        }
        Ok(active)
    }

    /// Network features and graphs of the scenario's station set.
    pub fn apply(&self, baseline: &Baseline, scenario: &Scenario, options: &ScenarioOptions) -> Result<AppliedScenario> {
        let active = self.scenario_stations(baseline, scenario, options)?;
        let graph_config = if options.freeze_sigma {
            GraphBuilderConfig {
                sigma_d: Some(baseline.view.graphs.sigma_d),
                sigma_b: Some(baseline.view.graphs.sigma_b),
                ..self.graph_config.clone()
            }
        } else {
            self.graph_config.clone()
        };
        let view = self.view_of(&active, scenario.base_month, &graph_config)?;
        Ok(AppliedScenario {
            scenario: scenario.clone(),
            view,
            candidates: scenario.additions.iter().map(|c| c.id.clone()).collect(),
            sigma_frozen: options.freeze_sigma,
        })
    }

    /// Predictions for every station of an applied scenario with deltas
    /// against the baseline.
    pub fn predict(&self, baseline: &Baseline, applied: &AppliedScenario) -> Result<ScenarioResult> {
        let view = &applied.view;
        let predictions = self.predict_view(view)?;
        let candidates: BTreeSet<&StationId> = applied.candidates.iter().collect();
        let changed_rows: BTreeSet<&StationId> = view
            .stations
            .iter()
            .zip(&view.raw)
            .filter(|(s, x)| match baseline.view.position(&s.id) {
                Some(p) => baseline.view.raw[p] != **x,
                None => true,
            })
            .map(|(s, _)| &s.id)
            .collect();

        let mut stations = Vec::with_capacity(predictions.len());
        for p in predictions {
            let id = &p.station_id;
            let is_candidate = candidates.contains(id);
            let base = baseline.prediction(id).filter(|_| !is_candidate);
            let graphs_changed = [GraphKind::Proximity, GraphKind::Similarity]
                .iter()
                .any(|&k| view.graphs.get(k, id) != baseline.view.graphs.get(k, id));
            let neighbor_features_changed = [GraphKind::Proximity, GraphKind::Similarity].iter().any(|&k| {
                view.graphs.get(k, id).is_some_and(|g| g.neighbors.iter().any(|n| changed_rows.contains(n)))
            });
            stations.push(ScenarioStation {
                candidate: is_candidate,
                delta_out: base.map(|b| p.y_out - b.y_out),
                delta_in: base.map(|b| p.y_in - b.y_in),
                features_changed: changed_rows.contains(id),
                graphs_changed,
                neighbor_features_changed,
                station_id: p.station_id,
                lat: p.lat,
                lon: p.lon,
                age_months: p.age_months,
                y_out: p.y_out,
                y_in: p.y_in,
                raw_y_out: p.raw_y_out,
                raw_y_in: p.raw_y_in,
            });
        }

        let mut candidate_edges = BTreeMap::new();
        for id in &applied.candidates {
            candidate_edges.insert(id.clone(), export_attention(&self.model, view, &self.scalers, id)?);
        }
        let (g, b) = (&view.graphs, &baseline.view.graphs);
        Ok(ScenarioResult {
            scenario_id: applied.scenario.id.clone(),
            base_month: view.month,
            variant: self.model.variant(),
            stations,
            removed: applied.scenario.removals.clone(),
            candidate_edges,
            sigma: SigmaReport {
                sigma_d: g.sigma_d,
                sigma_b: g.sigma_b,
                baseline_sigma_d: b.sigma_d,
                baseline_sigma_b: b.sigma_b,
                frozen: applied.sigma_frozen,
                changed: g.sigma_d != b.sigma_d || g.sigma_b != b.sigma_b,
            },
            recompute_ms: None,
        })
    }

    pub fn evaluate(&self, baseline: &Baseline, scenario: &Scenario, options: &ScenarioOptions) -> Result<ScenarioResult> {
        let applied = self.apply(baseline, scenario, options)?;
        self.predict(baseline, &applied)
    }
}
