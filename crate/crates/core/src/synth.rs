//! Deterministic synthetic city with a known demand function.
//!
//! Demand per station-month and direction is
//! `max(0, β·x_i + λ·Σ_j w̄_ij (β·x_j) + s(m) + ε)` where `x` are the raw
//! built-environment features, `w̄` the normalized proximity kernel weights of
//! the month's k-NN graph, `s(m)` a seasonal offset and `ε` Gaussian noise.
//! The spillover term is a spatial lag of the features, so a spatial lag
//! regression is the exact model class at any `λ`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::demand::MonthlySample;
use crate::error::{Error, Result};
use crate::geo::{
    FeatureCache, FeatureConfig, GeoFeature, GeoLayer, Geometry, LatLon, LayerKind, LayerSet, PropertyValue,
    EARTH_RADIUS_M, FEATURE_DIM,
};
use crate::graph::{build_localized_graphs, GraphBuilderConfig, GraphKind};
use crate::math;
use crate::model::ops::normalize_kernel_weights;
use crate::pipeline::raw_month_features;
use crate::station::{StationId, StationRecord};
use crate::time::YearMonth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionEvent {
    /// Months after the start month at which the stations open.
    pub month_offset: u32,
    pub stations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Stations over the whole timeline, including expansion events.
    pub n_stations: usize,
    pub n_months: u32,
    pub start_month: YearMonth,
    pub expansions: Vec<ExpansionEvent>,
    pub spillover_strength: f64,
    /// Seasonal swing as a fraction of `mean_demand`.
    pub seasonal_amplitude: f64,
    pub noise_sd: f64,
    /// Side of the square study area.
    pub area_extent_km: f64,
    pub center: LatLon,
    /// Average trips per day at the start month.
    pub mean_demand: f64,
    /// Cross-station standard deviation of `β·x` at the start month.
    pub demand_sd: f64,
    /// Feature whose coefficient dominates the others.
    pub dominant_feature: usize,
    /// Neighbors in the spillover graph.
    pub k: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_stations: 200,
            n_months: 36,
            start_month: YearMonth::new(2020, 1).expect("valid month"),
            expansions: alloc::vec![
                ExpansionEvent { month_offset: 9, stations: 20 },
                ExpansionEvent { month_offset: 18, stations: 20 },
                ExpansionEvent { month_offset: 27, stations: 30 },
            ],
            spillover_strength: 0.5,
            seasonal_amplitude: 0.25,
            noise_sd: 1.0,
            area_extent_km: 8.0,
            center: LatLon::new(40.75, -73.98),
            mean_demand: 20.0,
            demand_sd: 4.0,
            dominant_feature: 4,
            k: 5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stations == 0 {
            return Err(Error::Config("synthetic city needs at least one station".into()));
        }
        if self.n_months < 12 {
            return Err(Error::Config(format!("n_months must be at least 12, got {}", self.n_months)));
        }
        let added: usize = self.expansions.iter().map(|e| e.stations).sum();
        if added >= self.n_stations {
            return Err(Error::Config(format!("expansions add {added} of {} stations; none left for the initial network", self.n_stations)));
        }
        for e in &self.expansions {
            if e.month_offset == 0 || e.month_offset >= self.n_months {
                return Err(Error::Config(format!("expansion at month offset {} outside 1..{}", e.month_offset, self.n_months)));
            }
        }
        let checks = [
            ("spillover_strength", self.spillover_strength),
            ("seasonal_amplitude", self.seasonal_amplitude),
            ("noise_sd", self.noise_sd),
            ("demand_sd", self.demand_sd),
        ];
        for (name, v) in checks {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if !(self.area_extent_km > 0.0) || !self.center.is_valid() {
            return Err(Error::Config("area extent must be positive and the center a valid coordinate".into()));
        }
        if self.dominant_feature >= FEATURE_DIM || self.k == 0 {
            return Err(Error::Config("dominant_feature must index a feature and k must be positive".into()));
        }
        Ok(())
    }

    /// Training period ends after two thirds of the timeline; the test
    /// period starts the month after.
    pub fn suggested_split(&self) -> (YearMonth, YearMonth) {
        let train_months = i64::from(self.n_months) * 2 / 3;
        let train_end = self.start_month.add_months(train_months - 1);
        (train_end, train_end.succ())
    }

    pub fn last_month(&self) -> YearMonth {
        self.start_month.add_months(i64::from(self.n_months) - 1)
    }
}

/// The demand function a synthetic city was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Coefficients on raw features for outflow and inflow.
    pub beta: [Vec<f64>; 2],
    pub spillover_strength: f64,
    /// Additive offset per calendar month index.
    pub seasonal: Vec<[f64; 2]>,
    pub noise_sd: f64,
    pub k: usize,
    pub seed: u64,
}

impl GroundTruth {
    pub fn signal(&self, x: &[f64]) -> [f64; 2] {
        let dot = |b: &[f64]| b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
        [dot(&self.beta[0]), dot(&self.beta[1])]
    }

    /// Proximity graph used by the spillover term: `k` nearest stations with
    /// the month's bandwidth.
    pub fn graph_config(&self) -> GraphBuilderConfig {
        GraphBuilderConfig { k: self.k, ..GraphBuilderConfig::default() }
    }

    /// Noise-free, untruncated demand of every station in `active` at `month`.
    pub fn expected_month(
        &self,
        layers: &LayerSet,
        cache: &mut FeatureCache,
        active: &[StationRecord],
        month: YearMonth,
    ) -> Result<BTreeMap<StationId, [f64; 2]>> {
        let seasonal = self.seasonal.get(month.month_index()).copied().unwrap_or([0.0; 2]);
        let values = self.linear_part(layers, cache, active, month)?;
        Ok(values.into_iter().map(|(id, v)| (id, [v[0] + seasonal[0], v[1] + seasonal[1]])).collect())
    }

    fn linear_part(
        &self,
        layers: &LayerSet,
        cache: &mut FeatureCache,
        active: &[StationRecord],
        month: YearMonth,
    ) -> Result<BTreeMap<StationId, [f64; 2]>> {
        let (stations, raw, _) = raw_month_features(layers, cache, active, month)?;
        let signal: BTreeMap<&StationId, [f64; 2]> =
            stations.iter().zip(&raw).map(|(s, x)| (&s.id, self.signal(x.as_slice()))).collect();
        let by_id = stations.iter().zip(&raw).map(|(s, x)| (s.id.clone(), x.as_slice().to_vec())).collect();
        let graphs = build_localized_graphs(&stations, &by_id, &self.graph_config(), month)?;
        let mut out = BTreeMap::new();
        for s in &stations {
            let own = signal[&s.id];
            let g = graphs.get(GraphKind::Proximity, &s.id).ok_or_else(|| Error::NotFound(format!("graph of {}", s.id)))?;
            let w = normalize_kernel_weights(&g.kernel_weights)?;
            let mut spill = [0.0; 2];
            for (n, w) in g.neighbors.iter().zip(&w) {
                let v = signal[n];
                spill[0] += w * v[0];
                spill[1] += w * v[1];
            }
            let lam = self.spillover_strength;
            out.insert(s.id.clone(), [own[0] + lam * spill[0], own[1] + lam * spill[1]]);
        }
        Ok(out)
    }
}

/// A generated city: stations with opening months, geo layers, monthly
/// samples and the demand function they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCity {
    pub config: SynthConfig,
    pub stations: Vec<StationRecord>,
    pub geo_layers: Vec<GeoLayer>,
    pub layers: LayerSet,
    pub samples: Vec<MonthlySample>,
    pub truth: GroundTruth,
    /// Sample values (either direction) clipped at zero.
    pub truncated: usize,
}

impl SyntheticCity {
    pub fn truncation_rate(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.truncated as f64 / (2 * self.samples.len()) as f64
    }

    pub fn station(&self, id: &StationId) -> Option<&StationRecord> {
        self.stations.iter().find(|s| &s.id == id)
    }

    /// Stations open at `month`.
    pub fn active_at(&self, month: YearMonth) -> Vec<StationRecord> {
        self.stations.iter().filter(|s| s.first_active_month <= month).cloned().collect()
    }

    pub fn months(&self) -> impl Iterator<Item = YearMonth> + '_ {
        self.config.start_month.range_inclusive(self.config.last_month())
    }

    /// Converts planar offsets in meters from the city center to coordinates.
    pub fn offset(&self, east_m: f64, north_m: f64) -> LatLon {
        offset(self.config.center, east_m, north_m)
    }

    /// Half the side of the area covered by the geo layers, in meters.
    pub fn layer_half_extent_m(&self) -> f64 {
        half_extent(&self.config) + TRACT_MARGIN_M
    }
}

const TRACT_MARGIN_M: f64 = 1_000.0;
const TRACT_GRID: usize = 10;
const MIN_STATION_SPACING_M: f64 = 150.0;
const ROAD_LEVEL_WEIGHTS: [f64; 7] = [0.04, 0.06, 0.12, 0.15, 0.2, 0.1, 0.33];
const SOCIO_SCALES: [f64; 11] = [20_000.0, 9_000.0, 95.0, 20.0, 2.4, 1_800.0, 90.0, 25.0, 45.0, 15.0, 20.0];

fn half_extent(config: &SynthConfig) -> f64 {
    config.area_extent_km * 500.0
}

fn offset(center: LatLon, east_m: f64, north_m: f64) -> LatLon {
    let m_per_deg = EARTH_RADIUS_M * PI / 180.0;
    let lat = center.lat + north_m / m_per_deg;
    let lon = center.lon + east_m / (m_per_deg * math::cos(center.lat * PI / 180.0));
    LatLon::new(lat, lon)
}

/// Point at a random angle whose radius `r_max·u^shape` concentrates mass
/// near the origin for `shape > 0.5`.
fn radial(rng: &mut ChaCha8Rng, r_min: f64, r_max: f64, shape: f64) -> (f64, f64) {
    let u: f64 = rng.random();
    let r = r_min + (r_max - r_min) * math::pow(u, shape);
    let a = rng.random::<f64>() * 2.0 * PI;
    (r * math::cos(a), r * math::sin(a))
}

/// Clustered around downtown, around a category hotspot, or uniform.
fn scatter(rng: &mut ChaCha8Rng, half: f64, hotspot: (f64, f64)) -> (f64, f64) {
    let pick: f64 = rng.random();
    let (x, y) = if pick < 0.45 {
        radial(rng, 0.0, half * 1.1, 1.0)
    } else if pick < 0.75 {
        let (dx, dy) = radial(rng, 0.0, half * 0.45, 0.5);
        (hotspot.0 + dx, hotspot.1 + dy)
    } else {
        (rng.random_range(-half..=half), rng.random_range(-half..=half))
    };
    (x.clamp(-half, half), y.clamp(-half, half))
}

fn polyline(rng: &mut ChaCha8Rng, start: (f64, f64), segments: usize, len: (f64, f64), half: f64) -> Vec<(f64, f64)> {
    let mut heading = rng.random::<f64>() * 2.0 * PI;
    let mut pts = alloc::vec![start];
    let mut p = start;
    for _ in 0..segments {
        heading += rng.random_range(-0.6..=0.6);
        let l = rng.random_range(len.0..=len.1);
        p = ((p.0 + l * math::cos(heading)).clamp(-half, half), (p.1 + l * math::sin(heading)).clamp(-half, half));
        pts.push(p);
    }
    pts
}

fn weighted_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn text(s: impl Into<String>) -> PropertyValue {
    PropertyValue::Text(s.into())
}

fn build_layers(config: &SynthConfig, features: &FeatureConfig, rng: &mut ChaCha8Rng) -> Vec<GeoLayer> {
    let half = half_extent(config);
    let area_km2 = config.area_extent_km * config.area_extent_km;
    let to_ll = |p: (f64, f64)| offset(config.center, p.0, p.1);
    let hotspot = |rng: &mut ChaCha8Rng| (rng.random_range(-half * 0.7..=half * 0.7), rng.random_range(-half * 0.7..=half * 0.7));

    let mut pois = Vec::new();
    let n_cat = features.poi_categories.len();
    for (c, name) in features.poi_categories.iter().enumerate() {
        let spot = hotspot(rng);
        let count = (area_km2 * (4.0 + 6.0 * (n_cat - c) as f64 / n_cat as f64)) as usize;
        for _ in 0..count {
            let p = scatter(rng, half, spot);
            pois.push(GeoFeature::new(Geometry::Point(to_ll(p))).with(&features.poi_category_key, text(name.clone())));
        }
    }

    let mut roads = Vec::new();
    let spots: Vec<(f64, f64)> = features.road_levels.iter().map(|_| hotspot(rng)).collect();
    for _ in 0..(area_km2 * 40.0) as usize {
        let level = weighted_index(rng, &ROAD_LEVEL_WEIGHTS[..features.road_levels.len().min(7)]);
        let start = scatter(rng, half, spots[level]);
        let segs = rng.random_range(1..=5);
        let line = polyline(rng, start, segs, (40.0, 260.0), half);
        roads.push(
            GeoFeature::new(Geometry::LineString(line.into_iter().map(to_ll).collect()))
                .with(&features.road_level_key, text(features.road_levels[level].clone())),
        );
    }

    let mut lanes = Vec::new();
    let lane_spot = hotspot(rng);
    for _ in 0..(area_km2 * 2.5) as usize {
        let start = scatter(rng, half, lane_spot);
        let segs = rng.random_range(3..=8);
        let line = polyline(rng, start, segs, (80.0, 300.0), half);
        let opened = if rng.random::<f64>() < 0.4 {
            PropertyValue::Null
        } else {
            let m = config.start_month.add_months(rng.random_range(0..i64::from(config.n_months)));
            text(format!("{m}"))
        };
        lanes.push(GeoFeature::new(Geometry::LineString(line.into_iter().map(to_ll).collect())).with(&features.open_date_key, opened));
    }

    let subway_spot = hotspot(rng);
    let subways = (0..(area_km2 * 0.6) as usize)
        .map(|_| GeoFeature::new(Geometry::Point(to_ll(scatter(rng, half, subway_spot)))))
        .collect();
    let junction_spot = hotspot(rng);
    let junctions = (0..(area_km2 * 25.0) as usize)
        .map(|_| GeoFeature::new(Geometry::Point(to_ll(scatter(rng, half, junction_spot)))))
        .collect();

    let outer = half + TRACT_MARGIN_M;
    let cell = 2.0 * outer / TRACT_GRID as f64;
    let gradients: Vec<f64> = features.sociodemographic_attributes.iter().map(|_| rng.random_range(-0.8..=0.8)).collect();
    let mut tracts = Vec::new();
    for row in 0..TRACT_GRID {
        for col in 0..TRACT_GRID {
            let x0 = -outer + col as f64 * cell;
            let y0 = -outer + row as f64 * cell;
            let ring: Vec<LatLon> = [(x0, y0), (x0 + cell, y0), (x0 + cell, y0 + cell), (x0, y0 + cell), (x0, y0)]
                .into_iter()
                .map(to_ll)
                .collect();
            let (cx, cy) = (x0 + cell / 2.0, y0 + cell / 2.0);
            let closeness = math::exp(-math::sqrt(cx * cx + cy * cy) / half);
            let mut f = GeoFeature::new(Geometry::Polygon(alloc::vec![ring]))
                .with(&features.tract_id_key, text(format!("T{row:02}{col:02}")));
            for (a, name) in features.sociodemographic_attributes.iter().enumerate() {
                let scale = SOCIO_SCALES.get(a).copied().unwrap_or(10.0);
                let v = scale * (0.5 + rng.random::<f64>()) * (1.0 + gradients[a] * (closeness - 0.5));
                f = f.with(name, PropertyValue::Number(v));
            }
            tracts.push(f);
        }
    }

    alloc::vec![
        GeoLayer { kind: LayerKind::Poi, features: pois },
        GeoLayer { kind: LayerKind::CensusTract, features: tracts },
        GeoLayer { kind: LayerKind::Road, features: roads },
        GeoLayer { kind: LayerKind::BikeLane, features: lanes },
        GeoLayer { kind: LayerKind::Subway, features: subways },
        GeoLayer { kind: LayerKind::Junction, features: junctions },
    ]
}

fn place_stations(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<StationRecord>> {
    let half = half_extent(config);
    let added: usize = config.expansions.iter().map(|e| e.stations).sum();
    let mut events = config.expansions.clone();
    events.sort_by_key(|e| e.month_offset);
    let mut waves = alloc::vec![(0u32, config.n_stations - added, 0.0)];
    for (i, e) in events.iter().enumerate() {
        // Later waves open farther out.
        let inner = 0.35 + 0.3 * (i + 1) as f64 / events.len() as f64;
        waves.push((e.month_offset, e.stations, inner * half));
    }
    let mut placed: Vec<(f64, f64)> = Vec::new();
    let mut out = Vec::new();
    for (offset_months, count, r_min) in waves {
        let month = config.start_month.add_months(i64::from(offset_months));
        for _ in 0..count {
            let mut tries = 0;
            let p = loop {
                let (x, y) = radial(rng, r_min, half, if r_min == 0.0 { 0.85 } else { 0.7 });
                let ok = placed.iter().all(|q| {
                    let (dx, dy) = (q.0 - x, q.1 - y);
                    dx * dx + dy * dy >= MIN_STATION_SPACING_M * MIN_STATION_SPACING_M
                });
                if ok {
                    break (x, y);
                }
                tries += 1;
                if tries > 10_000 {
                    return Err(Error::Config(format!("cannot place {} stations {MIN_STATION_SPACING_M} m apart in the area", config.n_stations)));
                }
            };
            placed.push(p);
            let at = offset(config.center, p.0, p.1);
            let id = StationId::new(format!("S{:04}", out.len() + 1))?;
            out.push(StationRecord::new(id, at.lat, at.lon, month, None)?);
        }
    }
    Ok(out)
}

fn population_sd(values: impl Iterator<Item = f64>) -> f64 {
    crate::graph::population_std(values).unwrap_or(0.0)
}

/// Generates a city from `config`. The output is a pure function of the
/// configuration.
pub fn generate_city(config: &SynthConfig) -> Result<SyntheticCity> {
    config.validate()?;
    let feature_config = FeatureConfig::default();
    let mut layout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut coef_rng = ChaCha8Rng::seed_from_u64(config.seed);
    coef_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(2);

    let geo_layers = build_layers(config, &feature_config, &mut layout_rng);
    let layers = LayerSet::from_layers(geo_layers.clone(), feature_config)?;
    let stations = place_stations(config, &mut layout_rng)?;
    let mut cache = FeatureCache::default();

    let start = config.start_month;
    let initial: Vec<StationRecord> = stations.iter().filter(|s| s.first_active_month <= start).cloned().collect();
    let (_, raw0, _) = raw_month_features(&layers, &mut cache, &initial, start)?;
    let mut beta = [alloc::vec![0.0; FEATURE_DIM], alloc::vec![0.0; FEATURE_DIM]];
    for b in beta.iter_mut() {
        for (j, bj) in b.iter_mut().enumerate() {
            let c = if j == config.dominant_feature { 3.0 } else { coef_rng.random_range(-1.0..=1.0) };
            let sd = population_sd(raw0.iter().map(|x| x.as_slice()[j]));
            *bj = if sd > 0.0 { c / sd } else { 0.0 };
        }
    }
    let mut truth = GroundTruth {
        beta,
        spillover_strength: config.spillover_strength,
        seasonal: alloc::vec![[0.0; 2]; 12],
        noise_sd: config.noise_sd,
        k: config.k,
        seed: config.seed,
    };
    for d in 0..2 {
        let sd = population_sd(raw0.iter().map(|x| truth.signal(x.as_slice())[d]));
        let scale = if sd > 0.0 { config.demand_sd / sd } else { 0.0 };
        truth.beta[d].iter_mut().for_each(|b| *b *= scale);
    }
    let base = truth.linear_part(&layers, &mut cache, &initial, start)?;
    let n0 = base.len() as f64;
    let offsets: [f64; 2] =
        core::array::from_fn(|d| config.mean_demand - base.values().map(|v| v[d]).sum::<f64>() / n0);
    for (idx, s) in truth.seasonal.iter_mut().enumerate() {
        let swing = config.seasonal_amplitude * config.mean_demand * math::sin(2.0 * PI * (idx as f64 - 3.0) / 12.0);
        *s = [offsets[0] + swing, offsets[1] + swing];
    }

    let noise = Normal::new(0.0, config.noise_sd.max(f64::MIN_POSITIVE)).map_err(|e| Error::Config(format!("{e}")))?;
    let mut samples = Vec::new();
    let mut truncated = 0;
    for t in 0..config.n_months {
        let month = start.add_months(i64::from(t));
        let active: Vec<StationRecord> = stations.iter().filter(|s| s.first_active_month <= month).cloned().collect();
        let expected = truth.expected_month(&layers, &mut cache, &active, month)?;
        for (id, mu) in expected {
            let mut y = [0.0; 2];
            for d in 0..2 {
                let eps = if config.noise_sd > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
                let v = mu[d] + eps;
                if v < 0.0 {
                    truncated += 1;
                }
                y[d] = v.max(0.0);
            }
            samples.push(MonthlySample {
                station_id: id,
                month,
                y_out: y[0],
                y_in: y[1],
                active_days: u32::from(month.days_in_month()),
            });
        }
    }
    if truncated > 0 {
        log::info!("synthetic city: {truncated} of {} demand values clipped at zero", 2 * samples.len());
    }
    Ok(SyntheticCity { config: config.clone(), stations, geo_layers, layers, samples, truth, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_stations: 40,
            n_months: 12,
            expansions: alloc::vec![ExpansionEvent { month_offset: 6, stations: 8 }],
            area_extent_km: 4.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_city() {
        let a = generate_city(&small()).unwrap();
        let b = generate_city(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_city(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn sample_count_is_sum_of_active_stations() {
        let city = generate_city(&small()).unwrap();
        let expected: usize = city.months().map(|m| city.active_at(m).len()).sum();
        assert_eq!(city.samples.len(), expected);
        assert_eq!(expected, 32 * 6 + 40 * 6);
    }

    #[test]
    fn expansion_only_adds_peripheral_stations() {
        let city = generate_city(&small()).unwrap();
        let dist = |s: &StationRecord| crate::geo::haversine(city.config.center, s.location());
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let start = city.config.start_month;
        let initial: Vec<f64> = city.stations.iter().filter(|s| s.first_active_month == start).map(dist).collect();
        let later: Vec<f64> = city.stations.iter().filter(|s| s.first_active_month > start).map(dist).collect();
        assert_eq!(later.len(), 8);
        assert!(mean(later) > mean(initial));
        assert!(city.stations.iter().all(|s| s.last_active_month.is_none()));
    }

    #[test]
    fn noiseless_demand_equals_ground_truth() {
        let city = generate_city(&SynthConfig { noise_sd: 0.0, ..small() }).unwrap();
        let mut cache = FeatureCache::default();
        let m = city.config.start_month.add_months(7);
        let expected = city.truth.expected_month(&city.layers, &mut cache, &city.active_at(m), m).unwrap();
        for s in city.samples.iter().filter(|s| s.month == m) {
            let e = expected[&s.station_id];
            assert_eq!(s.y_out, e[0].max(0.0));
            assert_eq!(s.y_in, e[1].max(0.0));
        }
    }

    #[test]
    fn default_city_rarely_truncates_and_follows_the_season() {
        let city = generate_city(&SynthConfig::default()).unwrap();
        assert!(city.truncation_rate() < 0.05, "{}", city.truncation_rate());
        // The monthly mean over a fixed station set tracks the seasonal offset.
        let start = city.config.start_month;
        let fixed: Vec<&StationId> = city.stations.iter().filter(|s| s.first_active_month == start).map(|s| &s.id).collect();
        let mean_of = |m: YearMonth| {
            let v: Vec<f64> = city.samples.iter().filter(|s| s.month == m && fixed.contains(&&s.station_id)).map(|s| s.y_out).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let july = start.add_months(6);
        let january = start;
        let swing = mean_of(july) - mean_of(january);
        let expected = city.truth.seasonal[6][0] - city.truth.seasonal[0][0];
        assert!((swing - expected).abs() < 2.0, "swing {swing} vs {expected}");
    }

    #[test]
    fn every_feature_varies_across_initial_stations() {
        let city = generate_city(&small()).unwrap();
        let mut cache = FeatureCache::default();
        let start = city.config.start_month;
        let (_, raw, _) = raw_month_features(&city.layers, &mut cache, &city.active_at(start), start).unwrap();
        let names = city.layers.config.feature_names();
        for j in 0..FEATURE_DIM {
            let sd = population_sd(raw.iter().map(|x| x.as_slice()[j]));
            assert!(sd > 0.0, "feature {} is constant", names[j]);
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(generate_city(&SynthConfig { n_stations: 0, ..small() }).is_err());
        assert!(generate_city(&SynthConfig { n_months: 6, ..small() }).is_err());
        let too_many = SynthConfig { expansions: alloc::vec![ExpansionEvent { month_offset: 3, stations: 40 }], ..small() };
        assert!(generate_city(&too_many).is_err());
    }
}
