//! The 43-dimensional built-environment vector and the temporal features.
//!
//! Layout (fixed across stations and months):
//!
//! | range  | group                | entries                                            |
//! |--------|----------------------|----------------------------------------------------|
//! | 0..10  | POI density          | counts within the radius, per category             |
//! | 10..21 | sociodemographics    | attributes of the containing census tract          |
//! | 21..37 | road network         | 7 counts, 7 lengths (m), bike-lane length, junctions |
//! | 37..39 | transit              | meters to nearest subway, subways within radius    |
//! | 39..43 | BSS network          | stations in [0,500), [500,1000), [1000,5000) m, mean distance |

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use super::layers::{LayerSet, Poi, Road, Tract};
use super::{haversine, LatLon};
use crate::error::{Error, Result};
use crate::station::{StationId, StationRecord};
use crate::time::YearMonth;

pub const FEATURE_DIM: usize = 43;
pub const POI_RANGE: Range<usize> = 0..10;
pub const SOCIO_RANGE: Range<usize> = 10..21;
pub const ROAD_RANGE: Range<usize> = 21..37;
pub const TRANSIT_RANGE: Range<usize> = 37..39;
pub const BSS_RANGE: Range<usize> = 39..43;

const BAND_EDGES_M: [f64; 4] = [0.0, 500.0, 1_000.0, 5_000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::InvalidInput(alloc::format!(
                "feature vector must have {FEATURE_DIM} entries, got {}",
                values.len()
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn poi_density(&self) -> &[f64] {
        &self.0[POI_RANGE]
    }

    pub fn sociodemographics(&self) -> &[f64] {
        &self.0[SOCIO_RANGE]
    }

    pub fn road_network(&self) -> &[f64] {
        &self.0[ROAD_RANGE]
    }

    pub fn transit(&self) -> &[f64] {
        &self.0[TRANSIT_RANGE]
    }

    pub fn bss_network(&self) -> &[f64] {
        &self.0[BSS_RANGE]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalFeatures {
    pub month_index: usize,
    pub station_age: u32,
}

impl TemporalFeatures {
    pub fn for_station(station: &StationRecord, month: YearMonth) -> Self {
        Self { month_index: month.month_index(), station_age: station.age_in(month) }
    }
}

/// Counts of points within `radius_m` (inclusive), grouped by category.
pub fn extract_radius_counts(center: LatLon, points: &[Poi], n_categories: usize, radius_m: f64) -> Result<Vec<u32>> {
    let mut counts = vec![0u32; n_categories];
    for p in points {
        let slot = counts
            .get_mut(p.category)
            .ok_or_else(|| Error::Data(alloc::format!("point category {} out of range", p.category)))?;
        if haversine(center, p.at) <= radius_m {
            *slot += 1;
        }
    }
    Ok(counts)
}

fn count_points(center: LatLon, points: &[LatLon], radius_m: f64) -> u32 {
    points.iter().filter(|p| haversine(center, **p) <= radius_m).count() as u32
}

/// Attributes of the tract containing `center`, falling back to the tract
/// with the nearest centroid.
pub fn extract_sociodemographics(center: LatLon, tracts: &[Tract], attributes: &[String]) -> Result<Vec<f64>> {
    let tract = match tracts.iter().find(|t| t.contains(center)) {
        Some(t) => t,
        None => tracts
            .iter()
            .map(|t| (haversine(center, t.centroid), t))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Data("no census tracts loaded".into()))?,
    };
    attributes
        .iter()
        .map(|name| {
            tract.attributes.get(name).copied().ok_or_else(|| {
                Error::Data(alloc::format!("tract '{}' is missing attribute '{name}'", tract.id))
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BssNetwork {
    pub bands: [u32; 3],
    pub mean_distance_m: f64,
    /// Set when no other station is active; the mean distance is then 0.
    pub isolated: bool,
}

impl BssNetwork {
    fn as_features(&self) -> [f64; 4] {
        [f64::from(self.bands[0]), f64::from(self.bands[1]), f64::from(self.bands[2]), self.mean_distance_m]
    }
}

/// Band counts over half-open distance bands and the mean distance to all
/// other active stations. The target is excluded by id.
pub fn extract_bss_network(station: &StationRecord, active: &[StationRecord]) -> BssNetwork {
    let at = station.location();
    let mut bands = [0u32; 3];
    let mut distances: Vec<f64> = active.iter().filter(|o| o.id != station.id).map(|o| haversine(at, o.location())).collect();
    for &d in &distances {
        for b in 0..3 {
            if d >= BAND_EDGES_M[b] && d < BAND_EDGES_M[b + 1] {
                bands[b] += 1;
            }
        }
    }
    distances.sort_by(f64::total_cmp);
    let n = distances.len();
    let total: f64 = distances.iter().sum();
    if n == 0 {
        log::warn!("station {} has no other active station", station.id);
        return BssNetwork { bands, mean_distance_m: 0.0, isolated: true };
    }
    BssNetwork { bands, mean_distance_m: total / n as f64, isolated: false }
}

/// Features that depend only on location and the static layers, plus the
/// per-lane lengths needed to evaluate bike-lane length in any month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticFeatures {
    pub at: LatLon,
    pub poi: Vec<f64>,
    pub socio: Vec<f64>,
    pub road_counts: Vec<f64>,
    pub road_lengths: Vec<f64>,
    pub junctions: f64,
    pub subway_distance: f64,
    pub subway_count: f64,
    lane_pieces: Vec<(Option<YearMonth>, f64)>,
}

impl StaticFeatures {
    pub fn compute(layers: &LayerSet, at: LatLon) -> Result<Self> {
        let cfg = &layers.config;
        let radius = cfg.radius_m;
        let poi = extract_radius_counts(at, &layers.pois, cfg.poi_categories.len(), radius)?
            .into_iter()
            .map(f64::from)
            .collect();
        let socio = extract_sociodemographics(at, &layers.tracts, &cfg.sociodemographic_attributes)?;
        let (road_counts, road_lengths) = road_features(at, &layers.roads, cfg.road_levels.len(), radius);
        let lane_pieces = layers
            .bike_lanes
            .iter()
            .filter_map(|lane| {
                let len: f64 = lane.lines.iter().map(|l| length_within(at, l, radius)).sum();
                (len > 0.0).then_some((lane.opened, len))
            })
            .collect();
        let subway_distance = layers
            .subways
            .iter()
            .map(|s| haversine(at, *s))
            .min_by(f64::total_cmp)
            .ok_or_else(|| Error::Data("subway layer is empty".into()))?;
        Ok(Self {
            at,
            poi,
            socio,
            road_counts,
            road_lengths,
            junctions: f64::from(count_points(at, &layers.junctions, radius)),
            subway_distance,
            subway_count: f64::from(count_points(at, &layers.subways, radius)),
            lane_pieces,
        })
    }

    /// Length of bike lanes open by `month`.
    pub fn bike_lane_length(&self, month: YearMonth) -> f64 {
        self.lane_pieces
            .iter()
            .filter(|(opened, _)| opened.is_none_or(|o| o <= month))
            .map(|(_, len)| len)
            .sum()
    }

    pub fn with_network(&self, month: YearMonth, bss: &BssNetwork) -> FeatureVector {
        let mut v = Vec::with_capacity(FEATURE_DIM);
        v.extend_from_slice(&self.poi);
        v.extend_from_slice(&self.socio);
        v.extend_from_slice(&self.road_counts);
        v.extend_from_slice(&self.road_lengths);
        v.push(self.bike_lane_length(month));
        v.push(self.junctions);
        v.push(self.subway_distance);
        v.push(self.subway_count);
        v.extend_from_slice(&bss.as_features());
        debug_assert_eq!(v.len(), FEATURE_DIM);
        FeatureVector(v)
    }
}

/// Sum of segment lengths whose midpoint lies within the radius.
fn length_within(center: LatLon, line: &[LatLon], radius_m: f64) -> f64 {
    line.windows(2)
        .filter(|w| haversine(center, w[0].midpoint(w[1])) <= radius_m)
        .map(|w| haversine(w[0], w[1]))
        .sum()
}

fn road_features(center: LatLon, roads: &[Road], n_levels: usize, radius_m: f64) -> (Vec<f64>, Vec<f64>) {
    let mut counts = vec![0.0; n_levels];
    let mut lengths = vec![0.0; n_levels];
    for road in roads {
        let mut hit = false;
        let mut len = 0.0;
        for line in &road.lines {
            for w in line.windows(2) {
                if haversine(center, w[0].midpoint(w[1])) <= radius_m {
                    hit = true;
                    len += haversine(w[0], w[1]);
                }
            }
        }
        if hit {
            counts[road.level] += 1.0;
            lengths[road.level] += len;
        }
    }
    (counts, lengths)
}

/// Full 43-feature vector for one station-month.
pub fn assemble_features(
    station: &StationRecord,
    month: YearMonth,
    layers: &LayerSet,
    active: &[StationRecord],
) -> Result<(FeatureVector, BssNetwork)> {
    let statics = StaticFeatures::compute(layers, station.location())?;
    let bss = extract_bss_network(station, active);
    Ok((statics.with_network(month, &bss), bss))
}

/// Memoized static features per station.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FeatureCache {
    statics: BTreeMap<StationId, StaticFeatures>,
}

impl FeatureCache {
    pub fn build(layers: &LayerSet, stations: &[StationRecord]) -> Result<Self> {
        let mut cache = Self::default();
        for s in stations {
            cache.insert(layers, s)?;
        }
        Ok(cache)
    }

    pub fn insert(&mut self, layers: &LayerSet, station: &StationRecord) -> Result<&StaticFeatures> {
        let at = station.location();
        let stale = self.statics.get(&station.id).is_none_or(|s| s.at != at);
        if stale {
            self.statics.insert(station.id.clone(), StaticFeatures::compute(layers, at)?);
        }
        Ok(&self.statics[&station.id])
    }

    pub fn get(&self, station: &StationRecord) -> Option<&StaticFeatures> {
        self.statics.get(&station.id).filter(|s| s.at == station.location())
    }

    /// Features of every station in `active` for `month`.
    pub fn month_features(
        &mut self,
        layers: &LayerSet,
        month: YearMonth,
        active: &[StationRecord],
    ) -> Result<BTreeMap<StationId, (FeatureVector, BssNetwork)>> {
        let mut out = BTreeMap::new();
        for s in active {
            let bss = extract_bss_network(s, active);
            let fv = self.insert(layers, s)?.with_network(month, &bss);
            out.insert(s.id.clone(), (fv, bss));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::layers::{FeatureConfig, Polygon};

    const ORIGIN: LatLon = LatLon::new(40.75, -73.98);

    /// Point `meters` north of `from`.
    fn north(from: LatLon, meters: f64) -> LatLon {
        LatLon::new(from.lat + (meters / crate::geo::EARTH_RADIUS_M).to_degrees(), from.lon)
    }

    fn station(id: &str, at: LatLon) -> StationRecord {
        StationRecord::new(id.into(), at.lat, at.lon, YearMonth::new(2015, 1).unwrap(), None).unwrap()
    }

    #[test]
    fn empty_layer_gives_zero_counts() {
        assert_eq!(extract_radius_counts(ORIGIN, &[], 10, 500.0).unwrap(), vec![0; 10]);
    }

    #[test]
    fn radius_boundary_is_inclusive_side_only() {
        let pts = [Poi { at: north(ORIGIN, 499.0), category: 0 }, Poi { at: north(ORIGIN, 501.0), category: 0 }];
        assert_eq!(extract_radius_counts(ORIGIN, &pts, 10, 500.0).unwrap()[0], 1);
    }

    #[test]
    fn bss_bands_example() {
        let target = station("a", ORIGIN);
        let active = [target.clone(), station("b", north(ORIGIN, 400.0)), station("c", north(ORIGIN, 2000.0))];
        let net = extract_bss_network(&target, &active);
        assert_eq!(net.bands, [1, 0, 1]);
        assert!((net.mean_distance_m - 1200.0).abs() < 1e-6);
        assert!(!net.isolated);
    }

    #[test]
    fn single_station_system_is_flagged() {
        let target = station("a", ORIGIN);
        let net = extract_bss_network(&target, core::slice::from_ref(&target));
        assert_eq!(net.bands, [0, 0, 0]);
        assert_eq!(net.mean_distance_m, 0.0);
        assert!(net.isolated);
    }

    fn unit_tract(id: &str, lat0: f64, lon0: f64, value: f64) -> Tract {
        let ring = vec![
            LatLon::new(lat0, lon0),
            LatLon::new(lat0, lon0 + 0.01),
            LatLon::new(lat0 + 0.01, lon0 + 0.01),
            LatLon::new(lat0 + 0.01, lon0),
        ];
        let attrs = FeatureConfig::default()
            .sociodemographic_attributes
            .into_iter()
            .enumerate()
            .map(|(i, a)| (a, value + i as f64))
            .collect();
        Tract::new(id.into(), vec![Polygon { exterior: ring, holes: Vec::new() }], attrs)
    }

    #[test]
    fn sociodemographics_inside_and_fallback() {
        let attrs = FeatureConfig::default().sociodemographic_attributes;
        let tracts = [unit_tract("a", 40.0, -74.0, 100.0), unit_tract("b", 40.05, -74.0, 200.0)];
        let inside = extract_sociodemographics(LatLon::new(40.005, -73.995), &tracts, &attrs).unwrap();
        assert_eq!(inside[0], 100.0);
        assert_eq!(inside[10], 110.0);
        // Outside both, closer to b's centroid.
        let outside = extract_sociodemographics(LatLon::new(40.045, -73.995), &tracts, &attrs).unwrap();
        assert_eq!(outside[0], 200.0);
    }

    #[test]
    fn missing_tract_attribute_names_tract_and_attribute() {
        let mut t = unit_tract("t7", 40.0, -74.0, 1.0);
        t.attributes.remove("pct_white");
        let attrs = FeatureConfig::default().sociodemographic_attributes;
        let err = extract_sociodemographics(LatLon::new(40.005, -73.995), &[t], &attrs).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("t7") && msg.contains("pct_white"), "{msg}");
    }

    #[test]
    fn segment_midpoint_rule() {
        // Midpoints at 100 m, 400 m and 700 m; only the last segment is out.
        let line = [ORIGIN, north(ORIGIN, 200.0), north(ORIGIN, 600.0), north(ORIGIN, 800.0)];
        let len = length_within(ORIGIN, &line, 500.0);
        assert!((len - 600.0).abs() < 1e-6, "{len}");
    }
}
