//! Localized k-nearest-neighbor graphs with Gaussian kernel weights, one per
//! station and relation kind: geographic proximity and built-environment
//! similarity.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::haversine;
use crate::math;
use crate::station::{StationId, StationRecord};
use crate::time::YearMonth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Proximity,
    Similarity,
}

impl GraphKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphKind::Proximity => "proximity",
            GraphKind::Similarity => "similarity",
        }
    }
}

/// Which station pairs the kernel bandwidths are computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaScope {
    /// Pooled over the training months; supplied as overrides.
    Global,
    /// All unordered active-station pairs of each month.
    PerMonth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphBuilderConfig {
    pub k: usize,
    pub sigma_scope: SigmaScope,
    /// Fixed bandwidth in meters; computed from the data when absent.
    pub sigma_d: Option<f64>,
    /// Fixed bandwidth in normalized feature units.
    pub sigma_b: Option<f64>,
}

impl Default for GraphBuilderConfig {
    fn default() -> Self {
        Self { k: 5, sigma_scope: SigmaScope::PerMonth, sigma_d: None, sigma_b: None }
    }
}

impl GraphBuilderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        for (name, s) in [("sigma_d", self.sigma_d), ("sigma_b", self.sigma_b)] {
            if let Some(s) = s {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::Config(alloc::format!("{name} must be positive, got {s}")));
                }
            }
        }
        if self.sigma_scope == SigmaScope::Global && (self.sigma_d.is_none() || self.sigma_b.is_none()) {
            return Err(Error::Config("global sigma scope requires precomputed sigma_d and sigma_b".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedGraph {
    pub center: StationId,
    pub kind: GraphKind,
    /// Ascending by distance, ties by station id.
    pub neighbors: Vec<StationId>,
    pub distances: Vec<f64>,
    pub kernel_weights: Vec<f64>,
}

impl LocalizedGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthGraphs {
    pub month: YearMonth,
    pub sigma_d: f64,
    pub sigma_b: f64,
    pub proximity: BTreeMap<StationId, LocalizedGraph>,
    pub similarity: BTreeMap<StationId, LocalizedGraph>,
    /// Set when only one station is active and all neighbor lists are empty.
    pub degenerate: bool,
}

impl MonthGraphs {
    pub fn get(&self, kind: GraphKind, center: &StationId) -> Option<&LocalizedGraph> {
        match kind {
            GraphKind::Proximity => self.proximity.get(center),
            GraphKind::Similarity => self.similarity.get(center),
        }
    }
}

/// `exp(-(d / sigma)^2)` without argument checks.
#[inline]
pub fn kernel_weight(distance: f64, sigma: f64) -> f64 {
    let r = distance / sigma;
    math::exp(-(r * r))
}

pub fn proximity_weight(distance_m: f64, sigma_d: f64) -> Result<f64> {
    if !(sigma_d > 0.0) {
        return Err(Error::Config(alloc::format!("sigma_d must be positive, got {sigma_d}")));
    }
    if !(distance_m >= 0.0) {
        return Err(Error::InvalidInput(alloc::format!("negative distance {distance_m}")));
    }
    Ok(kernel_weight(distance_m, sigma_d))
}

pub fn feature_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(alloc::format!("feature dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()))
}

pub fn similarity_weight(x_i: &[f64], x_j: &[f64], sigma_b: f64) -> Result<f64> {
    if !(sigma_b > 0.0) {
        return Err(Error::Config(alloc::format!("sigma_b must be positive, got {sigma_b}")));
    }
    Ok(kernel_weight(feature_distance(x_i, x_j)?, sigma_b))
}

/// Population standard deviation (Welford). Returns `None` for no values.
pub fn population_std(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for v in values {
        n += 1;
        let delta = v - mean;
        mean += delta / n as f64;
        m2 += delta * (v - mean);
    }
    (n > 0).then(|| math::sqrt((m2 / n as f64).max(0.0)))
}

/// Bandwidth from pairwise distances. When every pair is equidistant the
/// standard deviation is zero; the mean distance is used instead, and 1.0 if
/// that is zero as well.
pub fn bandwidth(pairwise: &[f64]) -> f64 {
    let std = population_std(pairwise.iter().copied()).unwrap_or(0.0);
    if std > 0.0 {
        return std;
    }
    let mean = if pairwise.is_empty() { 0.0 } else { pairwise.iter().sum::<f64>() / pairwise.len() as f64 };
    if mean > 0.0 {
        mean
    } else {
        1.0
    }
}

/// Symmetric distance matrix, row-major.
struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    fn build(n: usize, f: impl Fn(usize, usize) -> Result<f64>) -> Result<Self> {
        let mut d = alloc::vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j)?;
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Ok(Self { n, d })
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.n.saturating_sub(1) / 2);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                out.push(self.at(i, j));
            }
        }
        out
    }
}

fn rank_cmp(a: &(f64, &StationId), b: &(f64, &StationId)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

/// Indices of the `k` nearest rows to `center`, ordered by (distance, id).
fn k_nearest(dm: &DistanceMatrix, ids: &[&StationId], center: usize, k: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, &StationId, usize)> =
        (0..dm.n).filter(|&j| j != center).map(|j| (dm.at(center, j), ids[j], j)).collect();
    let cmp = |a: &(f64, &StationId, usize), b: &(f64, &StationId, usize)| rank_cmp(&(a.0, a.1), &(b.0, b.1));
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    cand.into_iter().map(|(_, _, j)| j).collect()
}

/// Pairwise great-circle distances among `stations` (upper triangle).
pub fn pairwise_geo_distances(stations: &[StationRecord]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..stations.len() {
        for j in (i + 1)..stations.len() {
            out.push(haversine(stations[i].location(), stations[j].location()));
        }
    }
    out
}

/// Builds both localized graphs for every active station in `month`.
/// `features` holds normalized built-environment vectors keyed by station.
pub fn build_localized_graphs(
    stations: &[StationRecord],
    features: &BTreeMap<StationId, Vec<f64>>,
    config: &GraphBuilderConfig,
    month: YearMonth,
) -> Result<MonthGraphs> {
    config.validate()?;
    if stations.is_empty() {
        return Err(Error::InvalidInput(alloc::format!("no active stations in {month}")));
    }
    let mut order: Vec<&StationRecord> = stations.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let ids: Vec<&StationId> = order.iter().map(|s| &s.id).collect();
    let feats: Vec<&Vec<f64>> = ids
        .iter()
        .map(|id| features.get(*id).ok_or_else(|| Error::Data(alloc::format!("no features for station {id} in {month}"))))
        .collect::<Result<_>>()?;
    let n = order.len();

    let geo = DistanceMatrix::build(n, |i, j| Ok(haversine(order[i].location(), order[j].location())))?;
    let sim = DistanceMatrix::build(n, |i, j| feature_distance(feats[i], feats[j]))?;

    let sigma_d = config.sigma_d.unwrap_or_else(|| bandwidth(&geo.upper_triangle()));
    let sigma_b = config.sigma_b.unwrap_or_else(|| bandwidth(&sim.upper_triangle()));
    let degenerate = n == 1;
    if degenerate {
        log::warn!("only one active station in {month}; localized graphs are empty");
    }

    let mut proximity = BTreeMap::new();
    let mut similarity = BTreeMap::new();
    for c in 0..n {
        for (kind, dm, sigma, out) in [
            (GraphKind::Proximity, &geo, sigma_d, &mut proximity),
            (GraphKind::Similarity, &sim, sigma_b, &mut similarity),
        ] {
            let nn = k_nearest(dm, &ids, c, config.k);
            let distances: Vec<f64> = nn.iter().map(|&j| dm.at(c, j)).collect();
            let graph = LocalizedGraph {
                center: ids[c].clone(),
                kind,
                neighbors: nn.iter().map(|&j| ids[j].clone()).collect(),
                kernel_weights: distances.iter().map(|&d| kernel_weight(d, sigma)).collect(),
                distances,
            };
            out.insert(ids[c].clone(), graph);
        }
    }
    Ok(MonthGraphs { month, sigma_d, sigma_b, proximity, similarity, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{LatLon, EARTH_RADIUS_M};
    use alloc::vec;

    fn north(meters: f64) -> LatLon {
        LatLon::new(40.7 + (meters / EARTH_RADIUS_M).to_degrees(), -74.0)
    }

    fn station(id: &str, at: LatLon) -> StationRecord {
        StationRecord::new(id.into(), at.lat, at.lon, YearMonth::new(2015, 1).unwrap(), None).unwrap()
    }

    fn month() -> YearMonth {
        YearMonth::new(2016, 6).unwrap()
    }

    #[test]
    fn proximity_kernel_values() {
        assert_eq!(proximity_weight(0.0, 250.0).unwrap(), 1.0);
        assert!((proximity_weight(250.0, 250.0).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-12);
        assert!((proximity_weight(500.0, 250.0).unwrap() - 0.018_315_638_888_734_18).abs() < 1e-12);
        assert!(matches!(proximity_weight(1.0, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn similarity_kernel_values() {
        let x = [0.1, 0.5, 0.9];
        assert_eq!(similarity_weight(&x, &x, 0.3).unwrap(), 1.0);
        let y = [0.1, 0.5 + 0.3, 0.9];
        assert!((similarity_weight(&x, &y, 0.3).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
        assert!(similarity_weight(&x, &[0.0], 1.0).is_err());
    }

    #[test]
    fn collinear_stations_pick_two_nearest() {
        let stations = vec![
            station("a", north(0.0)),
            station("b", north(100.0)),
            station("c", north(200.0)),
            station("d", north(1000.0)),
        ];
        let feats = stations.iter().map(|s| (s.id.clone(), vec![s.lat])).collect();
        let cfg = GraphBuilderConfig { k: 2, ..Default::default() };
        let g = build_localized_graphs(&stations, &feats, &cfg, month()).unwrap();
        let a = &g.proximity[&StationId::from("a")];
        assert_eq!(a.neighbors, vec![StationId::from("b"), StationId::from("c")]);
        assert!(a.kernel_weights[0] > a.kernel_weights[1]);
    }

    #[test]
    fn identical_features_are_mutual_top_neighbors() {
        let stations = vec![station("a", north(0.0)), station("b", north(900.0)), station("c", north(300.0))];
        let mut feats = BTreeMap::new();
        feats.insert(StationId::from("a"), vec![0.2, 0.2]);
        feats.insert(StationId::from("b"), vec![0.2, 0.2]);
        feats.insert(StationId::from("c"), vec![0.9, 0.1]);
        let g = build_localized_graphs(&stations, &feats, &GraphBuilderConfig::default(), month()).unwrap();
        for (me, other) in [("a", "b"), ("b", "a")] {
            let s = &g.similarity[&StationId::from(me)];
            assert_eq!(s.neighbors[0], StationId::from(other));
            assert_eq!(s.kernel_weights[0], 1.0);
        }
    }

    #[test]
    fn single_station_gives_empty_graphs() {
        let stations = vec![station("a", north(0.0))];
        let feats = stations.iter().map(|s| (s.id.clone(), vec![0.0])).collect();
        let g = build_localized_graphs(&stations, &feats, &GraphBuilderConfig::default(), month()).unwrap();
        assert!(g.degenerate);
        assert!(g.proximity[&StationId::from("a")].is_empty());
    }

    #[test]
    fn ties_break_by_id() {
        let stations = vec![station("z", north(100.0)), station("m", north(0.0)), station("b", north(-100.0))];
        let feats = stations.iter().map(|s| (s.id.clone(), vec![0.0])).collect();
        let cfg = GraphBuilderConfig { k: 1, ..Default::default() };
        let g = build_localized_graphs(&stations, &feats, &cfg, month()).unwrap();
        let m = &g.proximity[&StationId::from("m")];
        // Haversine north/south offsets are equal to rounding; the id decides.
        assert!((m.distances[0] - 100.0).abs() < 1e-6);
        let sim = &g.similarity[&StationId::from("m")];
        assert_eq!(sim.neighbors, vec![StationId::from("b")]);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [3.0, 7.0, 7.0, 19.0, 24.0];
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 5.0;
        assert!((population_std(xs).unwrap() - var.sqrt()).abs() < 1e-12);
        assert_eq!(population_std(core::iter::empty()), None);
    }
}
