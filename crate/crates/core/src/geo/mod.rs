//! Geodesy and built-environment feature extraction.

mod features;
mod layers;

pub use features::{
    assemble_features, extract_bss_network, extract_radius_counts, extract_sociodemographics,
    BssNetwork, FeatureCache, FeatureVector, StaticFeatures, TemporalFeatures, BSS_RANGE,
    FEATURE_DIM, POI_RANGE, ROAD_RANGE, SOCIO_RANGE, TRANSIT_RANGE,
};
pub use layers::{
    BikeLane, BoundingBox, FeatureConfig, GeoFeature, GeoLayer, Geometry, LayerKind, LayerSet,
    Poi, Polygon, PropertyValue, Road, Tract,
};

use serde::{Deserialize, Serialize};

use crate::math;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    /// Planar midpoint in degree space; adequate for street-scale segments.
    pub fn midpoint(self, other: LatLon) -> LatLon {
        LatLon::new((self.lat + other.lat) / 2.0, (self.lon + other.lon) / 2.0)
    }
}

/// Great-circle distance in meters.
pub fn haversine(a: LatLon, b: LatLon) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let s1 = math::sin(dphi / 2.0);
    let s2 = math::sin(dlambda / 2.0);
    let h = s1 * s1 + math::cos(phi1) * math::cos(phi2) * s2 * s2;
    2.0 * EARTH_RADIUS_M * math::asin(math::sqrt(h.clamp(0.0, 1.0)))
}

/// Length of a polyline in meters.
pub fn polyline_length(points: &[LatLon]) -> f64 {
    points.windows(2).map(|w| haversine(w[0], w[1])).sum()
}
