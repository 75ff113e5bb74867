//! Geographic layers: the loosely typed ingestion view (`GeoLayer`) and the
//! validated, typed view used for feature extraction (`LayerSet`).

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::LatLon;
use crate::error::{Error, Result};
use crate::time::YearMonth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Poi,
    CensusTract,
    Road,
    BikeLane,
    Subway,
    Junction,
}

impl LayerKind {
    pub const ALL: [LayerKind; 6] = [
        LayerKind::Poi,
        LayerKind::CensusTract,
        LayerKind::Road,
        LayerKind::BikeLane,
        LayerKind::Subway,
        LayerKind::Junction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Poi => "poi",
            LayerKind::CensusTract => "census_tract",
            LayerKind::Road => "road",
            LayerKind::BikeLane => "bike_lane",
            LayerKind::Subway => "subway",
            LayerKind::Junction => "junction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Geometry {
    Point(LatLon),
    LineString(Vec<LatLon>),
    MultiLineString(Vec<Vec<LatLon>>),
    /// Rings; the first is the exterior, the rest are holes.
    Polygon(Vec<Vec<LatLon>>),
    MultiPolygon(Vec<Vec<Vec<LatLon>>>),
}

impl Geometry {
    fn coords(&self) -> impl Iterator<Item = &LatLon> + '_ {
        let flat: Vec<&LatLon> = match self {
            Geometry::Point(p) => alloc::vec![p],
            Geometry::LineString(l) => l.iter().collect(),
            Geometry::MultiLineString(ls) => ls.iter().flatten().collect(),
            Geometry::Polygon(rings) => rings.iter().flatten().collect(),
            Geometry::MultiPolygon(polys) => polys.iter().flatten().flatten().collect(),
        };
        flat.into_iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PropertyValue {
    Number(f64),
    Text(String),
    Null,
}

impl PropertyValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            PropertyValue::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Numbers, or text that parses as a number.
    pub fn as_number(&self) -> Option<f64> {
        match self {
            PropertyValue::Number(v) => Some(*v),
            PropertyValue::Text(s) => s.trim().parse().ok(),
            PropertyValue::Null => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoFeature {
    pub geometry: Geometry,
    pub properties: BTreeMap<String, PropertyValue>,
}

impl GeoFeature {
    pub fn new(geometry: Geometry) -> Self {
        Self { geometry, properties: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: PropertyValue) -> Self {
        self.properties.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoLayer {
    pub kind: LayerKind,
    pub features: Vec<GeoFeature>,
}

/// Names and property keys that fix the layout of the feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub poi_categories: Vec<String>,
    /// Categories present in the source data but not used as features.
    pub ignored_poi_categories: Vec<String>,
    pub road_levels: Vec<String>,
    pub ignored_road_levels: Vec<String>,
    pub sociodemographic_attributes: Vec<String>,
    pub radius_m: f64,
    pub poi_category_key: String,
    pub road_level_key: String,
    pub open_date_key: String,
    pub tract_id_key: String,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            poi_categories: owned(&[
                "residential",
                "educational",
                "cultural",
                "recreational",
                "commercial",
                "religious",
                "transportation",
                "government",
                "health",
                "social_services",
            ]),
            ignored_poi_categories: Vec::new(),
            road_levels: owned(&[
                "motorway",
                "trunk",
                "primary",
                "secondary",
                "tertiary",
                "unclassified",
                "residential",
            ]),
            ignored_road_levels: Vec::new(),
            sociodemographic_attributes: owned(&[
                "population_density",
                "housing_unit_density",
                "pct_in_households",
                "pct_under_18",
                "avg_household_size",
                "total_housing_units",
                "pct_occupied_units",
                "pct_hispanic",
                "pct_white",
                "pct_asian",
                "pct_black",
            ]),
            radius_m: 500.0,
            poi_category_key: "category".into(),
            road_level_key: "level".into(),
            open_date_key: "open_date".into(),
            tract_id_key: "id".into(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Config(alloc::format!("expected {want} {what}, got {got}")))
            }
        };
        check("POI categories", self.poi_categories.len(), 10)?;
        check("road levels", self.road_levels.len(), 7)?;
        check("sociodemographic attributes", self.sociodemographic_attributes.len(), 11)?;
        if !(self.radius_m > 0.0) {
            return Err(Error::Config("radius_m must be positive".into()));
        }
        Ok(())
    }

    /// The 43 feature names in vector order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(43);
        names.extend(self.poi_categories.iter().map(|c| alloc::format!("poi_{c}")));
        names.extend(self.sociodemographic_attributes.iter().cloned());
        names.extend(self.road_levels.iter().map(|l| alloc::format!("road_count_{l}")));
        names.extend(self.road_levels.iter().map(|l| alloc::format!("road_length_{l}")));
        names.push("bike_lane_length".into());
        names.push("junction_count".into());
        names.push("subway_distance".into());
        names.push("subway_count".into());
        names.push("bss_count_0_500".into());
        names.push("bss_count_500_1000".into());
        names.push("bss_count_1000_5000".into());
        names.push("bss_mean_distance".into());
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub at: LatLon,
    pub category: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Vec<LatLon>,
    pub holes: Vec<Vec<LatLon>>,
}

impl Polygon {
    pub fn contains(&self, p: LatLon) -> bool {
        ring_contains(&self.exterior, p) && !self.holes.iter().any(|h| ring_contains(h, p))
    }

    /// Signed shoelace area in degree units and the area centroid.
    fn area_and_centroid(&self) -> (f64, LatLon) {
        let ring = &self.exterior;
        let n = ring.len();
        let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let p = ring[i];
            let q = ring[(i + 1) % n];
            let cross = p.lon * q.lat - q.lon * p.lat;
            a2 += cross;
            cx += (p.lon + q.lon) * cross;
            cy += (p.lat + q.lat) * cross;
        }
        if a2.abs() < 1e-18 {
            let k = n.max(1) as f64;
            let lat = ring.iter().map(|p| p.lat).sum::<f64>() / k;
            let lon = ring.iter().map(|p| p.lon).sum::<f64>() / k;
            return (0.0, LatLon::new(lat, lon));
        }
        (a2 / 2.0, LatLon::new(cy / (3.0 * a2), cx / (3.0 * a2)))
    }
}

/// Even-odd ray casting in the lon/lat plane. Points on an edge may fall on
/// either side.
fn ring_contains(ring: &[LatLon], p: LatLon) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon;
            if p.lon < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tract {
    pub id: String,
    pub polygons: Vec<Polygon>,
    pub attributes: BTreeMap<String, f64>,
    pub centroid: LatLon,
}

impl Tract {
    pub fn new(id: String, polygons: Vec<Polygon>, attributes: BTreeMap<String, f64>) -> Self {
        let mut area = 0.0;
        let (mut lat, mut lon) = (0.0, 0.0);
        for poly in &polygons {
            let (a, c) = poly.area_and_centroid();
            area += a.abs();
            lat += a.abs() * c.lat;
            lon += a.abs() * c.lon;
        }
        let centroid = if area > 0.0 {
            LatLon::new(lat / area, lon / area)
        } else {
            polygons.first().map(|p| p.area_and_centroid().1).unwrap_or(LatLon::new(0.0, 0.0))
        };
        Self { id, polygons, attributes, centroid }
    }

    pub fn contains(&self, p: LatLon) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub lines: Vec<Vec<LatLon>>,
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BikeLane {
    pub lines: Vec<Vec<LatLon>>,
    /// Lanes without an opening date are treated as always open.
    pub opened: Option<YearMonth>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: LatLon,
    pub max: LatLon,
}

impl BoundingBox {
    pub fn contains(&self, p: LatLon) -> bool {
        (self.min.lat..=self.max.lat).contains(&p.lat) && (self.min.lon..=self.max.lon).contains(&p.lon)
    }
}

/// Validated layers, immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSet {
    pub config: FeatureConfig,
    pub pois: Vec<Poi>,
    pub tracts: Vec<Tract>,
    pub roads: Vec<Road>,
    pub bike_lanes: Vec<BikeLane>,
    pub subways: Vec<LatLon>,
    pub junctions: Vec<LatLon>,
    pub junctions_derived: bool,
    pub bbox: BoundingBox,
}

impl LayerSet {
    /// Builds the typed view. Every kind except `junction` is required; when
    /// no junction layer is supplied, junctions are derived from road vertices
    /// shared by three or more segments.
    pub fn from_layers(layers: Vec<GeoLayer>, config: FeatureConfig) -> Result<Self> {
        config.validate()?;
        let mut by_kind: BTreeMap<LayerKind, Vec<GeoFeature>> = BTreeMap::new();
        for layer in layers {
            by_kind.entry(layer.kind).or_default().extend(layer.features);
        }
        for kind in LayerKind::ALL {
            if kind != LayerKind::Junction && !by_kind.contains_key(&kind) {
                return Err(Error::Config(alloc::format!("missing layer kind '{}'", kind.as_str())));
            }
        }

        let mut all_points: Vec<LatLon> = Vec::new();
        for (kind, features) in &by_kind {
            for (i, f) in features.iter().enumerate() {
                for c in f.geometry.coords() {
                    if !c.is_valid() {
                        return Err(Error::Data(alloc::format!(
                            "{} feature {i} has invalid coordinate ({}, {})",
                            kind.as_str(),
                            c.lat,
                            c.lon
                        )));
                    }
                    all_points.push(*c);
                }
            }
        }
        let bbox = bounding_box(&all_points)?;

        let pois = parse_pois(by_kind.remove(&LayerKind::Poi).unwrap_or_default(), &config)?;
        let tracts = parse_tracts(by_kind.remove(&LayerKind::CensusTract).unwrap_or_default(), &config)?;
        let roads = parse_roads(by_kind.remove(&LayerKind::Road).unwrap_or_default(), &config)?;
        let bike_lanes = parse_lanes(by_kind.remove(&LayerKind::BikeLane).unwrap_or_default(), &config)?;
        let subways = parse_points(by_kind.remove(&LayerKind::Subway).unwrap_or_default(), LayerKind::Subway)?;
        if subways.is_empty() {
            return Err(Error::Data("subway layer has no stations".into()));
        }
        if tracts.is_empty() {
            return Err(Error::Data("census tract layer is empty".into()));
        }
        let (junctions, junctions_derived) = match by_kind.remove(&LayerKind::Junction) {
            Some(features) => (parse_points(features, LayerKind::Junction)?, false),
            None => (derive_junctions(&roads), true),
        };

        Ok(Self { config, pois, tracts, roads, bike_lanes, subways, junctions, junctions_derived, bbox })
    }
}

fn bounding_box(points: &[LatLon]) -> Result<BoundingBox> {
    let first = points.first().ok_or_else(|| Error::Data("layers contain no geometry".into()))?;
    let mut min = *first;
    let mut max = *first;
    for p in points {
        min.lat = min.lat.min(p.lat);
        min.lon = min.lon.min(p.lon);
        max.lat = max.lat.max(p.lat);
        max.lon = max.lon.max(p.lon);
    }
    Ok(BoundingBox { min, max })
}

fn lookup(names: &[String], ignored: &[String], value: &str, what: &str, idx: usize) -> Result<Option<usize>> {
    if let Some(pos) = names.iter().position(|n| n == value) {
        return Ok(Some(pos));
    }
    if ignored.iter().any(|n| n == value) {
        return Ok(None);
    }
    Err(Error::Data(alloc::format!("feature {idx}: unknown {what} '{value}'")))
}

fn text_property<'a>(f: &'a GeoFeature, key: &str, kind: LayerKind, idx: usize) -> Result<&'a str> {
    f.properties.get(key).and_then(PropertyValue::as_text).ok_or_else(|| {
        Error::Data(alloc::format!("{} feature {idx} lacks text property '{key}'", kind.as_str()))
    })
}

fn parse_pois(features: Vec<GeoFeature>, config: &FeatureConfig) -> Result<Vec<Poi>> {
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let Geometry::Point(at) = f.geometry else {
            return Err(Error::Data(alloc::format!("poi feature {i} is not a Point")));
        };
        let cat = text_property(f, &config.poi_category_key, LayerKind::Poi, i)?;
        if let Some(category) = lookup(&config.poi_categories, &config.ignored_poi_categories, cat, "POI category", i)? {
            out.push(Poi { at, category });
        }
    }
    Ok(out)
}

fn parse_points(features: Vec<GeoFeature>, kind: LayerKind) -> Result<Vec<LatLon>> {
    features
        .iter()
        .enumerate()
        .map(|(i, f)| match f.geometry {
            Geometry::Point(p) => Ok(p),
            _ => Err(Error::Data(alloc::format!("{} feature {i} is not a Point", kind.as_str()))),
        })
        .collect()
}

fn lines_of(f: &GeoFeature, kind: LayerKind, idx: usize) -> Result<Vec<Vec<LatLon>>> {
    match &f.geometry {
        Geometry::LineString(l) => Ok(alloc::vec![l.clone()]),
        Geometry::MultiLineString(ls) => Ok(ls.clone()),
        _ => Err(Error::Data(alloc::format!("{} feature {idx} is not a LineString", kind.as_str()))),
    }
}

fn parse_roads(features: Vec<GeoFeature>, config: &FeatureConfig) -> Result<Vec<Road>> {
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let lines = lines_of(f, LayerKind::Road, i)?;
        let level = text_property(f, &config.road_level_key, LayerKind::Road, i)?;
        if let Some(level) = lookup(&config.road_levels, &config.ignored_road_levels, level, "road level", i)? {
            out.push(Road { lines, level });
        }
    }
    Ok(out)
}

fn parse_lanes(features: Vec<GeoFeature>, config: &FeatureConfig) -> Result<Vec<BikeLane>> {
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let lines = lines_of(f, LayerKind::BikeLane, i)?;
        let opened = match f.properties.get(&config.open_date_key) {
            None | Some(PropertyValue::Null) => None,
            Some(PropertyValue::Text(s)) if s.trim().is_empty() => None,
            Some(PropertyValue::Text(s)) => Some(s.parse::<YearMonth>().map_err(|e| {
                Error::Data(alloc::format!("bike_lane feature {i}: {e}"))
            })?),
            Some(PropertyValue::Number(_)) => {
                return Err(Error::Data(alloc::format!("bike_lane feature {i}: open_date must be text")))
            }
        };
        out.push(BikeLane { lines, opened });
    }
    Ok(out)
}

fn parse_tracts(features: Vec<GeoFeature>, config: &FeatureConfig) -> Result<Vec<Tract>> {
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.into_iter().enumerate() {
        let to_poly = |rings: &Vec<Vec<LatLon>>| -> Result<Polygon> {
            let mut it = rings.iter().cloned();
            let exterior = it.next().ok_or_else(|| Error::Data(alloc::format!("tract {i} has an empty polygon")))?;
            Ok(Polygon { exterior, holes: it.collect() })
        };
        let polygons = match &f.geometry {
            Geometry::Polygon(rings) => alloc::vec![to_poly(rings)?],
            Geometry::MultiPolygon(polys) => polys.iter().map(to_poly).collect::<Result<Vec<_>>>()?,
            _ => return Err(Error::Data(alloc::format!("census_tract feature {i} is not a Polygon"))),
        };
        let id = match f.properties.get(&config.tract_id_key) {
            Some(PropertyValue::Text(s)) => s.clone(),
            Some(PropertyValue::Number(v)) => alloc::format!("{v}"),
            _ => alloc::format!("#{i}"),
        };
        // Attributes are checked when a station is matched to the tract.
        let attributes = f
            .properties
            .iter()
            .filter(|(k, _)| config.sociodemographic_attributes.contains(k))
            .filter_map(|(k, v)| v.as_number().map(|n| (k.clone(), n)))
            .collect();
        out.push(Tract::new(id, polygons, attributes));
    }
    Ok(out)
}

/// Vertices where three or more road segments meet, keyed at ~1 cm resolution.
fn derive_junctions(roads: &[Road]) -> Vec<LatLon> {
    let key = |p: LatLon| ((p.lat * 1e7) as i64, (p.lon * 1e7) as i64);
    let mut degree: BTreeMap<(i64, i64), (u32, LatLon)> = BTreeMap::new();
    for road in roads {
        for line in &road.lines {
            for w in line.windows(2) {
                for p in [w[0], w[1]] {
                    degree.entry(key(p)).or_insert((0, p)).0 += 1;
                }
            }
        }
    }
    degree.into_values().filter(|(d, _)| *d >= 3).map(|(_, p)| p).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(lat0: f64, lon0: f64, size: f64) -> Vec<LatLon> {
        alloc::vec![
            LatLon::new(lat0, lon0),
            LatLon::new(lat0, lon0 + size),
            LatLon::new(lat0 + size, lon0 + size),
            LatLon::new(lat0 + size, lon0),
            LatLon::new(lat0, lon0),
        ]
    }

    #[test]
    fn polygon_containment_and_holes() {
        let poly = Polygon { exterior: square(0.0, 0.0, 1.0), holes: alloc::vec![square(0.4, 0.4, 0.2)] };
        assert!(poly.contains(LatLon::new(0.1, 0.1)));
        assert!(!poly.contains(LatLon::new(0.5, 0.5)));
        assert!(!poly.contains(LatLon::new(1.5, 0.5)));
    }

    #[test]
    fn centroid_of_square() {
        let t = Tract::new("t".into(), alloc::vec![Polygon { exterior: square(2.0, 4.0, 2.0), holes: Vec::new() }], BTreeMap::new());
        assert!((t.centroid.lat - 3.0).abs() < 1e-12);
        assert!((t.centroid.lon - 5.0).abs() < 1e-12);
    }

    #[test]
    fn junctions_need_degree_three() {
        let c = LatLon::new(40.0, -74.0);
        let arm = |dlat: f64, dlon: f64| Road { lines: alloc::vec![alloc::vec![c, LatLon::new(40.0 + dlat, -74.0 + dlon)]], level: 0 };
        let two = [arm(0.001, 0.0), arm(-0.001, 0.0)];
        assert!(derive_junctions(&two).is_empty());
        let three = [arm(0.001, 0.0), arm(-0.001, 0.0), arm(0.0, 0.001)];
        assert_eq!(derive_junctions(&three), alloc::vec![c]);
    }

    #[test]
    fn missing_layer_kind_is_fatal() {
        let err = LayerSet::from_layers(Vec::new(), FeatureConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn unknown_poi_category_is_fatal() {
        let f = GeoFeature::new(Geometry::Point(LatLon::new(40.0, -74.0)))
            .with("category", PropertyValue::Text("casino".into()));
        let err = parse_pois(alloc::vec![f.clone()], &FeatureConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        let mut cfg = FeatureConfig::default();
        cfg.ignored_poi_categories.push("casino".into());
        assert!(parse_pois(alloc::vec![f], &cfg).unwrap().is_empty());
    }

    #[test]
    fn feature_names_have_dimension_43() {
        assert_eq!(FeatureConfig::default().feature_names().len(), 43);
    }
}
