//! GeoJSON FeatureCollections to and from geo layers.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Map, Value};
use tripgen_core::geo::{GeoFeature, GeoLayer, Geometry, LatLon, LayerKind, PropertyValue};

fn position(v: &Value) -> Result<LatLon> {
    let arr = v.as_array().ok_or_else(|| anyhow!("position is not an array"))?;
    if arr.len() < 2 {
        bail!("position needs longitude and latitude");
    }
    let lon = arr[0].as_f64().ok_or_else(|| anyhow!("longitude is not a number"))?;
    let lat = arr[1].as_f64().ok_or_else(|| anyhow!("latitude is not a number"))?;
    Ok(LatLon::new(lat, lon))
}

fn positions(v: &Value) -> Result<Vec<LatLon>> {
    v.as_array().ok_or_else(|| anyhow!("expected an array of positions"))?.iter().map(position).collect()
}

fn rings(v: &Value) -> Result<Vec<Vec<LatLon>>> {
    v.as_array().ok_or_else(|| anyhow!("expected an array of rings"))?.iter().map(positions).collect()
}

fn geometry(v: &Value) -> Result<Geometry> {
    let kind = v.get("type").and_then(Value::as_str).ok_or_else(|| anyhow!("geometry without type"))?;
    let coords = v.get("coordinates").ok_or_else(|| anyhow!("{kind} geometry without coordinates"))?;
    Ok(match kind {
        "Point" => Geometry::Point(position(coords)?),
        "LineString" => Geometry::LineString(positions(coords)?),
        "MultiLineString" => Geometry::MultiLineString(rings(coords)?),
        "Polygon" => Geometry::Polygon(rings(coords)?),
        "MultiPolygon" => Geometry::MultiPolygon(
            coords.as_array().ok_or_else(|| anyhow!("MultiPolygon coordinates are not an array"))?.iter().map(rings).collect::<Result<_>>()?,
        ),
        other => bail!("unsupported geometry type {other}"),
    })
}

fn property(v: &Value) -> PropertyValue {
    match v {
        Value::Number(n) => n.as_f64().map_or(PropertyValue::Null, PropertyValue::Number),
        Value::String(s) => PropertyValue::Text(s.clone()),
        Value::Bool(b) => PropertyValue::Text(b.to_string()),
        _ => PropertyValue::Null,
    }
}

/// Parses a FeatureCollection. Features without geometry are skipped and
/// counted in the returned number.
pub fn parse_layer(kind: LayerKind, text: &str) -> Result<(GeoLayer, usize)> {
    let doc: Value = serde_json::from_str(text).context("invalid JSON")?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        bail!("expected a GeoJSON FeatureCollection");
    }
    let items = doc.get("features").and_then(Value::as_array).ok_or_else(|| anyhow!("FeatureCollection without features"))?;
    let mut features = Vec::with_capacity(items.len());
    let mut skipped = 0;
    for (i, item) in items.iter().enumerate() {
        let Some(g) = item.get("geometry").filter(|g| !g.is_null()) else {
            skipped += 1;
            continue;
        };
        let geometry = geometry(g).with_context(|| format!("feature {i}"))?;
        let properties: BTreeMap<String, PropertyValue> = item
            .get("properties")
            .and_then(Value::as_object)
            .map(|o| o.iter().map(|(k, v)| (k.clone(), property(v))).collect())
            .unwrap_or_default();
        features.push(GeoFeature { geometry, properties });
    }
    Ok((GeoLayer { kind, features }, skipped))
}

pub fn read_layer(kind: LayerKind, path: &Path) -> Result<GeoLayer> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (layer, skipped) = parse_layer(kind, &text).with_context(|| format!("parsing {}", path.display()))?;
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} features without geometry", path.display());
    }
    Ok(layer)
}

fn pos(p: &LatLon) -> Value {
    json!([p.lon, p.lat])
}

fn line(ps: &[LatLon]) -> Value {
    Value::Array(ps.iter().map(pos).collect())
}

fn multi(rs: &[Vec<LatLon>]) -> Value {
    Value::Array(rs.iter().map(|r| line(r)).collect())
}

fn geometry_json(g: &Geometry) -> Value {
    let (kind, coords) = match g {
        Geometry::Point(p) => ("Point", pos(p)),
        Geometry::LineString(l) => ("LineString", line(l)),
        Geometry::MultiLineString(ls) => ("MultiLineString", multi(ls)),
        Geometry::Polygon(rs) => ("Polygon", multi(rs)),
        Geometry::MultiPolygon(ps) => ("MultiPolygon", Value::Array(ps.iter().map(|p| multi(p)).collect())),
    };
    json!({ "type": kind, "coordinates": coords })
}

pub fn layer_to_json(layer: &GeoLayer) -> Value {
    let features: Vec<Value> = layer
        .features
        .iter()
        .map(|f| {
            let props: Map<String, Value> = f
                .properties
                .iter()
                .map(|(k, v)| {
                    let v = match v {
                        PropertyValue::Number(n) => json!(n),
                        PropertyValue::Text(s) => json!(s),
                        PropertyValue::Null => Value::Null,
                    };
                    (k.clone(), v)
                })
                .collect();
            json!({ "type": "Feature", "geometry": geometry_json(&f.geometry), "properties": props })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn write_layer(layer: &GeoLayer, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&layer_to_json(layer))?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
