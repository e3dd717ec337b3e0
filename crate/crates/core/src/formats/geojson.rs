use std::path::Path;

use geojson::{Feature, FeatureCollection, GeoJson, Geometry, GeometryValue, JsonObject, Position};

use super::FormatError;
use crate::geo::{Point, Polygon};

/// One polygon with its feature properties.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFeature {
    pub polygon: Polygon,
    pub properties: JsonObject,
}

impl VectorFeature {
    pub fn str_prop(&self, key: &str) -> Option<&str> {
        self.properties.get(key).and_then(|v| v.as_str())
    }

    pub fn bool_prop(&self, key: &str) -> Option<bool> {
        self.properties.get(key).and_then(|v| v.as_bool())
    }

    pub fn f64_prop(&self, key: &str) -> Option<f64> {
        self.properties.get(key).and_then(|v| v.as_f64())
    }
}

fn ring_to_positions(ring: &[Point]) -> Vec<Position> {
    ring.iter().map(|p| Position::from([p.x, p.y])).collect()
}

fn positions_to_ring(ring: &[Position]) -> Vec<Point> {
    ring.iter().map(|p| Point::new(p[0], p[1])).collect()
}

pub fn polygon_feature(polygon: &Polygon, properties: JsonObject) -> Feature {
    let coords: Vec<Vec<Position>> = polygon.rings().map(ring_to_positions).collect();
    Feature {
        bbox: None,
        geometry: Some(Geometry::new(GeometryValue::Polygon { coordinates: coords })),
        id: None,
        properties: Some(properties),
        foreign_members: None,
    }
}

fn rings_to_polygon(rings: &[Vec<Position>]) -> Result<Polygon, crate::geo::GeoError> {
    let mut it = rings.iter().map(|r| positions_to_ring(r));
    let exterior = it.next().unwrap_or_default();
    Polygon::new(exterior, it.collect())
}

/// Polygons carried by a feature; `MultiPolygon` yields one per member.
pub fn feature_polygons(feature: &Feature) -> Result<Vec<Polygon>, crate::geo::GeoError> {
    match feature.geometry.as_ref().map(|g| &g.value) {
        Some(GeometryValue::Polygon { coordinates }) => Ok(vec![rings_to_polygon(coordinates)?]),
        Some(GeometryValue::MultiPolygon { coordinates }) => {
            coordinates.iter().map(|p| rings_to_polygon(p)).collect()
        }
        _ => Ok(Vec::new()),
    }
}

/// Reads a FeatureCollection of (multi)polygons. Returns the features and
/// the `crs_epsg` foreign member when present.
pub fn read_feature_collection(
    path: &Path,
) -> Result<(Vec<VectorFeature>, Option<u32>), FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let gj: GeoJson = text
        .parse()
        .map_err(|e: geojson::Error| FormatError::invalid(path, e.to_string()))?;
    let fc = match gj {
        GeoJson::FeatureCollection(fc) => fc,
        _ => return Err(FormatError::invalid(path, "expected a FeatureCollection")),
    };
    let epsg = fc
        .foreign_members
        .as_ref()
        .and_then(|m| m.get("crs_epsg"))
        .and_then(|v| v.as_u64())
        .map(|v| v as u32);
    let mut out = Vec::new();
    for (i, f) in fc.features.iter().enumerate() {
        if f.geometry.is_none() {
            return Err(FormatError::invalid(path, format!("feature {i} has no geometry")));
        }
        let polys = feature_polygons(f)
            .map_err(|e| FormatError::invalid(path, format!("feature {i}: {e}")))?;
        if polys.is_empty() {
            return Err(FormatError::invalid(path, format!("feature {i} is not a polygon")));
        }
        let props = f.properties.clone().unwrap_or_default();
        out.extend(polys.into_iter().map(|polygon| VectorFeature {
            polygon,
            properties: props.clone(),
        }));
    }
    Ok((out, epsg))
}

pub fn write_feature_collection(
    path: &Path,
    features: Vec<Feature>,
    epsg: Option<u32>,
) -> Result<(), FormatError> {
    let mut fc = FeatureCollection::new(features);
    if let Some(code) = epsg {
        let mut fm = JsonObject::new();
        fm.insert("crs_epsg".into(), code.into());
        fc.foreign_members = Some(fm);
    }
    let text = GeoJson::from(fc).to_string();
    std::fs::write(path, text).map_err(|e| FormatError::io(path, e))
}
