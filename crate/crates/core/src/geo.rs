//! Ward polygons from GeoJSON, polygon adjacency and choropleth output.

use serde_json::{json, Map, Value};

use crate::bsbt::ScalarSummary;
use crate::error::{Error, Result};
use crate::graph::WardGraph;

/// Default distance below which two boundaries count as touching.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

type Point = [f64; 2];
type Ring = Vec<Point>;

/// Geometry of one ward: a list of polygons, each an exterior ring followed
/// by its holes.
#[derive(Debug, Clone, PartialEq)]
pub struct WardPolygon {
    pub id: String,
    pub polygons: Vec<Vec<Ring>>,
}

impl WardPolygon {
    pub fn new(id: impl Into<String>, polygons: Vec<Vec<Ring>>) -> Result<Self> {
        let id = id.into();
        if polygons.is_empty() {
            return Err(Error::Geometry(format!("ward {id} has no polygons")));
        }
        for rings in &polygons {
            if rings.is_empty() {
                return Err(Error::Geometry(format!("ward {id} has a polygon without rings")));
            }
            for ring in rings {
                if ring.len() < 3 || ring.iter().flatten().any(|c| !c.is_finite()) {
                    return Err(Error::Geometry(format!("ward {id} has a malformed ring")));
                }
            }
        }
        Ok(Self { id, polygons })
    }

    /// Axis-aligned square with lower-left corner `(x, y)`.
    pub fn square(id: impl Into<String>, x: f64, y: f64, side: f64) -> Self {
        let ring = vec![[x, y], [x + side, y], [x + side, y + side], [x, y + side], [x, y]];
        Self { id: id.into(), polygons: vec![vec![ring]] }
    }

    fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.polygons.iter().flatten().flat_map(|ring| {
            let n = ring.len();
            (0..n).map(move |k| (ring[k], ring[(k + 1) % n]))
        })
    }

    fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in self.polygons.iter().flatten().flatten() {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        b
    }

    fn contains(&self, p: Point) -> bool {
        self.polygons.iter().any(|rings| {
            in_ring(p, &rings[0]) && !rings[1..].iter().any(|hole| in_ring(p, hole))
        })
    }
}

fn in_ring(p: Point, ring: &[Point]) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (x, y) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    (x * x + y * y).sqrt()
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segment_distance(a: (Point, Point), b: (Point, Point)) -> f64 {
    let (d1, d2) = (cross(b.0, b.1, a.0), cross(b.0, b.1, a.1));
    let (d3, d4) = (cross(a.0, a.1, b.0), cross(a.0, a.1, b.1));
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        return 0.0;
    }
    point_segment_distance(a.0, b.0, b.1)
        .min(point_segment_distance(a.1, b.0, b.1))
        .min(point_segment_distance(b.0, a.0, a.1))
        .min(point_segment_distance(b.1, a.0, a.1))
}

fn adjacent(a: &WardPolygon, b: &WardPolygon, eps: f64) -> bool {
    let (ba, bb) = (a.bbox(), b.bbox());
    if ba[0] > bb[2] + eps || bb[0] > ba[2] + eps || ba[1] > bb[3] + eps || bb[1] > ba[3] + eps {
        return false;
    }
    let segs_b: Vec<_> = b.segments().collect();
    if a.segments().any(|sa| segs_b.iter().any(|&sb| segment_distance(sa, sb) <= eps)) {
        return true;
    }
    // one ward entirely inside the other
    let first = |w: &WardPolygon| w.polygons[0][0][0];
    a.contains(first(b)) || b.contains(first(a))
}

/// Graph with an edge between wards whose boundaries come within `eps`
/// of each other or whose areas overlap.
pub fn adjacency_from_polygons(polygons: &[WardPolygon], eps: f64) -> Result<WardGraph> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter("tolerance must be nonnegative".into()));
    }
    let ids: Vec<String> = polygons.iter().map(|p| p.id.clone()).collect();
    let mut edges = Vec::new();
    for i in 0..polygons.len() {
        for j in i + 1..polygons.len() {
            if adjacent(&polygons[i], &polygons[j], eps) {
                edges.push((i, j));
            }
        }
    }
    WardGraph::new(ids, &edges)
}

fn parse_point(v: &Value) -> Result<Point> {
    match v.as_array().map(Vec::as_slice) {
        Some([x, y, ..]) => match (x.as_f64(), y.as_f64()) {
            (Some(x), Some(y)) => Ok([x, y]),
            _ => Err(Error::Geometry("non-numeric coordinate".into())),
        },
        _ => Err(Error::Geometry("coordinate needs two numbers".into())),
    }
}

fn parse_polygon(v: &Value) -> Result<Vec<Ring>> {
    v.as_array()
        .ok_or_else(|| Error::Geometry("polygon must be an array of rings".into()))?
        .iter()
        .map(|ring| {
            ring.as_array()
                .ok_or_else(|| Error::Geometry("ring must be an array of points".into()))?
                .iter()
                .map(parse_point)
                .collect()
        })
        .collect()
}

fn feature_id(feature: &Value, id_property: &str) -> Result<String> {
    match feature.get("properties").and_then(|p| p.get(id_property)) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(Error::Geometry(format!("feature without a '{id_property}' property"))),
    }
}

fn features(collection: &Value) -> Result<&Vec<Value>> {
    if collection.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::Geometry("expected a GeoJSON FeatureCollection".into()));
    }
    collection
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Geometry("FeatureCollection without features".into()))
}

/// Reads Polygon and MultiPolygon features keyed by `id_property`.
pub fn read_polygons(collection: &Value, id_property: &str) -> Result<Vec<WardPolygon>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for f in features(collection)? {
        let id = feature_id(f, id_property)?;
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateWard(id));
        }
        let geometry = f
            .get("geometry")
            .ok_or_else(|| Error::Geometry(format!("ward {id} has no geometry")))?;
        let coords = geometry
            .get("coordinates")
            .ok_or_else(|| Error::Geometry(format!("ward {id} has no coordinates")))?;
        let polygons = match geometry.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![parse_polygon(coords)?],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| Error::Geometry(format!("ward {id}: bad MultiPolygon")))?
                .iter()
                .map(parse_polygon)
                .collect::<Result<_>>()?,
            other => {
                return Err(Error::Geometry(format!(
                    "ward {id}: unsupported geometry {}",
                    other.unwrap_or("null")
                )))
            }
        };
        out.push(WardPolygon::new(id, polygons)?);
    }
    Ok(out)
}

/// GeoJSON for a set of polygons, ids stored under `id_property`.
pub fn polygons_to_geojson(polygons: &[WardPolygon], id_property: &str) -> Value {
    let features: Vec<Value> = polygons
        .iter()
        .map(|p| {
            let mut props = Map::new();
            props.insert(id_property.to_string(), Value::String(p.id.clone()));
            json!({
                "type": "Feature",
                "properties": props,
                "geometry": {"type": "MultiPolygon", "coordinates": p.polygons},
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

/// Per-ward posterior summaries as a FeatureCollection.
///
/// When `base` is given its features are copied, matched on `id_property`,
/// and gain `median`, `q05`, `q95` and `variance` properties. Otherwise one
/// feature with a null geometry is written per ward.
pub fn results_geojson(
    base: Option<&Value>,
    id_property: &str,
    ward_ids: &[String],
    summaries: &[ScalarSummary],
) -> Result<Value> {
    let lookup: std::collections::HashMap<&str, &ScalarSummary> =
        ward_ids.iter().map(String::as_str).zip(summaries).collect();
    let add = |props: &mut Map<String, Value>, s: &ScalarSummary| {
        props.insert("median".into(), json!(s.median));
        props.insert("q05".into(), json!(s.q05));
        props.insert("q95".into(), json!(s.q95));
        props.insert("variance".into(), json!(s.variance));
    };
    let features: Vec<Value> = match base {
        Some(collection) => features(collection)?
            .iter()
            .map(|f| {
                let id = feature_id(f, id_property)?;
                let mut f = f.clone();
                if let Some(s) = lookup.get(id.as_str()) {
                    let props = f
                        .get_mut("properties")
                        .and_then(Value::as_object_mut)
                        .expect("feature_id found a properties object");
                    add(props, s);
                }
                Ok(f)
            })
            .collect::<Result<_>>()?,
        None => ward_ids
            .iter()
            .zip(summaries)
            .map(|(id, s)| {
                let mut props = Map::new();
                props.insert(id_property.to_string(), json!(id));
                add(&mut props, s);
                json!({"type": "Feature", "properties": props, "geometry": null})
            })
            .collect(),
    };
    Ok(json!({"type": "FeatureCollection", "features": features}))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_fixtures() {
        let disjoint = [WardPolygon::square("a", 0.0, 0.0, 1.0), WardPolygon::square("b", 3.0, 0.0, 1.0)];
        assert_eq!(adjacency_from_polygons(&disjoint, DEFAULT_TOLERANCE).unwrap().edge_count(), 0);
        let shared = [WardPolygon::square("a", 0.0, 0.0, 1.0), WardPolygon::square("b", 1.0, 0.0, 1.0)];
        assert_eq!(adjacency_from_polygons(&shared, DEFAULT_TOLERANCE).unwrap().edges(), vec![(0, 1)]);
        let row: Vec<_> = (0..3).map(|k| WardPolygon::square(format!("w{k}"), k as f64, 0.0, 1.0)).collect();
        assert_eq!(adjacency_from_polygons(&row, DEFAULT_TOLERANCE).unwrap().edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn sliver_gap_needs_tolerance() {
        let gap = [WardPolygon::square("a", 0.0, 0.0, 1.0), WardPolygon::square("b", 1.001, 0.0, 1.0)];
        assert_eq!(adjacency_from_polygons(&gap, DEFAULT_TOLERANCE).unwrap().edge_count(), 0);
        assert_eq!(adjacency_from_polygons(&gap, 0.01).unwrap().edge_count(), 1);
    }

    #[test]
    fn nested_polygons_overlap() {
        let nested = [WardPolygon::square("a", 0.0, 0.0, 10.0), WardPolygon::square("b", 4.0, 4.0, 1.0)];
        assert_eq!(adjacency_from_polygons(&nested, 0.0).unwrap().edge_count(), 1);
    }

    #[test]
    fn geojson_round_trip_and_errors() {
        let polys: Vec<_> = (0..3).map(|k| WardPolygon::square(format!("w{k}"), k as f64, 0.0, 1.0)).collect();
        let gj = polygons_to_geojson(&polys, "code");
        assert_eq!(read_polygons(&gj, "code").unwrap(), polys);
        assert!(read_polygons(&gj, "name").is_err());
        let single = json!({"type": "FeatureCollection", "features": [
            {"type": "Feature", "properties": {"id": 7}, "geometry": {"type": "Polygon", "coordinates": [[[0,0],[1,0],[1,1],[0,0]]]}},
            {"type": "Feature", "properties": {"id": 7}, "geometry": {"type": "Polygon", "coordinates": [[[0,0],[1,0],[1,1],[0,0]]]}}
        ]});
        assert!(matches!(read_polygons(&single, "id"), Err(Error::DuplicateWard(_))));
        let bad = json!({"type": "FeatureCollection", "features": [
            {"type": "Feature", "properties": {"id": "x"}, "geometry": {"type": "Point", "coordinates": [0, 0]}}
        ]});
        assert!(read_polygons(&bad, "id").is_err());
    }

    #[test]
    fn results_properties() {
        let s = ScalarSummary { mean: 0.0, median: 1.0, q05: -1.0, q95: 2.0, variance: 0.5 };
        let ids = vec!["w0".to_string()];
        let out = results_geojson(None, "ward", &ids, &[s]).unwrap();
        let props = &out["features"][0]["properties"];
        for key in ["median", "q05", "q95", "variance"] {
            assert!(props.get(key).is_some());
        }
        let base = polygons_to_geojson(&[WardPolygon::square("w0", 0.0, 0.0, 1.0)], "ward");
        let out = results_geojson(Some(&base), "ward", &ids, &[s]).unwrap();
        assert_eq!(out["features"][0]["properties"]["median"], json!(1.0));
        assert_eq!(out["features"][0]["geometry"]["type"], json!("MultiPolygon"));
    }
}
