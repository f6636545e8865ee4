//! Geometry kernels shared by every stage.
//!
//! Distances are great-circle on a sphere of radius [`EARTH_RADIUS_M`].
//! Areas are planar, computed after an equirectangular projection around a
//! per-point-set origin, which is accurate at the scale of a day's travel.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::InputError;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// International mile.
pub const METERS_PER_MILE: f64 = 1_609.344;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    /// Arithmetic mean of coordinates. Adequate for sub-km clusters.
    pub fn centroid(points: &[GeoPoint]) -> Option<GeoPoint> {
        if points.is_empty() {
            return None;
        }
        let n = points.len() as f64;
        let (lat, lon) = points
            .iter()
            .fold((0.0, 0.0), |(a, b), p| (a + p.lat, b + p.lon));
        Some(GeoPoint::new(lat / n, lon / n))
    }
}

/// Point in a local tangent plane, in kilometers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &PlanarPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi * 0.5).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda * 0.5).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Point reached from `p` along the great circle with initial `bearing_rad`
/// (clockwise from north) after `dist_m` meters.
pub fn destination(p: GeoPoint, bearing_rad: f64, dist_m: f64) -> GeoPoint {
    let d = dist_m / EARTH_RADIUS_M;
    let phi1 = p.lat.to_radians();
    let lambda1 = p.lon.to_radians();
    let phi2 = (phi1.sin() * d.cos() + phi1.cos() * d.sin() * bearing_rad.cos()).asin();
    let lambda2 = lambda1 + (bearing_rad.sin() * d.sin() * phi1.cos()).atan2(d.cos() - phi1.sin() * phi2.sin());
    GeoPoint::new(phi2.to_degrees(), (lambda2.to_degrees() + 540.0) % 360.0 - 180.0)
}

/// Small local displacement in meters, north and east.
pub fn offset_m(p: GeoPoint, north_m: f64, east_m: f64) -> GeoPoint {
    GeoPoint::new(
        p.lat + (north_m / EARTH_RADIUS_M).to_degrees(),
        p.lon + (east_m / (EARTH_RADIUS_M * p.lat.to_radians().cos())).to_degrees(),
    )
}

/// Equirectangular projection around `origin`, output in km.
pub fn project_local(points: &[GeoPoint], origin: GeoPoint) -> Vec<PlanarPoint> {
    let r_km = EARTH_RADIUS_M / 1000.0;
    let cos0 = origin.lat.to_radians().cos();
    points
        .iter()
        .map(|p| {
            PlanarPoint::new(
                r_km * (p.lon - origin.lon).to_radians() * cos0,
                r_km * (p.lat - origin.lat).to_radians(),
            )
        })
        .collect()
}

fn cross(o: &PlanarPoint, a: &PlanarPoint, b: &PlanarPoint) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn lex_cmp(a: &PlanarPoint, b: &PlanarPoint) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y))
}

/// Counter-clockwise convex hull (Andrew's monotone chain).
///
/// Collinear boundary points are dropped. Identical inputs collapse to a
/// single vertex and collinear inputs to their two extremes.
pub fn convex_hull(points: &[PlanarPoint]) -> Vec<PlanarPoint> {
    let mut pts = points.to_vec();
    pts.sort_by(lex_cmp);
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if pts.len() <= 2 {
        return pts;
    }

    let mut hull: Vec<PlanarPoint> = Vec::with_capacity(pts.len() + 1);
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Shoelace area (km²) and ring perimeter (km) of a hull.
///
/// A two-vertex hull is walked out and back, so its perimeter is twice the
/// segment length.
pub fn hull_area_perimeter(hull: &[PlanarPoint]) -> (f64, f64) {
    match hull.len() {
        0 | 1 => (0.0, 0.0),
        2 => (0.0, 2.0 * hull[0].dist(&hull[1])),
        n => {
            let mut twice_area = 0.0;
            let mut perimeter = 0.0;
            for i in 0..n {
                let a = &hull[i];
                let b = &hull[(i + 1) % n];
                twice_area += a.x * b.y - b.x * a.y;
                perimeter += a.dist(b);
            }
            (twice_area.abs() * 0.5, perimeter)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderType {
    None,
    Voluntary,
    Mandatory,
}

impl OrderType {
    pub const ALL: [OrderType; 3] = [OrderType::None, OrderType::Voluntary, OrderType::Mandatory];

    /// Numeric encoding used by the choice model (0/1/2).
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OrderType::None => "none",
            OrderType::Voluntary => "voluntary",
            OrderType::Mandatory => "mandatory",
        }
    }
}

impl fmt::Display for OrderType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OrderType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "none" | "0" => Ok(OrderType::None),
            "voluntary" | "1" => Ok(OrderType::Voluntary),
            "mandatory" | "2" => Ok(OrderType::Mandatory),
            other => Err(format!("unknown order type {other:?}")),
        }
    }
}

/// An evacuation zone: one or more closed rings tested with the even-odd rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ZonePolygon {
    pub zone_id: u32,
    pub order_type: OrderType,
    pub order_date: Option<NaiveDate>,
    pub county_id: Option<String>,
    pub rings: Vec<Vec<GeoPoint>>,
}

impl ZonePolygon {
    pub fn contains(&self, p: GeoPoint) -> bool {
        point_in_rings(p, &self.rings)
    }
}

/// Closes a ring in place if its first and last vertices differ.
pub fn close_ring(ring: &mut Vec<GeoPoint>) {
    if let (Some(first), Some(last)) = (ring.first().copied(), ring.last().copied()) {
        if first != last {
            ring.push(first);
        }
    }
}

fn on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool {
    let (px, py, ax, ay, bx, by) = (p.lon, p.lat, a.lon, a.lat, b.lon, b.lat);
    let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
    let scale = (bx - ax).abs().max((by - ay).abs()).max(1e-300);
    if cross.abs() > 1e-12 * scale {
        return false;
    }
    px >= ax.min(bx) - 1e-12 && px <= ax.max(bx) + 1e-12 && py >= ay.min(by) - 1e-12 && py <= ay.max(by) + 1e-12
}

/// Even-odd ray casting over all rings in lon/lat space. Points on any edge
/// count as inside.
pub fn point_in_rings(p: GeoPoint, rings: &[Vec<GeoPoint>]) -> bool {
    let mut inside = false;
    for ring in rings {
        for w in ring.windows(2) {
            let (a, b) = (w[0], w[1]);
            if on_segment(p, a, b) {
                return true;
            }
            if (a.lat > p.lat) != (b.lat > p.lat) {
                let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
                if p.lon < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

pub fn point_in_polygon(p: GeoPoint, poly: &ZonePolygon) -> bool {
    poly.contains(p)
}

/// Elevation raster in ESRI ASCII layout: `origin` is the lower-left corner,
/// the first stored row is the northernmost.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationGrid {
    pub origin: GeoPoint,
    pub cell_size: f64,
    pub ncols: usize,
    pub nrows: usize,
    pub nodata: f64,
    pub values: Vec<f64>,
}

impl ElevationGrid {
    pub fn new(
        origin: GeoPoint,
        cell_size: f64,
        ncols: usize,
        nrows: usize,
        nodata: f64,
        values: Vec<f64>,
    ) -> Result<Self, InputError> {
        if !(cell_size > 0.0) {
            return Err(InputError::invalid("elevation grid", "cell size must be > 0"));
        }
        if values.len() != ncols * nrows {
            return Err(InputError::invalid(
                "elevation grid",
                format!("expected {} values, found {}", ncols * nrows, values.len()),
            ));
        }
        Ok(Self { origin, cell_size, ncols, nrows, nodata, values })
    }

    /// Value at (column, row counted from the south edge).
    pub fn cell(&self, col: usize, row_from_south: usize) -> Option<f64> {
        if col >= self.ncols || row_from_south >= self.nrows {
            return None;
        }
        let stored_row = self.nrows - 1 - row_from_south;
        let v = self.values[stored_row * self.ncols + col];
        (v != self.nodata && v.is_finite()).then_some(v)
    }

    pub fn cell_center(&self, col: usize, row_from_south: usize) -> GeoPoint {
        GeoPoint::new(
            self.origin.lat + (row_from_south as f64 + 0.5) * self.cell_size,
            self.origin.lon + (col as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn load(path: &Path) -> Result<Self, InputError> {
        let text = std::fs::read_to_string(path).map_err(|e| InputError::io(path, e))?;
        text.parse()
    }

    pub fn to_ascii(&self) -> String {
        let mut out = format!(
            "ncols {}\nnrows {}\nxllcorner {}\nyllcorner {}\ncellsize {}\nnodata_value {}\n",
            self.ncols, self.nrows, self.origin.lon, self.origin.lat, self.cell_size, self.nodata
        );
        for row in self.values.chunks(self.ncols.max(1)) {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

impl FromStr for ElevationGrid {
    type Err = InputError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let bad = |msg: String| InputError::invalid("elevation grid", msg);
        let mut tokens = text.split_whitespace().peekable();
        let mut header = std::collections::HashMap::new();
        while let Some(tok) = tokens.peek() {
            if tok.parse::<f64>().is_ok() {
                break;
            }
            let key = tokens.next().unwrap().to_ascii_lowercase();
            let val = tokens
                .next()
                .ok_or_else(|| bad(format!("missing value for {key}")))?
                .parse::<f64>()
                .map_err(|e| bad(format!("{key}: {e}")))?;
            header.insert(key, val);
        }
        let get = |k: &str| header.get(k).copied().ok_or_else(|| bad(format!("missing header {k}")));
        let ncols = get("ncols")? as usize;
        let nrows = get("nrows")? as usize;
        let origin = GeoPoint::new(get("yllcorner")?, get("xllcorner")?);
        let cell_size = get("cellsize")?;
        let nodata = header.get("nodata_value").copied().unwrap_or(-9999.0);
        let values = tokens
            .map(|t| t.parse::<f64>().map_err(|e| bad(format!("value {t:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        ElevationGrid::new(origin, cell_size, ncols, nrows, nodata, values)
    }
}

/// Nearest-cell lookup; `None` outside the grid or on a no-data cell.
pub fn elevation_at(p: GeoPoint, grid: &ElevationGrid) -> Option<f64> {
    let col = ((p.lon - grid.origin.lon) / grid.cell_size).floor();
    let row = ((p.lat - grid.origin.lat) / grid.cell_size).floor();
    if col < 0.0 || row < 0.0 || !col.is_finite() || !row.is_finite() {
        return None;
    }
    grid.cell(col as usize, row as usize)
}

/// A GeoJSON feature reduced to its rings and string-valued properties.
#[derive(Debug, Clone)]
pub struct PolygonFeature {
    pub rings: Vec<Vec<GeoPoint>>,
    pub properties: serde_json::Map<String, Value>,
}

impl PolygonFeature {
    pub fn prop_str(&self, key: &str) -> Option<String> {
        match self.properties.get(key)? {
            Value::Null => None,
            Value::String(s) if s.trim().is_empty() => None,
            Value::String(s) => Some(s.clone()),
            other => Some(other.to_string()),
        }
    }
}

fn parse_ring(v: &Value) -> Result<Vec<GeoPoint>, String> {
    let coords = v.as_array().ok_or("ring is not an array")?;
    let mut ring = coords
        .iter()
        .map(|c| {
            let xy = c.as_array().ok_or("coordinate is not an array")?;
            let lon = xy.first().and_then(Value::as_f64).ok_or("bad longitude")?;
            let lat = xy.get(1).and_then(Value::as_f64).ok_or("bad latitude")?;
            Ok(GeoPoint::new(lat, lon))
        })
        .collect::<Result<Vec<_>, &str>>()?;
    close_ring(&mut ring);
    Ok(ring)
}

/// Reads Polygon and MultiPolygon features from a GeoJSON FeatureCollection.
pub fn parse_polygon_features(text: &str, what: &'static str) -> Result<Vec<PolygonFeature>, InputError> {
    let bad = |msg: String| InputError::invalid(what, msg);
    let root: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing features array".into()))?;
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let geom = f.get("geometry").ok_or_else(|| bad(format!("feature {i}: no geometry")))?;
        let kind = geom.get("type").and_then(Value::as_str).unwrap_or_default();
        let coords = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| bad(format!("feature {i}: no coordinates")))?;
        let rings = match kind {
            "Polygon" => coords.iter().map(parse_ring).collect::<Result<Vec<_>, _>>(),
            "MultiPolygon" => coords
                .iter()
                .flat_map(|poly| poly.as_array().into_iter().flatten())
                .map(parse_ring)
                .collect(),
            other => Err(format!("unsupported geometry {other:?}")),
        }
        .map_err(|e| bad(format!("feature {i}: {e}")))?;
        let properties = f
            .get("properties")
            .and_then(Value::as_object)
            .cloned()
            .unwrap_or_default();
        out.push(PolygonFeature { rings, properties });
    }
    Ok(out)
}

/// Loads zones; each feature needs `zone_id`, and may carry `order_type`,
/// `order_date` (YYYY-MM-DD) and `county_id`.
pub fn parse_zones(text: &str) -> Result<Vec<ZonePolygon>, InputError> {
    let bad = |msg: String| InputError::invalid("zones", msg);
    let mut zones = parse_polygon_features(text, "zones")?
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let zone_id = f
                .prop_str("zone_id")
                .ok_or_else(|| bad(format!("feature {i}: missing zone_id")))?
                .parse::<u32>()
                .map_err(|e| bad(format!("feature {i}: zone_id {e}")))?;
            let order_type = f
                .prop_str("order_type")
                .map(|s| s.parse::<OrderType>())
                .transpose()
                .map_err(|e| bad(format!("zone {zone_id}: {e}")))?
                .unwrap_or(OrderType::None);
            let order_date = f
                .prop_str("order_date")
                .map(|s| NaiveDate::parse_from_str(&s, "%Y-%m-%d"))
                .transpose()
                .map_err(|e| bad(format!("zone {zone_id}: order_date {e}")))?;
            if (order_type == OrderType::None) != order_date.is_none() {
                return Err(bad(format!(
                    "zone {zone_id}: order_date must be present exactly when an order is issued"
                )));
            }
            Ok(ZonePolygon {
                zone_id,
                order_type,
                order_date,
                county_id: f.prop_str("county_id"),
                rings: f.rings,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    zones.sort_by_key(|z| z.zone_id);
    Ok(zones)
}

pub fn load_zones(path: &Path) -> Result<Vec<ZonePolygon>, InputError> {
    let text = std::fs::read_to_string(path).map_err(|e| InputError::io(path, e))?;
    parse_zones(&text)
}
