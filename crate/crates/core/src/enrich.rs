//! Joins each home to its evacuation zone, elevation and census tract.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::InputError;
use crate::geo::{elevation_at, parse_polygon_features, point_in_rings, ElevationGrid, GeoPoint, OrderType, ZonePolygon};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneAssignment {
    pub zone_id: Option<u32>,
    pub county_id: Option<String>,
    pub order_type: OrderType,
    pub order_date: Option<NaiveDate>,
    /// More than one zone contained the point; the lowest zone id won.
    pub ambiguous: bool,
}

/// Zone containing `home`; on overlap or shared edges the lowest `zone_id`
/// wins. Homes in no zone get no order.
pub fn assign_zone(home: GeoPoint, zones: &[ZonePolygon]) -> ZoneAssignment {
    let mut hits = zones.iter().filter(|z| z.contains(home));
    let Some(first) = hits.by_ref().min_by_key(|z| z.zone_id) else {
        return ZoneAssignment { zone_id: None, county_id: None, order_type: OrderType::None, order_date: None, ambiguous: false };
    };
    let ambiguous = zones.iter().filter(|z| z.contains(home)).count() > 1;
    ZoneAssignment {
        zone_id: Some(first.zone_id),
        county_id: first.county_id.clone(),
        order_type: first.order_type,
        order_date: first.order_date,
        ambiguous,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ElevationBin {
    /// Below 10 m.
    #[serde(rename = "lt10")]
    Low,
    /// 10 m to 50 m, both ends included.
    #[serde(rename = "10to50")]
    Mid,
    /// Above 50 m.
    #[serde(rename = "gt50")]
    High,
}

impl ElevationBin {
    pub const ALL: [ElevationBin; 3] = [ElevationBin::Low, ElevationBin::Mid, ElevationBin::High];

    pub fn of(elevation_m: f64) -> Self {
        if elevation_m < 10.0 {
            ElevationBin::Low
        } else if elevation_m <= 50.0 {
            ElevationBin::Mid
        } else {
            ElevationBin::High
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElevationBin::Low => "lt10",
            ElevationBin::Mid => "10to50",
            ElevationBin::High => "gt50",
        }
    }
}

impl fmt::Display for ElevationBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no elevation data at home location")]
pub struct NoData;

pub fn assign_elevation(home: GeoPoint, grid: &ElevationGrid) -> Result<(f64, ElevationBin), NoData> {
    let e = elevation_at(home, grid).ok_or(NoData)?;
    Ok((e, ElevationBin::of(e)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TractAttributes {
    pub median_age: f64,
    pub median_income: f64,
    /// Percent of households with at least one vehicle.
    pub vehicle_availability_pct: f64,
    /// Fraction in [0, 1].
    pub race_white_frac: f64,
}

/// One row of `tracts.csv`; blank cells are missing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TractRow {
    pub tract_id: String,
    pub median_age: Option<f64>,
    pub median_income: Option<f64>,
    pub vehicle_availability_pct: Option<f64>,
    pub race_white_frac: Option<f64>,
}

impl TractRow {
    pub fn complete(&self) -> Option<TractAttributes> {
        Some(TractAttributes {
            median_age: self.median_age?,
            median_income: self.median_income?,
            vehicle_availability_pct: self.vehicle_availability_pct?,
            race_white_frac: self.race_white_frac?,
        })
    }

    fn validate(&self) -> Result<(), String> {
        let pct = |v: Option<f64>| v.is_none_or(|v| (0.0..=100.0).contains(&v));
        if !pct(self.vehicle_availability_pct) {
            return Err(format!("tract {}: vehicle availability outside [0,100]", self.tract_id));
        }
        if !self.race_white_frac.is_none_or(|v| (0.0..=1.0).contains(&v)) {
            return Err(format!("tract {}: white fraction outside [0,1]", self.tract_id));
        }
        if !self.median_income.is_none_or(|v| v > 0.0) {
            return Err(format!("tract {}: median income must be positive", self.tract_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Error)]
pub enum TractError {
    #[error("home is not in any known tract")]
    MissingTract,
    #[error("tract has missing attributes")]
    IncompleteTract,
}

pub struct TractPolygon {
    pub tract_id: String,
    pub rings: Vec<Vec<GeoPoint>>,
}

/// How homes find their tract: polygons, or a device → tract sidecar.
pub enum TractLocator {
    Polygons(Vec<TractPolygon>),
    Sidecar(HashMap<String, String>),
}

impl TractLocator {
    pub fn locate(&self, device_id: &str, home: GeoPoint) -> Option<String> {
        match self {
            TractLocator::Polygons(polys) => polys
                .iter()
                .filter(|t| point_in_rings(home, &t.rings))
                .map(|t| t.tract_id.clone())
                .min(),
            TractLocator::Sidecar(map) => map.get(device_id).cloned(),
        }
    }
}

pub struct TractTable {
    pub rows: HashMap<String, TractRow>,
    pub locator: TractLocator,
}

impl TractTable {
    pub fn read_rows<R: std::io::Read>(reader: R) -> Result<HashMap<String, TractRow>, InputError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = HashMap::new();
        for rec in rdr.deserialize::<TractRow>() {
            let row = rec.map_err(|e| InputError::invalid("tracts", e.to_string()))?;
            row.validate().map_err(|e| InputError::invalid("tracts", e))?;
            rows.insert(row.tract_id.clone(), row);
        }
        Ok(rows)
    }

    pub fn load(tracts_csv: &Path, polygons: Option<&Path>, sidecar: Option<&Path>) -> Result<Self, InputError> {
        let file = std::fs::File::open(tracts_csv).map_err(|e| InputError::io(tracts_csv, e))?;
        let rows = Self::read_rows(file)?;
        let locator = match (polygons, sidecar) {
            (Some(p), _) => {
                let text = std::fs::read_to_string(p).map_err(|e| InputError::io(p, e))?;
                TractLocator::Polygons(parse_tract_polygons(&text)?)
            }
            (None, Some(s)) => {
                let file = std::fs::File::open(s).map_err(|e| InputError::io(s, e))?;
                TractLocator::Sidecar(read_sidecar(file)?)
            }
            (None, None) => {
                return Err(InputError::invalid("tracts", "need tract polygons or a home→tract sidecar"));
            }
        };
        Ok(Self { rows, locator })
    }

    /// Tract id (when located) and its attributes or why they are unusable.
    pub fn join(&self, device_id: &str, home: GeoPoint) -> (Option<String>, Result<TractAttributes, TractError>) {
        let Some(id) = self.locator.locate(device_id, home) else {
            return (None, Err(TractError::MissingTract));
        };
        let attrs = match self.rows.get(&id) {
            None => Err(TractError::MissingTract),
            Some(row) => row.complete().ok_or(TractError::IncompleteTract),
        };
        (Some(id), attrs)
    }
}

pub fn join_tract(device_id: &str, home: GeoPoint, table: &TractTable) -> Result<TractAttributes, TractError> {
    table.join(device_id, home).1
}

pub fn parse_tract_polygons(text: &str) -> Result<Vec<TractPolygon>, InputError> {
    parse_polygon_features(text, "tract polygons")?
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let tract_id = f
                .prop_str("tract_id")
                .ok_or_else(|| InputError::invalid("tract polygons", format!("feature {i}: missing tract_id")))?;
            Ok(TractPolygon { tract_id, rings: f.rings })
        })
        .collect()
}

#[derive(Deserialize)]
struct SidecarRow {
    device_id: String,
    tract_id: String,
}

pub fn read_sidecar<R: std::io::Read>(reader: R) -> Result<HashMap<String, String>, InputError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize::<SidecarRow>()
        .map(|r| r.map(|r| (r.device_id, r.tract_id)).map_err(|e| InputError::invalid("tract sidecar", e.to_string())))
        .collect()
}

/// Everything known about a device's residence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceContext {
    pub device_id: String,
    pub county_id: Option<String>,
    pub zone_id: Option<u32>,
    pub order_type: OrderType,
    pub order_date: Option<NaiveDate>,
    pub elevation_m: Option<f64>,
    pub elevation_bin: Option<ElevationBin>,
    pub tract_id: Option<String>,
    pub median_age: Option<f64>,
    pub median_income: Option<f64>,
    pub vehicle_availability_pct: Option<f64>,
    pub race_white_frac: Option<f64>,
}

impl DeviceContext {
    pub fn tract(&self) -> Option<TractAttributes> {
        Some(TractAttributes {
            median_age: self.median_age?,
            median_income: self.median_income?,
            vehicle_availability_pct: self.vehicle_availability_pct?,
            race_white_frac: self.race_white_frac?,
        })
    }

    pub fn order_code(&self) -> u8 {
        self.order_type.code()
    }
}

/// Exclusion tallies for one enrich run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichStats {
    pub devices: u64,
    pub ambiguous_zone: u64,
    pub no_zone: u64,
    pub no_elevation: u64,
    pub missing_tract: u64,
    pub incomplete_tract: u64,
    /// Devices with zone, elevation and complete tract attributes.
    pub complete: u64,
}

impl std::ops::AddAssign for EnrichStats {
    fn add_assign(&mut self, o: Self) {
        self.devices += o.devices;
        self.ambiguous_zone += o.ambiguous_zone;
        self.no_zone += o.no_zone;
        self.no_elevation += o.no_elevation;
        self.missing_tract += o.missing_tract;
        self.incomplete_tract += o.incomplete_tract;
        self.complete += o.complete;
    }
}

pub struct ReferenceData {
    pub zones: Vec<ZonePolygon>,
    pub grid: ElevationGrid,
    pub tracts: TractTable,
}

pub fn enrich_device(device_id: &str, home: GeoPoint, refs: &ReferenceData, stats: &mut EnrichStats) -> DeviceContext {
    stats.devices += 1;
    let zone = assign_zone(home, &refs.zones);
    if zone.ambiguous {
        stats.ambiguous_zone += 1;
    }
    if zone.zone_id.is_none() {
        stats.no_zone += 1;
    }
    let elevation = assign_elevation(home, &refs.grid).ok();
    if elevation.is_none() {
        stats.no_elevation += 1;
    }
    let (tract_id, attrs) = refs.tracts.join(device_id, home);
    let row = tract_id.as_ref().and_then(|id| refs.tracts.rows.get(id));
    match attrs {
        Err(TractError::MissingTract) => stats.missing_tract += 1,
        Err(TractError::IncompleteTract) => stats.incomplete_tract += 1,
        Ok(_) if elevation.is_some() => stats.complete += 1,
        Ok(_) => {}
    }
    DeviceContext {
        device_id: device_id.to_string(),
        county_id: zone.county_id,
        zone_id: zone.zone_id,
        order_type: zone.order_type,
        order_date: zone.order_date,
        elevation_m: elevation.map(|e| e.0),
        elevation_bin: elevation.map(|e| e.1),
        tract_id,
        median_age: row.and_then(|r| r.median_age),
        median_income: row.and_then(|r| r.median_income),
        vehicle_availability_pct: row.and_then(|r| r.vehicle_availability_pct),
        race_white_frac: row.and_then(|r| r.race_white_frac),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::close_ring;

    fn rect(zone_id: u32, order: OrderType, date: Option<NaiveDate>, lat: (f64, f64), lon: (f64, f64)) -> ZonePolygon {
        let mut ring = vec![
            GeoPoint::new(lat.0, lon.0),
            GeoPoint::new(lat.0, lon.1),
            GeoPoint::new(lat.1, lon.1),
            GeoPoint::new(lat.1, lon.0),
        ];
        close_ring(&mut ring);
        ZonePolygon { zone_id, order_type: order, order_date: date, county_id: Some(format!("C{zone_id}")), rings: vec![ring] }
    }

    fn sept(d: u32) -> Option<NaiveDate> {
        NaiveDate::from_ymd_opt(2017, 9, d)
    }

    #[test]
    fn zone_assignment() {
        let zones = vec![
            rect(12, OrderType::Voluntary, sept(7), (0.0, 1.0), (1.0, 2.0)),
            rect(7, OrderType::Mandatory, sept(8), (0.0, 1.0), (0.0, 1.0)),
        ];
        let inside = assign_zone(GeoPoint::new(0.5, 0.5), &zones);
        assert_eq!((inside.order_type, inside.order_date), (OrderType::Mandatory, sept(8)));
        assert!(!inside.ambiguous);
        let outside = assign_zone(GeoPoint::new(5.0, 5.0), &zones);
        assert_eq!((outside.order_type, outside.order_date, outside.zone_id), (OrderType::None, None, None));
        let edge = assign_zone(GeoPoint::new(0.5, 1.0), &zones);
        assert_eq!(edge.zone_id, Some(7));
        assert!(edge.ambiguous);
    }

    #[test]
    fn elevation_bins() {
        assert_eq!(ElevationBin::of(6.0), ElevationBin::Low);
        assert_eq!(ElevationBin::of(-1.0), ElevationBin::Low);
        assert_eq!(ElevationBin::of(9.999), ElevationBin::Low);
        assert_eq!(ElevationBin::of(10.0), ElevationBin::Mid);
        assert_eq!(ElevationBin::of(50.0), ElevationBin::Mid);
        assert_eq!(ElevationBin::of(50.001), ElevationBin::High);
        let g = ElevationGrid::new(GeoPoint::new(0.0, 0.0), 1.0, 1, 1, -9999.0, vec![6.0]).unwrap();
        assert_eq!(assign_elevation(GeoPoint::new(0.5, 0.5), &g), Ok((6.0, ElevationBin::Low)));
        assert_eq!(assign_elevation(GeoPoint::new(1.5, 0.5), &g), Err(NoData));
    }

    #[test]
    fn bins_are_total_and_ordered() {
        let mut prev = ElevationBin::Low;
        for i in -2000..2000 {
            let bin = ElevationBin::of(i as f64 * 0.05);
            assert!(bin >= prev);
            prev = bin;
        }
    }

    #[test]
    fn tract_join_by_polygon_and_sidecar() {
        let csv_text = "tract_id,median_age,median_income,vehicle_availability_pct,race_white_frac\n\
                        A,41.4,54279,96.1,0.83\n\
                        B,30,,90,0.5\n\
                        C,35,40000,92,0.7\n";
        let rows = TractTable::read_rows(csv_text.as_bytes()).unwrap();
        let polys = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"tract_id":"A"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}},
            {"type":"Feature","properties":{"tract_id":"B"},"geometry":{"type":"Polygon","coordinates":[[[1,0],[2,0],[2,1],[1,1],[1,0]]]}},
            {"type":"Feature","properties":{"tract_id":"C"},"geometry":{"type":"Polygon","coordinates":[[[2,0],[3,0],[3,1],[2,1],[2,0]]]}}]}"#;
        let table = TractTable { rows: rows.clone(), locator: TractLocator::Polygons(parse_tract_polygons(polys).unwrap()) };
        for (lon, expected) in [(0.5, "A"), (1.5, "B"), (2.5, "C")] {
            assert_eq!(table.join("d", GeoPoint::new(0.5, lon)).0.as_deref(), Some(expected));
        }
        let a = join_tract("d", GeoPoint::new(0.5, 0.5), &table).unwrap();
        assert_eq!(a.median_income, 54279.0);
        assert_eq!(join_tract("d", GeoPoint::new(0.5, 1.5), &table), Err(TractError::IncompleteTract));
        assert_eq!(join_tract("d", GeoPoint::new(5.0, 5.0), &table), Err(TractError::MissingTract));

        let sidecar = read_sidecar("device_id,tract_id\nx,C\n".as_bytes()).unwrap();
        let table = TractTable { rows, locator: TractLocator::Sidecar(sidecar) };
        assert_eq!(join_tract("x", GeoPoint::new(50.0, 50.0), &table).unwrap().median_age, 35.0);
        assert_eq!(join_tract("y", GeoPoint::new(0.5, 0.5), &table), Err(TractError::MissingTract));
    }

    #[test]
    fn tract_rows_validated() {
        let bad = "tract_id,median_age,median_income,vehicle_availability_pct,race_white_frac\nA,40,50000,120,0.5\n";
        assert!(TractTable::read_rows(bad.as_bytes()).is_err());
        let bad = "tract_id,median_age,median_income,vehicle_availability_pct,race_white_frac\nA,40,50000,90,1.5\n";
        assert!(TractTable::read_rows(bad.as_bytes()).is_err());
    }
}
