//! Synthetic sighting streams with planted ground truth.
//!
//! The study region is a lat/lon rectangle cut into ten longitude strips,
//! each an evacuation zone (four without orders, two voluntary, four
//! mandatory; neighboring strips pair into counties). Elevation rises
//! linearly from 0 m at the southern edge to 100 m at the northern edge, so
//! elevation bins are latitude bands. A 10×10 grid of census tracts covers
//! the region. Homes keep a margin from every zone, tract and bin boundary.
//!
//! Device counts per (order group × elevation bin) cell, evacuees per cell,
//! departure dates and shelter-distance bins are all allocated by exact
//! quotas (largest remainder) rather than sampled, so planted shares are
//! reproduced up to rounding. Everything else (sighting times, noise,
//! places, trips, outages) comes from a per-device ChaCha stream keyed by
//! (seed, device index).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::enrich::{ElevationBin, TractRow};
use crate::error::InputError;
use crate::geo::{destination, haversine_m, offset_m, ElevationGrid, GeoPoint, OrderType, METERS_PER_MILE};
use crate::ingest::{DateRange, SightingRecord, SECONDS_PER_DAY};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Input(#[from] InputError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |e| SynthError::Input(InputError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub devices: usize,
    pub tz_offset_s: i32,
    pub baseline_start: NaiveDate,
    pub baseline_days: u32,
    pub study_start: NaiveDate,
    pub study_days: u32,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
    /// Device shares for none / voluntary / mandatory.
    pub group_shares: Vec<f64>,
    /// Device shares for the <10 m / 10-50 m / >50 m bands.
    pub elevation_shares: Vec<f64>,
    /// Evacuation share per elevation bin, one list per order group.
    pub evac_share_none: Vec<f64>,
    pub evac_share_voluntary: Vec<f64>,
    pub evac_share_mandatory: Vec<f64>,
    /// Departure day is the last day at home before the spell.
    pub departure_dates: Vec<NaiveDate>,
    pub departure_weights: Vec<f64>,
    /// Reentry is departure plus a uniform number of days in this range;
    /// past the study month the evacuee is censored.
    pub duration_min_days: u32,
    pub duration_max_days: u32,
    pub shelter_bin_edges_mi: Vec<f64>,
    pub shelter_max_mi: f64,
    pub shelter_weights_none: Vec<f64>,
    pub shelter_weights_voluntary: Vec<f64>,
    pub shelter_weights_mandatory: Vec<f64>,
    /// Poisson sighting rates per hour, 19:00-07:00 and 07:00-19:00.
    pub night_rate_per_hour: f64,
    pub day_rate_per_hour: f64,
    pub gps_noise_m: f64,
    /// Non-home stops per ordinary day; a day with k > 0 stops has k + 1 trips.
    pub stops_min: u32,
    pub stops_max: u32,
    /// Probability that a whole day of sightings is lost.
    pub dropout_prob: f64,
    /// Share of devices that produce no sightings during the study month.
    pub silent_share: f64,
    /// Share of tracts whose median income is missing.
    pub missing_income_share: f64,
}

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).expect("valid date")
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            devices: 1_000,
            tz_offset_s: -14_400,
            baseline_start: d(2017, 8, 1),
            baseline_days: 31,
            study_start: d(2017, 9, 1),
            study_days: 30,
            window_start: d(2017, 9, 4),
            window_end: d(2017, 9, 12),
            min_lat: 27.0,
            max_lat: 28.0,
            min_lon: -82.0,
            max_lon: -81.0,
            group_shares: vec![0.55, 0.15, 0.30],
            elevation_shares: vec![0.3, 0.4, 0.3],
            evac_share_none: vec![0.3659, 0.33, 0.2843],
            evac_share_voluntary: vec![0.40, 0.33, 0.30],
            evac_share_mandatory: vec![0.62, 0.57, 0.55],
            departure_dates: (3..=11).map(|day| d(2017, 9, day)).collect(),
            departure_weights: vec![4.0, 6.28, 7.04, 10.0, 14.0, 24.0, 26.27, 6.28, 2.13],
            duration_min_days: 2,
            duration_max_days: 14,
            shelter_bin_edges_mi: vec![20.0, 40.0, 60.0, 80.0, 100.0],
            shelter_max_mi: 300.0,
            shelter_weights_none: vec![43.0, 10.0, 7.0, 5.0, 4.0, 31.0],
            shelter_weights_voluntary: vec![43.0, 11.0, 7.0, 5.0, 4.0, 30.0],
            shelter_weights_mandatory: vec![35.47, 12.0, 8.0, 6.0, 4.0, 34.53],
            night_rate_per_hour: 0.3,
            day_rate_per_hour: 0.4,
            gps_noise_m: 50.0,
            stops_min: 0,
            stops_max: 4,
            dropout_prob: 0.0,
            silent_share: 0.0,
            missing_income_share: 0.05,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(io(path))?)
    }

    pub fn baseline_month(&self) -> DateRange {
        DateRange::new(self.baseline_start, self.baseline_start + Duration::days(i64::from(self.baseline_days) - 1))
    }

    pub fn study_month(&self) -> DateRange {
        DateRange::new(self.study_start, self.study_start + Duration::days(i64::from(self.study_days) - 1))
    }

    pub fn window(&self) -> DateRange {
        DateRange::new(self.window_start, self.window_end)
    }

    fn evac_shares(&self, g: OrderType) -> &[f64] {
        match g {
            OrderType::None => &self.evac_share_none,
            OrderType::Voluntary => &self.evac_share_voluntary,
            OrderType::Mandatory => &self.evac_share_mandatory,
        }
    }

    fn shelter_weights(&self, g: OrderType) -> &[f64] {
        match g {
            OrderType::None => &self.shelter_weights_none,
            OrderType::Voluntary => &self.shelter_weights_voluntary,
            OrderType::Mandatory => &self.shelter_weights_mandatory,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        let weights = |w: &[f64], n: usize| w.len() == n && w.iter().all(|v| *v >= 0.0 && v.is_finite()) && w.iter().sum::<f64>() > 0.0;
        if self.devices == 0 {
            return bad("devices must be > 0");
        }
        if !(self.min_lat < self.max_lat && self.min_lon < self.max_lon) {
            return bad("region is empty");
        }
        if self.min_lat.abs() > 85.0 || self.max_lat.abs() > 85.0 || self.min_lon < -180.0 || self.max_lon > 180.0 {
            return bad("region outside valid coordinates");
        }
        if self.baseline_days == 0 || self.study_days < 2 {
            return bad("months too short");
        }
        if self.baseline_month().overlaps(&self.study_month()) {
            return bad("baseline and study months overlap");
        }
        if !self.study_month().contains_range(&self.window()) || self.window_start > self.window_end {
            return bad("window must lie inside the study month");
        }
        if !weights(&self.group_shares, 3) || !weights(&self.elevation_shares, 3) {
            return bad("group_shares and elevation_shares need three non-negative weights");
        }
        for g in OrderType::ALL {
            let s = self.evac_shares(g);
            if s.len() != 3 || !s.iter().all(|v| prob(*v)) {
                return bad("evacuation shares need three probabilities per group");
            }
            if !weights(self.shelter_weights(g), self.shelter_bin_edges_mi.len() + 1) {
                return bad("shelter weights need one non-negative weight per distance bin");
            }
        }
        if !weights(&self.departure_weights, self.departure_dates.len()) {
            return bad("departure_weights must match departure_dates");
        }
        let month = self.study_month();
        for dep in &self.departure_dates {
            let first_away = *dep + Duration::days(1);
            if !month.contains(*dep) || !self.window().contains(first_away) {
                return bad("each departure date must be in the study month with the next day inside the window");
            }
        }
        if self.duration_min_days < 2 || self.duration_min_days > self.duration_max_days {
            return bad("durations need 2 <= min <= max");
        }
        let e = &self.shelter_bin_edges_mi;
        if e.is_empty() || e[0] <= 4.0 || e.windows(2).any(|w| w[1] - w[0] <= 1.0) || self.shelter_max_mi <= e[e.len() - 1] + 1.0 {
            return bad("shelter bin edges must start above 4 mi and increase, with shelter_max_mi beyond the last");
        }
        if !(self.night_rate_per_hour > 0.0 && self.day_rate_per_hour >= 0.0 && self.gps_noise_m >= 0.0) {
            return bad("sighting rates and noise must be non-negative (night rate > 0)");
        }
        if self.stops_min > self.stops_max || self.stops_max > 4 {
            return bad("need stops_min <= stops_max <= 4");
        }
        if !prob(self.dropout_prob) || !prob(self.silent_share) || !prob(self.missing_income_share) {
            return bad("probabilities must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` by `weights`.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = total - out.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        out[i] += 1;
    }
    out
}

/// `counts[i]` copies of `i`, shuffled.
fn quota_list(counts: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = counts.iter().enumerate().flat_map(|(i, &n)| std::iter::repeat_n(i, n)).collect();
    v.shuffle(rng);
    v
}

pub const STRIPS: usize = 10;
const STRIP_ORDERS: [OrderType; STRIPS] = [
    OrderType::None,
    OrderType::None,
    OrderType::None,
    OrderType::None,
    OrderType::Voluntary,
    OrderType::Voluntary,
    OrderType::Mandatory,
    OrderType::Mandatory,
    OrderType::Mandatory,
    OrderType::Mandatory,
];
/// Order issue day within the study month (1-based), per strip.
const STRIP_ORDER_DAY: [u32; STRIPS] = [0, 0, 0, 0, 7, 8, 6, 7, 8, 9];
const TRACTS_PER_SIDE: usize = 10;
const GRID_ROWS: usize = 200;
/// Bin edges as fractions of the region's latitude span (elevation 10 m and 50 m).
const BIN_EDGES: [f64; 2] = [0.1, 0.5];
/// Homes stay this far (fraction of span) from strip, tract and bin lines.
const MARGIN: f64 = 0.0075;

/// Reference layers for a scenario.
#[derive(Debug, Clone)]
pub struct Geography {
    pub zones_geojson: serde_json::Value,
    pub tracts_geojson: serde_json::Value,
    pub tracts: Vec<TractRow>,
    pub grid: ElevationGrid,
}

fn rect_ring(lat0: f64, lat1: f64, lon0: f64, lon1: f64) -> serde_json::Value {
    json!([[[lon0, lat0], [lon1, lat0], [lon1, lat1], [lon0, lat1], [lon0, lat0]]])
}

impl ScenarioConfig {
    fn lat_at(&self, frac: f64) -> f64 {
        self.min_lat + frac * (self.max_lat - self.min_lat)
    }

    fn lon_at(&self, frac: f64) -> f64 {
        self.min_lon + frac * (self.max_lon - self.min_lon)
    }

    fn strip_order_date(&self, strip: usize) -> Option<NaiveDate> {
        (STRIP_ORDERS[strip] != OrderType::None).then(|| self.study_start + Duration::days(i64::from(STRIP_ORDER_DAY[strip]) - 1))
    }

    pub fn geography(&self) -> Geography {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX);

        let zones: Vec<serde_json::Value> = (0..STRIPS)
            .map(|s| {
                let lon0 = self.lon_at(s as f64 / STRIPS as f64);
                let lon1 = self.lon_at((s + 1) as f64 / STRIPS as f64);
                json!({
                    "type": "Feature",
                    "properties": {
                        "zone_id": s + 1,
                        "order_type": STRIP_ORDERS[s].as_str(),
                        "order_date": self.strip_order_date(s).map(|d| d.to_string()),
                        "county_id": format!("county_{:02}", s / 2 + 1),
                    },
                    "geometry": {"type": "Polygon", "coordinates": rect_ring(self.min_lat, self.max_lat, lon0, lon1)},
                })
            })
            .collect();

        let mut tract_features = Vec::new();
        let mut tracts = Vec::new();
        let n_tracts = TRACTS_PER_SIDE * TRACTS_PER_SIDE;
        let missing = apportion(n_tracts, &[self.missing_income_share, 1.0 - self.missing_income_share])[0];
        let mut ids: Vec<usize> = (0..n_tracts).collect();
        ids.shuffle(&mut rng);
        let missing_ids = &ids[..missing];
        for r in 0..TRACTS_PER_SIDE {
            for c in 0..TRACTS_PER_SIDE {
                let idx = r * TRACTS_PER_SIDE + c;
                let id = tract_id(r, c);
                let lat0 = self.lat_at(r as f64 / TRACTS_PER_SIDE as f64);
                let lat1 = self.lat_at((r + 1) as f64 / TRACTS_PER_SIDE as f64);
                let lon0 = self.lon_at(c as f64 / TRACTS_PER_SIDE as f64);
                let lon1 = self.lon_at((c + 1) as f64 / TRACTS_PER_SIDE as f64);
                tract_features.push(json!({
                    "type": "Feature",
                    "properties": {"tract_id": id},
                    "geometry": {"type": "Polygon", "coordinates": rect_ring(lat0, lat1, lon0, lon1)},
                }));
                let round = |v: f64, k: f64| (v * k).round() / k;
                tracts.push(TractRow {
                    tract_id: id,
                    median_age: Some(round(rng.random_range(30.0..55.0), 10.0)),
                    median_income: (!missing_ids.contains(&idx)).then(|| round(rng.random_range(30_000.0..110_000.0), 1.0)),
                    vehicle_availability_pct: Some(round(rng.random_range(85.0..99.5), 10.0)),
                    race_white_frac: Some(round(rng.random_range(0.3..0.95), 1000.0)),
                });
            }
        }

        let cell = (self.max_lat - self.min_lat) / GRID_ROWS as f64;
        let ncols = ((self.max_lon - self.min_lon) / cell).ceil() as usize;
        let mut values = Vec::with_capacity(ncols * GRID_ROWS);
        for row_from_north in 0..GRID_ROWS {
            let center_frac = (GRID_ROWS - row_from_north) as f64 / GRID_ROWS as f64 - 0.5 / GRID_ROWS as f64;
            let v = (center_frac * 100.0 * 1e6).round() / 1e6;
            values.extend(std::iter::repeat_n(v, ncols));
        }
        let grid = ElevationGrid::new(GeoPoint::new(self.min_lat, self.min_lon), cell, ncols, GRID_ROWS, -9999.0, values)
            .expect("consistent grid");

        Geography {
            zones_geojson: json!({"type": "FeatureCollection", "features": zones}),
            tracts_geojson: json!({"type": "FeatureCollection", "features": tract_features}),
            tracts,
            grid,
        }
    }
}

fn tract_id(row: usize, col: usize) -> String {
    format!("T{row:02}{col:02}")
}

/// Planted evacuation of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedEvacuation {
    pub departure: NaiveDate,
    /// `None` when the return falls after the study month.
    pub reentry: Option<NaiveDate>,
    pub shelter: GeoPoint,
    pub shelter_distance_mi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DevicePlan {
    pub index: usize,
    pub device_id: String,
    pub home: GeoPoint,
    pub order_type: OrderType,
    pub strip: usize,
    pub elevation_bin: ElevationBin,
    pub tract_id: String,
    /// No sightings at all during the study month.
    pub silent: bool,
    pub evacuation: Option<PlantedEvacuation>,
}

fn device_id(seed: u64, index: usize) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    hex::encode(&h.finalize()[..16])
}

fn device_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn near_line(frac: f64) -> bool {
    let scaled = frac * TRACTS_PER_SIDE as f64;
    (scaled - scaled.round()).abs() < MARGIN * TRACTS_PER_SIDE as f64
}

const BIN_FRACS: [(f64, f64); 3] = [(0.0, BIN_EDGES[0]), (BIN_EDGES[0], BIN_EDGES[1]), (BIN_EDGES[1], 1.0)];

fn group_strips(g: OrderType) -> Vec<usize> {
    (0..STRIPS).filter(|&s| STRIP_ORDERS[s] == g).collect()
}

impl ScenarioConfig {
    /// Ground truth for every device, without sightings.
    pub fn plan(&self) -> Vec<DevicePlan> {
        let mut master = ChaCha8Rng::seed_from_u64(self.seed);
        master.set_stream(u64::MAX - 1);

        let mut cell_w = Vec::with_capacity(9);
        for g in 0..3 {
            for b in 0..3 {
                cell_w.push(self.group_shares[g] * self.elevation_shares[b]);
            }
        }
        let cells = quota_list(&apportion(self.devices, &cell_w), &mut master);
        let silent = quota_list(&apportion(self.devices, &[self.silent_share, 1.0 - self.silent_share]), &mut master);

        // Evacuees per cell among devices that are seen in the study month.
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); 9];
        for (i, &c) in cells.iter().enumerate() {
            if silent[i] == 1 {
                members[c].push(i);
            }
        }
        let mut evacuee = vec![false; self.devices];
        for (c, m) in members.iter().enumerate() {
            let share = self.evac_shares(OrderType::ALL[c / 3])[c % 3];
            let n = apportion(m.len(), &[share, 1.0 - share])[0];
            for &i in &m[..n] {
                evacuee[i] = true;
            }
        }
        let evac_ids: Vec<usize> = (0..self.devices).filter(|&i| evacuee[i]).collect();
        let dep = quota_list(&apportion(evac_ids.len(), &self.departure_weights), &mut master);
        let mut shelter_bin = vec![0usize; self.devices];
        let mut departure = vec![0usize; self.devices];
        for (k, &i) in evac_ids.iter().enumerate() {
            departure[i] = dep[k];
        }
        for g in OrderType::ALL {
            let ids: Vec<usize> = evac_ids.iter().copied().filter(|&i| cells[i] / 3 == g.code() as usize).collect();
            let bins = quota_list(&apportion(ids.len(), self.shelter_weights(g)), &mut master);
            for (k, &i) in ids.iter().enumerate() {
                shelter_bin[i] = bins[k];
            }
        }

        (0..self.devices)
            .into_par_iter()
            .map(|i| {
                let mut rng = device_rng(self.seed, i);
                let g = OrderType::ALL[cells[i] / 3];
                let bin = ElevationBin::ALL[cells[i] % 3];
                let strips = group_strips(g);
                let strip = strips[rng.random_range(0..strips.len())];
                let (b0, b1) = BIN_FRACS[cells[i] % 3];
                let (lat_f, lon_f) = loop {
                    let lat_f = rng.random_range(b0..b1);
                    let lon_f = (strip as f64 + rng.random_range(0.0..1.0)) / STRIPS as f64;
                    if !near_line(lat_f) && !near_line(lon_f) {
                        break (lat_f, lon_f);
                    }
                };
                let home = GeoPoint::new(round6(self.lat_at(lat_f)), round6(self.lon_at(lon_f)));
                let tr = ((lat_f * TRACTS_PER_SIDE as f64) as usize, (lon_f * TRACTS_PER_SIDE as f64) as usize);
                let evacuation = evacuee[i].then(|| {
                    let departure = self.departure_dates[departure[i]];
                    let dur = rng.random_range(self.duration_min_days..=self.duration_max_days);
                    let back = departure + Duration::days(i64::from(dur));
                    let (lo, hi) = self.shelter_range(shelter_bin[i]);
                    let miles = rng.random_range(lo..hi);
                    let anchor = destination(home, rng.random_range(0.0..std::f64::consts::TAU), miles * METERS_PER_MILE);
                    let shelter = GeoPoint::new(round6(anchor.lat), round6(anchor.lon));
                    PlantedEvacuation {
                        departure,
                        reentry: self.study_month().contains(back).then_some(back),
                        shelter,
                        shelter_distance_mi: haversine_m(home, shelter) / METERS_PER_MILE,
                    }
                });
                DevicePlan {
                    index: i,
                    device_id: device_id(self.seed, i),
                    home,
                    order_type: g,
                    strip,
                    elevation_bin: bin,
                    tract_id: tract_id(tr.0, tr.1),
                    silent: silent[i] == 0,
                    evacuation,
                }
            })
            .collect()
    }

    /// Distance range (miles) drawn from for shelter bin `b`, kept clear of
    /// the bin edges.
    fn shelter_range(&self, b: usize) -> (f64, f64) {
        let e = &self.shelter_bin_edges_mi;
        match b {
            0 => (3.0, e[0] - 0.5),
            b if b == e.len() => (e[b - 1] + 0.5, self.shelter_max_mi),
            b => (e[b - 1] + 0.5, e[b] - 0.5),
        }
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// What a device does on one day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DayKind {
    /// Ordinary day at home with this many stops.
    Home { stops: u32 },
    /// Home until midday, then at the shelter.
    Departure,
    /// At the shelter all day.
    Away,
    /// At the shelter until late morning, then home.
    Return,
    /// No sightings.
    Dropped,
}

impl DayKind {
    pub fn trips(self) -> Option<u32> {
        match self {
            DayKind::Home { stops: 0 } => Some(0),
            DayKind::Home { stops } => Some(stops + 1),
            DayKind::Dropped => None,
            _ => Some(0),
        }
    }
}

/// A device's days and sightings.
#[derive(Debug, Clone)]
pub struct DeviceStream {
    pub days: Vec<(NaiveDate, DayKind)>,
    pub sightings: Vec<SightingRecord>,
}

struct Emitter<'a> {
    cfg: &'a ScenarioConfig,
    plan: &'a DevicePlan,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    out: Vec<SightingRecord>,
}

impl Emitter<'_> {
    fn emit(&mut self, day: NaiveDate, sec: i64, at: GeoPoint) {
        let local_midnight = day.signed_duration_since(NaiveDate::from_ymd_opt(1970, 1, 1).expect("epoch")).num_days() * SECONDS_PER_DAY;
        let p = offset_m(at, self.noise.sample(&mut self.rng), self.noise.sample(&mut self.rng));
        self.out.push(SightingRecord {
            timestamp: local_midnight + sec - i64::from(self.cfg.tz_offset_s),
            device_id: self.plan.device_id.clone(),
            device_type: (self.plan.index % 2) as u8,
            lat: round6(p.lat),
            lon: round6(p.lon),
            accuracy_m: self.rng.random_range(5..=60) as f64,
            tz_offset_s: self.cfg.tz_offset_s,
        });
    }

    /// Poisson sightings at `at` over local seconds `[t0, t1)`.
    fn dwell(&mut self, day: NaiveDate, t0: i64, t1: i64, at: GeoPoint) {
        const NIGHT_END: i64 = 7 * 3600;
        const NIGHT_START: i64 = 19 * 3600;
        let parts = [(t0, t1.min(NIGHT_END), true), (t0.max(NIGHT_END), t1.min(NIGHT_START), false), (t0.max(NIGHT_START), t1, true)];
        for (a, b, night) in parts {
            if b <= a {
                continue;
            }
            let rate = if night { self.cfg.night_rate_per_hour } else { self.cfg.day_rate_per_hour };
            let lambda = rate * (b - a) as f64 / 3600.0;
            if lambda <= 0.0 {
                continue;
            }
            let n = Poisson::new(lambda).expect("positive rate").sample(&mut self.rng) as usize;
            for _ in 0..n {
                let t = self.rng.random_range(a..b);
                self.emit(day, t, at);
            }
        }
    }

    fn ordinary_day(&mut self, day: NaiveDate, stops: u32, places: &[GeoPoint]) {
        let home = self.plan.home;
        if stops == 0 {
            self.dwell(day, 0, SECONDS_PER_DAY, home);
            return;
        }
        let leave = self.rng.random_range(7 * 3600 + 1800..9 * 3600);
        self.dwell(day, 0, leave, home);
        self.emit(day, leave - 120, home);
        let mut t = leave;
        let mut here = home;
        let mut last = usize::MAX;
        for _ in 0..stops {
            let mut k = self.rng.random_range(0..places.len());
            if k == last {
                k = (k + 1) % places.len();
            }
            last = k;
            let next = places[k];
            let travel = self.rng.random_range(900..1800);
            let mid = GeoPoint::new((here.lat + next.lat) / 2.0, (here.lon + next.lon) / 2.0);
            self.emit(day, t + travel / 2, mid);
            t += travel;
            let stay = self.rng.random_range(3600..7200);
            self.emit(day, t + 60, next);
            self.dwell(day, t + 120, t + stay - 120, next);
            self.emit(day, t + stay - 60, next);
            t += stay;
            here = next;
        }
        let travel = self.rng.random_range(900..1800);
        let mid = GeoPoint::new((here.lat + home.lat) / 2.0, (here.lon + home.lon) / 2.0);
        self.emit(day, t + travel / 2, mid);
        t += travel;
        self.emit(day, t + 60, home);
        self.dwell(day, t + 120, SECONDS_PER_DAY, home);
    }
}

/// Favorite places 1.5-8 km from home, pairwise at least 1 km apart.
fn places(home: GeoPoint, rng: &mut ChaCha8Rng) -> Vec<GeoPoint> {
    let mut out: Vec<GeoPoint> = Vec::new();
    while out.len() < 5 {
        let p = destination(home, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(1_500.0..8_000.0));
        if out.iter().all(|q| haversine_m(*q, p) >= 1_000.0) {
            out.push(p);
        }
    }
    out
}

impl ScenarioConfig {
    /// Day schedule and sightings for one device, sorted by timestamp.
    pub fn device_stream(&self, plan: &DevicePlan) -> DeviceStream {
        let mut rng = device_rng(self.seed, plan.index);
        // Skip past the draws used for planning so the streams are independent.
        rng.set_word_pos(1 << 40);
        let favorite = places(plan.home, &mut rng);
        let mut days = Vec::new();
        for day in self.baseline_month().days().chain(self.study_month().days()) {
            let dropped = rng.random::<f64>() < self.dropout_prob;
            let stops = rng.random_range(self.stops_min..=self.stops_max);
            let kind = if dropped || (plan.silent && self.study_month().contains(day)) {
                DayKind::Dropped
            } else {
                match &plan.evacuation {
                    Some(e) if day == e.departure => DayKind::Departure,
                    Some(e) if day > e.departure && e.reentry.is_none_or(|r| day < r) => DayKind::Away,
                    Some(e) if Some(day) == e.reentry => DayKind::Return,
                    _ => DayKind::Home { stops },
                }
            };
            days.push((day, kind));
        }
        let mut em = Emitter { cfg: self, plan, rng, noise: Normal::new(0.0, self.gps_noise_m).expect("sigma >= 0"), out: Vec::new() };
        for &(day, kind) in &days {
            let shelter = plan.evacuation.as_ref().map(|e| e.shelter);
            match kind {
                DayKind::Home { stops } => em.ordinary_day(day, stops, &favorite),
                DayKind::Departure => {
                    em.dwell(day, 0, 12 * 3600, plan.home);
                    em.emit(day, 11 * 3600, plan.home);
                    em.emit(day, 17 * 3600, shelter.expect("evacuee"));
                    em.dwell(day, 16 * 3600, SECONDS_PER_DAY, shelter.expect("evacuee"));
                }
                DayKind::Away => {
                    em.emit(day, 12 * 3600, shelter.expect("evacuee"));
                    em.dwell(day, 0, SECONDS_PER_DAY, shelter.expect("evacuee"));
                }
                DayKind::Return => {
                    em.dwell(day, 0, 10 * 3600, shelter.expect("evacuee"));
                    em.emit(day, 9 * 3600, shelter.expect("evacuee"));
                    em.emit(day, 15 * 3600, plan.home);
                    em.dwell(day, 14 * 3600, SECONDS_PER_DAY, plan.home);
                }
                DayKind::Dropped => {}
            }
        }
        let mut sightings = em.out;
        sightings.sort_by_key(|s| s.timestamp);
        DeviceStream { days, sightings }
    }
}

/// One ground-truth row per device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub device_id: String,
    pub home_lat: f64,
    pub home_lon: f64,
    pub zone_id: u32,
    pub order_type: OrderType,
    pub elevation_bin: ElevationBin,
    pub tract_id: String,
    pub silent: bool,
    pub evacuated: bool,
    pub departure_date: Option<NaiveDate>,
    pub reentry_date: Option<NaiveDate>,
    pub shelter_lat: Option<f64>,
    pub shelter_lon: Option<f64>,
    pub shelter_distance_mi: Option<f64>,
    /// Baseline-month sightings in the 19:00-07:00 window.
    pub baseline_night_sightings: u64,
    /// Study-month days with no sightings.
    pub study_dropped_days: u32,
    /// Baseline-month trips per day, `-` for a day without sightings.
    pub daily_trips: String,
}

impl ScenarioConfig {
    pub fn truth_row(&self, plan: &DevicePlan, stream: &DeviceStream) -> TruthRow {
        let base = self.baseline_month();
        let study = self.study_month();
        let night = stream
            .sightings
            .iter()
            .filter(|s| base.contains(s.local_day()) && crate::home::is_night(s))
            .count() as u64;
        let trips: Vec<String> = stream
            .days
            .iter()
            .filter(|(d, _)| base.contains(*d))
            .map(|(_, k)| k.trips().map_or("-".into(), |t| t.to_string()))
            .collect();
        let e = plan.evacuation.as_ref();
        TruthRow {
            device_id: plan.device_id.clone(),
            home_lat: plan.home.lat,
            home_lon: plan.home.lon,
            zone_id: plan.strip as u32 + 1,
            order_type: plan.order_type,
            elevation_bin: plan.elevation_bin,
            tract_id: plan.tract_id.clone(),
            silent: plan.silent,
            evacuated: e.is_some(),
            departure_date: e.map(|e| e.departure),
            reentry_date: e.and_then(|e| e.reentry),
            shelter_lat: e.map(|e| e.shelter.lat),
            shelter_lon: e.map(|e| e.shelter.lon),
            shelter_distance_mi: e.map(|e| e.shelter_distance_mi),
            baseline_night_sightings: night,
            study_dropped_days: stream.days.iter().filter(|(d, k)| study.contains(*d) && *k == DayKind::Dropped).count() as u32,
            daily_trips: trips.join(";"),
        }
    }
}

pub const SIGHTINGS_FILE: &str = "sightings.csv";
pub const TRUTH_FILE: &str = "ground_truth.csv";
pub const ZONES_FILE: &str = "zones.geojson";
pub const ELEVATION_FILE: &str = "elevation.asc";
pub const TRACTS_FILE: &str = "tracts.csv";
pub const TRACT_POLYGONS_FILE: &str = "tracts.geojson";
pub const SIGHTINGS_HEADER: &str = "timestamp,device_id,device_type,lat,lon,accuracy_m,tz_offset_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub devices: usize,
    pub sightings: u64,
    pub evacuees: usize,
    pub files: Vec<PathBuf>,
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), SynthError> {
    crate::store::write_atomic(path, f).map_err(SynthError::Input)
}

/// Writes the scenario's sightings, ground truth and reference layers into
/// `out`. Output is a pure function of the config.
pub fn generate(cfg: &ScenarioConfig, out: &Path) -> Result<SynthSummary, SynthError> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(io(out))?;
    let geo = cfg.geography();
    let plans = cfg.plan();

    let sightings_path = out.join(SIGHTINGS_FILE);
    let truth_path = out.join(TRUTH_FILE);
    let mut total = 0u64;
    let mut truth = csv::Writer::from_writer(Vec::new());
    write_file(&sightings_path, |w| {
        writeln!(w, "{SIGHTINGS_HEADER}")?;
        for chunk in plans.chunks(256) {
            let rendered: Vec<(String, TruthRow, u64)> = chunk
                .par_iter()
                .map(|p| {
                    let s = cfg.device_stream(p);
                    let mut text = String::with_capacity(s.sightings.len() * 80);
                    for r in &s.sightings {
                        text.push_str(&r.to_line(','));
                        text.push('\n');
                    }
                    (text, cfg.truth_row(p, &s), s.sightings.len() as u64)
                })
                .collect();
            for (text, row, n) in rendered {
                w.write_all(text.as_bytes())?;
                truth.serialize(row).map_err(std::io::Error::other)?;
                total += n;
            }
        }
        Ok(())
    })?;
    let truth_bytes = truth.into_inner().map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    write_file(&truth_path, |w| w.write_all(&truth_bytes))?;

    let zones_path = out.join(ZONES_FILE);
    write_file(&zones_path, |w| serde_json::to_writer_pretty(&mut *w, &geo.zones_geojson).map_err(std::io::Error::other))?;
    let polys_path = out.join(TRACT_POLYGONS_FILE);
    write_file(&polys_path, |w| serde_json::to_writer_pretty(&mut *w, &geo.tracts_geojson).map_err(std::io::Error::other))?;
    let grid_path = out.join(ELEVATION_FILE);
    write_file(&grid_path, |w| w.write_all(geo.grid.to_ascii().as_bytes()))?;
    let tracts_path = out.join(TRACTS_FILE);
    let mut tw = csv::Writer::from_writer(Vec::new());
    for t in &geo.tracts {
        tw.serialize(t).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    }
    let tract_bytes = tw.into_inner().map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    write_file(&tracts_path, |w| w.write_all(&tract_bytes))?;

    Ok(SynthSummary {
        devices: plans.len(),
        sightings: total,
        evacuees: plans.iter().filter(|p| p.evacuation.is_some()).count(),
        files: vec![sightings_path, truth_path, zones_path, grid_path, tracts_path, polys_path],
    })
}

/// Reads a ground-truth file written by [`generate`].
pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>, InputError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| InputError::invalid("ground truth", e.to_string()))?;
    rdr.deserialize().map(|r| r.map_err(|e| InputError::invalid("ground truth", e.to_string()))).collect()
}
