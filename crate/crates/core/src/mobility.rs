//! Baseline mobility: trip counts from staypoint segmentation and daily
//! convex-hull footprints.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{convex_hull, haversine_m, hull_area_perimeter, project_local, GeoPoint};
use crate::ingest::{DateRange, DeviceTrajectory, SightingRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripDenominator {
    /// Days of the month with at least one sighting.
    ObservedDays,
    /// Every calendar day of the month.
    CalendarDays,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilityParams {
    pub roam_m: f64,
    pub dwell_s: i64,
    pub gap_s: i64,
    pub denominator: TripDenominator,
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self { roam_m: 300.0, dwell_s: 300, gap_s: 3600, denominator: TripDenominator::ObservedDays }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Staypoint {
    pub centroid: GeoPoint,
    pub arrival: i64,
    pub departure: i64,
    pub sightings: usize,
}

/// A trip as an inclusive index range into the sightings it was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trip {
    pub first: usize,
    pub last: usize,
}

impl Trip {
    pub fn start_day(&self, sightings: &[SightingRecord]) -> NaiveDate {
        sightings[self.first].local_day()
    }
}

/// Inclusive index ranges of staypoints within `sightings[lo..hi]`.
fn stay_ranges(s: &[SightingRecord], lo: usize, hi: usize, p: &MobilityParams) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = lo;
    while i < hi {
        let anchor = s[i].point();
        let mut j = i + 1;
        while j < hi && haversine_m(anchor, s[j].point()) <= p.roam_m {
            j += 1;
        }
        if s[j - 1].timestamp - s[i].timestamp >= p.dwell_s {
            out.push((i, j - 1));
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

pub fn detect_staypoints(sightings: &[SightingRecord], params: &MobilityParams) -> Vec<Staypoint> {
    stay_ranges(sightings, 0, sightings.len(), params)
        .into_iter()
        .map(|(a, b)| {
            let pts: Vec<GeoPoint> = sightings[a..=b].iter().map(|s| s.point()).collect();
            Staypoint {
                centroid: GeoPoint::centroid(&pts).expect("non-empty stay"),
                arrival: sightings[a].timestamp,
                departure: sightings[b].timestamp,
                sightings: b - a + 1,
            }
        })
        .collect()
}

/// Splits time-ordered sightings into trips.
///
/// Staypoints cut the sequence into moving segments (including the stretch
/// before the first and after the last stay). A segment holding a silence
/// longer than `gap_s` whose two sides are at least `roam_m` apart is split
/// there, provided each side keeps two or more sightings, and each side is
/// segmented again. Segments with fewer than two
/// sightings or less than `roam_m` net displacement are not trips.
pub fn identify_trips(sightings: &[SightingRecord], params: &MobilityParams) -> Vec<Trip> {
    let mut trips = Vec::new();
    let mut pending = vec![(0usize, sightings.len())];
    while let Some((lo, hi)) = pending.pop() {
        if hi <= lo {
            continue;
        }
        let stays = stay_ranges(sightings, lo, hi, params);
        let mut segments = Vec::with_capacity(stays.len() + 1);
        let mut cursor = lo;
        for &(first, last) in &stays {
            segments.push((cursor, first));
            cursor = last;
        }
        segments.push((cursor, hi - 1));

        for (a, b) in segments {
            if b <= a {
                continue;
            }
            // Only split where both sides keep at least two sightings.
            let split = (a + 1..b.saturating_sub(1)).find(|&g| {
                sightings[g + 1].timestamp - sightings[g].timestamp > params.gap_s
                    && haversine_m(sightings[g].point(), sightings[g + 1].point()) >= params.roam_m
            });
            match split {
                Some(g) => {
                    pending.push((a, g + 1));
                    pending.push((g + 1, b + 1));
                }
                None => {
                    if haversine_m(sightings[a].point(), sightings[b].point()) >= params.roam_m {
                        trips.push(Trip { first: a, last: b });
                    }
                }
            }
        }
    }
    trips.sort_by_key(|t| (t.first, t.last));
    trips
}

/// Convex-hull area (km²) and perimeter (km) of one day's sightings, or
/// `None` with fewer than three distinct points.
pub fn daily_hull_metrics(day: &[SightingRecord]) -> Option<(f64, f64)> {
    let mut pts: Vec<GeoPoint> = day.iter().map(|s| s.point()).collect();
    pts.sort_by(|a, b| a.lat.total_cmp(&b.lat).then(a.lon.total_cmp(&b.lon)));
    pts.dedup();
    if pts.len() < 3 {
        return None;
    }
    let origin = GeoPoint::centroid(&pts)?;
    let hull = convex_hull(&project_local(&pts, origin));
    Some(hull_area_perimeter(&hull))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityBaseline {
    pub device_id: String,
    pub avg_daily_trips: f64,
    pub avg_daily_hull_area_km2: f64,
    pub avg_daily_hull_perimeter_km: f64,
    pub observed_days: usize,
    pub hull_days: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MobilityError {
    #[error("no baseline data ({observed_days} observed days, {hull_days} hull days)")]
    NoBaselineData { observed_days: usize, hull_days: usize },
}

/// Monthly averages. Trips are segmented over the whole month and counted on
/// the local day they start.
pub fn baseline_summary(
    traj: &DeviceTrajectory,
    month: DateRange,
    params: &MobilityParams,
) -> Result<MobilityBaseline, MobilityError> {
    let slice = traj.slice_in(month);
    let observed_days = traj.days_in(month).count();
    let (mut area_sum, mut perim_sum, mut hull_days) = (0.0, 0.0, 0usize);
    for (_, day) in traj.days_in(month) {
        if let Some((a, p)) = daily_hull_metrics(day) {
            area_sum += a;
            perim_sum += p;
            hull_days += 1;
        }
    }
    if observed_days == 0 || hull_days == 0 {
        return Err(MobilityError::NoBaselineData { observed_days, hull_days });
    }
    let trips = identify_trips(slice, params)
        .iter()
        .filter(|t| month.contains(t.start_day(slice)))
        .count();
    let trip_days = match params.denominator {
        TripDenominator::ObservedDays => observed_days,
        TripDenominator::CalendarDays => month.num_days(),
    };
    Ok(MobilityBaseline {
        device_id: traj.device_id.clone(),
        avg_daily_trips: trips as f64 / trip_days as f64,
        avg_daily_hull_area_km2: area_sum / hull_days as f64,
        avg_daily_hull_perimeter_km: perim_sum / hull_days as f64,
        observed_days,
        hull_days,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{PlanarPoint, EARTH_RADIUS_M};
    use crate::ingest::{build_trajectories, IngestFilter};
    use proptest::prelude::*;

    const TZ: i32 = -14400;
    // 2017-08-01 00:00 local (UTC-4).
    const AUG1: i64 = 1_501_560_000;

    fn at(ts: i64, p: GeoPoint) -> SightingRecord {
        SightingRecord { timestamp: ts, device_id: "d".into(), device_type: 1, lat: p.lat, lon: p.lon, accuracy_m: 5.0, tz_offset_s: TZ }
    }

    fn offset(p: GeoPoint, north_m: f64, east_m: f64) -> GeoPoint {
        GeoPoint::new(
            p.lat + (north_m / EARTH_RADIUS_M).to_degrees(),
            p.lon + (east_m / (EARTH_RADIUS_M * p.lat.to_radians().cos())).to_degrees(),
        )
    }

    /// Sightings every `step` seconds while dwelling at `p`.
    fn stay(out: &mut Vec<SightingRecord>, start: i64, secs: i64, step: i64, p: GeoPoint) -> i64 {
        let mut t = start;
        while t <= start + secs {
            out.push(at(t, offset(p, ((t / step) % 3) as f64 * 5.0, 0.0)));
            t += step;
        }
        start + secs
    }

    /// Straight-line travel sampled once a minute.
    fn travel(out: &mut Vec<SightingRecord>, start: i64, secs: i64, from: GeoPoint, to: GeoPoint) -> i64 {
        let steps = secs / 60;
        for k in 1..steps {
            let f = k as f64 / steps as f64;
            out.push(at(start + k * 60, GeoPoint::new(from.lat + f * (to.lat - from.lat), from.lon + f * (to.lon - from.lon))));
        }
        start + secs
    }

    fn a() -> GeoPoint {
        GeoPoint::new(28.5, -81.3)
    }

    fn b() -> GeoPoint {
        offset(a(), 8_000.0, 3_000.0)
    }

    #[test]
    fn single_stay_is_no_trip() {
        let mut s = Vec::new();
        stay(&mut s, AUG1, 10 * 3600, 120, a());
        assert!(identify_trips(&s, &MobilityParams::default()).is_empty());
        assert_eq!(detect_staypoints(&s, &MobilityParams::default()).len(), 1);
    }

    #[test]
    fn stay_move_stay_is_one_trip() {
        let mut s = Vec::new();
        let t = stay(&mut s, AUG1 + 8 * 3600, 2 * 3600, 300, a());
        let t = travel(&mut s, t, 20 * 60, a(), b());
        stay(&mut s, t, 2 * 3600, 300, b());
        let trips = identify_trips(&s, &MobilityParams::default());
        assert_eq!(trips.len(), 1);
        assert!(haversine_m(s[trips[0].first].point(), a()) < 50.0);
        assert!(haversine_m(s[trips[0].last].point(), b()) < 50.0);
    }

    #[test]
    fn long_silence_splits_trip() {
        let mid1 = offset(a(), 3_000.0, 0.0);
        let mid2 = offset(a(), 6_000.0, 0.0);
        let far = offset(a(), 9_000.0, 0.0);
        let mut s = Vec::new();
        let t = stay(&mut s, AUG1 + 7 * 3600, 2 * 3600, 300, a());
        let t = travel(&mut s, t, 10 * 60, a(), mid1);
        s.push(at(t, mid1));
        let t = t + 3 * 3600;
        s.push(at(t, mid2));
        travel(&mut s, t, 10 * 60, mid2, far);
        let p = MobilityParams::default();
        assert_eq!(identify_trips(&s, &p).len(), 2);
        let no_split = MobilityParams { gap_s: 4 * 3600, ..p };
        assert_eq!(identify_trips(&s, &no_split).len(), 1);
    }

    #[test]
    fn short_hop_is_not_a_trip() {
        let near = offset(a(), 350.0, 0.0);
        let mut s = Vec::new();
        let t = stay(&mut s, AUG1 + 8 * 3600, 3600, 300, a());
        let t = travel(&mut s, t, 5 * 60, a(), near);
        stay(&mut s, t, 3600, 300, near);
        // Stays are 350 m apart but the trip endpoints sit within each stay.
        let trips = identify_trips(&s, &MobilityParams::default());
        assert!(trips.len() <= 1);
        let hop = MobilityParams { roam_m: 500.0, ..Default::default() };
        assert!(identify_trips(&s, &hop).is_empty());
    }

    #[test]
    fn hull_metrics() {
        let s2: Vec<_> = (0..2).map(|i| at(AUG1 + i, offset(a(), i as f64 * 100.0, 0.0))).collect();
        assert_eq!(daily_hull_metrics(&s2), None);
        let dup = vec![at(AUG1, a()), at(AUG1 + 1, a()), at(AUG1 + 2, b())];
        assert_eq!(daily_hull_metrics(&dup), None);

        // Corners of a 1 km square centred on `a`.
        let corners: Vec<_> = [(-500.0, -500.0), (-500.0, 500.0), (500.0, 500.0), (500.0, -500.0)]
            .iter()
            .enumerate()
            .map(|(i, (n, e))| at(AUG1 + i as i64, offset(a(), *n, *e)))
            .collect();
        let (area, perim) = daily_hull_metrics(&corners).unwrap();
        assert!((area - 1.0).abs() < 1e-3, "{area}");
        assert!((perim - 4.0).abs() < 1e-3, "{perim}");
    }

    /// Brute-force oracle: hull vertices are the points not strictly inside
    /// any triangle of other points; the area is a fan over them sorted by
    /// angle around their mean.
    fn brute_hull_area(pts: &[PlanarPoint]) -> f64 {
        let n = pts.len();
        let extreme: Vec<PlanarPoint> = (0..n)
            .filter(|&i| {
                let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                !others.iter().enumerate().any(|(x, &j)| {
                    others[x + 1..].iter().enumerate().any(|(y, &k)| {
                        others[x + y + 2..].iter().any(|&l| strictly_inside(pts[i], pts[j], pts[k], pts[l]))
                    })
                })
            })
            .map(|i| pts[i])
            .collect();
        let cx = extreme.iter().map(|p| p.x).sum::<f64>() / extreme.len() as f64;
        let cy = extreme.iter().map(|p| p.y).sum::<f64>() / extreme.len() as f64;
        let mut sorted = extreme;
        sorted.sort_by(|p, q| (p.y - cy).atan2(p.x - cx).total_cmp(&(q.y - cy).atan2(q.x - cx)));
        let twice: f64 = (0..sorted.len())
            .map(|i| {
                let (p, q) = (sorted[i], sorted[(i + 1) % sorted.len()]);
                p.x * q.y - q.x * p.y
            })
            .sum();
        twice.abs() / 2.0
    }

    fn strictly_inside(p: PlanarPoint, a: PlanarPoint, b: PlanarPoint, c: PlanarPoint) -> bool {
        let d = |u: PlanarPoint, v: PlanarPoint, w: PlanarPoint| (v.x - u.x) * (w.y - u.y) - (v.y - u.y) * (w.x - u.x);
        let (d1, d2, d3) = (d(a, b, p), d(b, c, p), d(c, a, p));
        (d1 > 0.0 && d2 > 0.0 && d3 > 0.0) || (d1 < 0.0 && d2 < 0.0 && d3 < 0.0)
    }

    #[test]
    fn daily_hull_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let day: Vec<_> = (0..50)
                .map(|i| at(AUG1 + i, offset(a(), rng.random_range(-5_000.0..5_000.0), rng.random_range(-5_000.0..5_000.0))))
                .collect();
            let (area, _) = daily_hull_metrics(&day).unwrap();
            let pts: Vec<GeoPoint> = day.iter().map(|s| s.point()).collect();
            let planar = project_local(&pts, GeoPoint::centroid(&pts).unwrap());
            let brute = brute_hull_area(&planar);
            assert!((area - brute).abs() < 1e-9 * brute.max(1.0), "{area} vs {brute}");
        }
    }

    fn traj(recs: Vec<SightingRecord>) -> DeviceTrajectory {
        build_trajectories(recs, &IngestFilter::default()).0.remove(0)
    }

    fn aug() -> DateRange {
        DateRange::new(NaiveDate::from_ymd_opt(2017, 8, 1).unwrap(), NaiveDate::from_ymd_opt(2017, 8, 31).unwrap())
    }

    /// Planted device: every day it tours the four corners of a square of
    /// side `side_m` centred on `a` and returns to the first, one stay per
    /// visit, so each day holds four trips and its hull is the square.
    fn square_tour(days: i64, side_m: f64) -> (Vec<SightingRecord>, f64) {
        let h = side_m / 2.0;
        let lat0 = a().lat;
        let corners = [
            GeoPoint::new(lat0 - (h / EARTH_RADIUS_M).to_degrees(), a().lon - (h / (EARTH_RADIUS_M * lat0.to_radians().cos())).to_degrees()),
            GeoPoint::new(lat0 - (h / EARTH_RADIUS_M).to_degrees(), a().lon + (h / (EARTH_RADIUS_M * lat0.to_radians().cos())).to_degrees()),
            GeoPoint::new(lat0 + (h / EARTH_RADIUS_M).to_degrees(), a().lon + (h / (EARTH_RADIUS_M * lat0.to_radians().cos())).to_degrees()),
            GeoPoint::new(lat0 + (h / EARTH_RADIUS_M).to_degrees(), a().lon - (h / (EARTH_RADIUS_M * lat0.to_radians().cos())).to_degrees()),
        ];
        let mut s = Vec::new();
        for d in 0..days {
            let base = AUG1 + d * 86_400 + 8 * 3600;
            for (k, c) in corners.iter().chain(&corners[..1]).enumerate() {
                for m in 0..4 {
                    s.push(at(base + k as i64 * 3 * 3600 + m * 600, *c));
                }
            }
        }
        let side_km = side_m / 1000.0;
        (s, side_km * side_km)
    }

    #[test]
    fn planted_square_tour_averages() {
        let (recs, area) = square_tour(10, 2_000.0);
        let b = baseline_summary(&traj(recs), aug(), &MobilityParams::default()).unwrap();
        assert_eq!(b.observed_days, 10);
        assert!((b.avg_daily_trips - 4.0).abs() < 1e-9);
        assert!((b.avg_daily_hull_area_km2 - area).abs() < 1e-9, "{}", b.avg_daily_hull_area_km2);
        assert!((b.avg_daily_hull_perimeter_km - 8.0).abs() < 1e-9);
        let cal = MobilityParams { denominator: TripDenominator::CalendarDays, ..Default::default() };
        let b = baseline_summary(&traj(square_tour(10, 2_000.0).0), aug(), &cal).unwrap();
        assert!((b.avg_daily_trips - 40.0 / 31.0).abs() < 1e-12);
    }

    #[test]
    fn trips_divide_by_observed_days() {
        // Day d holds d trips (d in 1..=5) between stays alternating a and b;
        // the 26 other days have no sightings.
        let mut s = Vec::new();
        let mut here = a();
        for d in 1..=5i64 {
            let mut t = AUG1 + (d - 1) * 86_400 * 3 + 6 * 3600;
            for _ in 0..d {
                t = stay(&mut s, t, 1800, 300, here);
                let next = if here == a() { b() } else { a() };
                t = travel(&mut s, t, 15 * 60, here, next);
                here = next;
            }
            stay(&mut s, t, 1800, 300, here);
        }
        let t = traj(s);
        let b = baseline_summary(&t, aug(), &MobilityParams::default()).unwrap();
        assert_eq!(b.observed_days, 5);
        assert!((b.avg_daily_trips - 3.0).abs() < 1e-12, "{}", b.avg_daily_trips);
    }

    #[test]
    fn no_baseline_data() {
        let t = traj(vec![at(AUG1 - 86_400 * 5, a())]);
        assert!(matches!(baseline_summary(&t, aug(), &MobilityParams::default()), Err(MobilityError::NoBaselineData { .. })));
    }

    fn commute_day() -> Vec<SightingRecord> {
        let mut s = Vec::new();
        let t = stay(&mut s, AUG1 + 7 * 3600, 2 * 3600, 300, a());
        let t = travel(&mut s, t, 20 * 60, a(), b());
        let t = stay(&mut s, t, 3 * 3600, 300, b());
        let t = travel(&mut s, t, 20 * 60, b(), a());
        stay(&mut s, t, 2 * 3600, 300, a());
        s
    }

    proptest! {
        #[test]
        fn trip_count_ignores_time_shift(shift in -5_000_000i64..5_000_000) {
            let s = commute_day();
            let shifted: Vec<_> = s.iter().cloned().map(|mut r| { r.timestamp += shift; r }).collect();
            let p = MobilityParams::default();
            prop_assert_eq!(identify_trips(&s, &p).len(), identify_trips(&shifted, &p).len());
        }

        #[test]
        fn extra_sighting_inside_stay_keeps_count(pos in 1usize..20, north in -100.0..100.0f64) {
            let s = commute_day();
            let p = MobilityParams::default();
            let before = identify_trips(&s, &p).len();
            let stays = stay_ranges(&s, 0, s.len(), &p);
            let (first, last) = stays[0];
            let at_idx = first + 1 + pos % (last - first);
            let mut with_extra = s.clone();
            let ts = (s[at_idx - 1].timestamp + s[at_idx].timestamp) / 2;
            with_extra.insert(at_idx, at(ts, offset(s[first].point(), north, 0.0)));
            prop_assert_eq!(identify_trips(&with_extra, &p).len(), before);
        }
    }
}
