//! Evacuation detection from daily minimum distances to home.
//!
//! Each study-month day is either *home* (some sighting within the mile
//! threshold), *away* (sightings, all beyond it) or *absent* (no sightings).
//! An away-spell is a maximal run of non-home days. The earliest spell that
//! holds at least one observed away day and overlaps the study window is the
//! evacuation.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::geo::{haversine_m, GeoPoint, METERS_PER_MILE};
use crate::ingest::{DateRange, DeviceTrajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct DailyDistanceSeries {
    pub device_id: String,
    pub month: DateRange,
    /// One entry per day of `month`; `None` when the device was not seen.
    pub min_distance_m: Vec<Option<f64>>,
}

impl DailyDistanceSeries {
    pub fn date(&self, idx: usize) -> NaiveDate {
        self.month.start + chrono::Days::new(idx as u64)
    }

    pub fn observed_days(&self) -> usize {
        self.min_distance_m.iter().filter(|d| d.is_some()).count()
    }
}

pub fn daily_min_distance(traj: &DeviceTrajectory, home: GeoPoint, month: DateRange) -> DailyDistanceSeries {
    let mut series = vec![None; month.num_days()];
    for (date, sightings) in traj.days_in(month) {
        let idx = month.index_of(date).expect("filtered to month");
        series[idx] = sightings
            .iter()
            .map(|s| haversine_m(s.point(), home))
            .min_by(f64::total_cmp);
    }
    DailyDistanceSeries { device_id: traj.device_id.clone(), month, min_distance_m: series }
}

/// True iff any observed day comes within `threshold_m` of home.
pub fn activity_check(series: &DailyDistanceSeries, threshold_m: f64) -> bool {
    series.min_distance_m.iter().flatten().any(|&d| d <= threshold_m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvacuationProfile {
    pub device_id: String,
    pub active: bool,
    pub evacuated: bool,
    pub departure_date: Option<NaiveDate>,
    /// `None` for evacuees never seen home again within the month (censored).
    pub reentry_date: Option<NaiveDate>,
    pub duration_days: Option<i64>,
    pub shelter_distance_mi: Option<f64>,
}

impl EvacuationProfile {
    pub fn inactive(device_id: String) -> Self {
        Self::stayed(device_id, false)
    }

    fn stayed(device_id: String, active: bool) -> Self {
        Self {
            device_id,
            active,
            evacuated: false,
            departure_date: None,
            reentry_date: None,
            duration_days: None,
            shelter_distance_mi: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DayState {
    Home,
    Away,
    Absent,
}

/// An away-spell as an inclusive index range into the series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AwaySpell {
    pub first: usize,
    pub last: usize,
    pub observed_away_days: usize,
}

pub fn away_spells(series: &DailyDistanceSeries, threshold_m: f64) -> Vec<AwaySpell> {
    let states: Vec<DayState> = series
        .min_distance_m
        .iter()
        .map(|d| match d {
            None => DayState::Absent,
            Some(d) if *d <= threshold_m => DayState::Home,
            Some(_) => DayState::Away,
        })
        .collect();
    let mut spells = Vec::new();
    let mut i = 0;
    while i < states.len() {
        if states[i] == DayState::Home {
            i += 1;
            continue;
        }
        let first = i;
        let mut observed = 0;
        while i < states.len() && states[i] != DayState::Home {
            if states[i] == DayState::Away {
                observed += 1;
            }
            i += 1;
        }
        spells.push(AwaySpell { first, last: i - 1, observed_away_days: observed });
    }
    spells
}

/// Classifies a device for the study window. Inactive devices (never within
/// the threshold all month) come back with `active = false`.
pub fn detect_evacuation(series: &DailyDistanceSeries, window: DateRange, threshold_m: f64) -> EvacuationProfile {
    let id = series.device_id.clone();
    if !activity_check(series, threshold_m) {
        return EvacuationProfile::inactive(id);
    }
    let spell = away_spells(series, threshold_m).into_iter().find(|s| {
        s.observed_away_days > 0 && window.overlaps(&DateRange::new(series.date(s.first), series.date(s.last)))
    });
    let Some(spell) = spell else {
        return EvacuationProfile::stayed(id, true);
    };

    let n = series.min_distance_m.len();
    let departure_date = (spell.first > 0).then(|| series.date(spell.first - 1));
    let reentry_date = (spell.last + 1 < n).then(|| series.date(spell.last + 1));
    let duration_days = match (departure_date, reentry_date) {
        (Some(d), Some(r)) => Some((r - d).num_days()),
        _ => None,
    };
    let shelter_m = series.min_distance_m[spell.first..=spell.last]
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    EvacuationProfile {
        device_id: id,
        active: true,
        evacuated: true,
        departure_date,
        reentry_date,
        duration_days,
        shelter_distance_mi: Some(shelter_m / METERS_PER_MILE),
    }
}
