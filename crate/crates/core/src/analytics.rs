//! Aggregate tables over evacuation profiles joined with device context.
//!
//! Every table is built from [`Aggregates`], a set of counters that can be
//! filled shard by shard and merged; merging is associative and commutative,
//! so the result does not depend on how devices were partitioned.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::NaiveDate;
use serde::Serialize;

use crate::enrich::{DeviceContext, ElevationBin};
use crate::evacuation::EvacuationProfile;
use crate::geo::OrderType;

/// Counts keyed by bucket, with share-of-total helpers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally<K: Ord> {
    counts: BTreeMap<K, u64>,
}

impl<K: Ord> Default for Tally<K> {
    fn default() -> Self {
        Self { counts: BTreeMap::new() }
    }
}

impl<K: Ord + Clone> Tally<K> {
    pub fn add(&mut self, key: K) {
        *self.counts.entry(key).or_insert(0) += 1;
    }

    pub fn add_n(&mut self, key: K, n: u64) {
        *self.counts.entry(key).or_insert(0) += n;
    }

    pub fn merge(&mut self, other: &Tally<K>) {
        for (k, n) in &other.counts {
            self.add_n(k.clone(), *n);
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn count(&self, key: &K) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    /// Percent of the total; 0 when the tally is empty.
    pub fn percent(&self, key: &K) -> f64 {
        percent(self.count(key), self.total())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, u64)> {
        self.counts.iter().map(|(k, n)| (k, *n))
    }
}

pub fn percent(count: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 * 100.0 / total as f64
    }
}

/// Column of the decision cross-tab.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OrderGroup {
    Order(OrderType),
    All,
}

impl OrderGroup {
    pub const COLUMNS: [OrderGroup; 4] = [
        OrderGroup::Order(OrderType::None),
        OrderGroup::Order(OrderType::Voluntary),
        OrderGroup::Order(OrderType::Mandatory),
        OrderGroup::All,
    ];
}

impl fmt::Display for OrderGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderGroup::Order(o) => o.fmt(f),
            OrderGroup::All => f.write_str("all"),
        }
    }
}

/// Evacuated / not evacuated by order group, with column percentages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CrossTab {
    /// `[none, voluntary, mandatory]`.
    pub evacuated: [u64; 3],
    pub not_evacuated: [u64; 3],
}

impl CrossTab {
    pub fn from_counts(evacuated: [u64; 3], not_evacuated: [u64; 3]) -> Self {
        Self { evacuated, not_evacuated }
    }

    fn column(&self, g: OrderGroup) -> (u64, u64) {
        match g {
            OrderGroup::Order(o) => (self.evacuated[o.code() as usize], self.not_evacuated[o.code() as usize]),
            OrderGroup::All => (self.evacuated.iter().sum(), self.not_evacuated.iter().sum()),
        }
    }

    pub fn count(&self, evacuated: bool, g: OrderGroup) -> u64 {
        let (e, n) = self.column(g);
        if evacuated {
            e
        } else {
            n
        }
    }

    pub fn column_total(&self, g: OrderGroup) -> u64 {
        let (e, n) = self.column(g);
        e + n
    }

    pub fn percent(&self, evacuated: bool, g: OrderGroup) -> f64 {
        percent(self.count(evacuated, g), self.column_total(g))
    }

    pub fn merge(&mut self, o: &CrossTab) {
        for i in 0..3 {
            self.evacuated[i] += o.evacuated[i];
            self.not_evacuated[i] += o.not_evacuated[i];
        }
    }

    pub fn rows(&self) -> Vec<CrossTabRow> {
        let mut rows = Vec::new();
        for (label, evac) in [("evacuated", true), ("not_evacuated", false), ("total", false)] {
            for g in OrderGroup::COLUMNS {
                let total = self.column_total(g);
                let (count, pct) = if label == "total" {
                    (total, if total == 0 { 0.0 } else { 100.0 })
                } else {
                    (self.count(evac, g), self.percent(evac, g))
                };
                rows.push(CrossTabRow {
                    decision: label,
                    order_group: g.to_string(),
                    count,
                    percent: pct,
                    note: if total == 0 { "empty column" } else { "" },
                });
            }
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossTabRow {
    pub decision: &'static str,
    pub order_group: String,
    pub count: u64,
    pub percent: f64,
    pub note: &'static str,
}

/// Bucket of a departure or reentry distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DayBucket {
    /// Departure unknown: the spell began on the first day of the month.
    BeforeMonth,
    Day(NaiveDate),
    /// Reentry not observed within the month.
    Censored,
}

impl fmt::Display for DayBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DayBucket::BeforeMonth => f.write_str("before_month"),
            DayBucket::Day(d) => write!(f, "{d}"),
            DayBucket::Censored => f.write_str("censored"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DateField {
    Departure,
    Reentry,
}

fn day_bucket(p: &EvacuationProfile, field: DateField) -> DayBucket {
    match field {
        DateField::Departure => p.departure_date.map_or(DayBucket::BeforeMonth, DayBucket::Day),
        DateField::Reentry => p.reentry_date.map_or(DayBucket::Censored, DayBucket::Day),
    }
}

/// Shelter-distance bins, right-closed: a distance equal to an edge falls in
/// the bin ending there. The last bin is open-ended.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceBins {
    pub edges_mi: Vec<f64>,
}

impl Default for DistanceBins {
    fn default() -> Self {
        Self { edges_mi: vec![20.0, 40.0, 60.0, 80.0, 100.0] }
    }
}

impl DistanceBins {
    pub fn index(&self, miles: f64) -> usize {
        self.edges_mi.iter().position(|&e| miles <= e).unwrap_or(self.edges_mi.len())
    }

    pub fn label(&self, idx: usize) -> String {
        let fmt = |v: f64| format!("{v}");
        match idx {
            0 => format!("1-{}", fmt(self.edges_mi[0])),
            i if i == self.edges_mi.len() => format!(">{}", fmt(self.edges_mi[i - 1])),
            i => format!("{}-{}", fmt(self.edges_mi[i - 1]), fmt(self.edges_mi[i])),
        }
    }

    pub fn len(&self) -> usize {
        self.edges_mi.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DurationBucket {
    Days(i64),
    /// Departure or reentry unknown.
    Censored,
}

impl fmt::Display for DurationBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DurationBucket::Days(d) => write!(f, "{d}"),
            DurationBucket::Censored => f.write_str("censored"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountyAccumulator {
    pub active: u64,
    pub evacuated: u64,
    pub shelter_mi: Vec<f64>,
    pub duration_sum: i64,
    pub durations: u64,
    pub censored: u64,
}

impl CountyAccumulator {
    fn merge(&mut self, o: &CountyAccumulator) {
        self.active += o.active;
        self.evacuated += o.evacuated;
        self.shelter_mi.extend_from_slice(&o.shelter_mi);
        self.duration_sum += o.duration_sum;
        self.durations += o.durations;
        self.censored += o.censored;
    }
}

pub const UNASSIGNED_COUNTY: &str = "unassigned";

/// Mergeable accumulators behind every report table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregates {
    pub crosstab: CrossTab,
    pub departure: Tally<DayBucket>,
    pub reentry: Tally<DayBucket>,
    /// Order date → departure bucket, ordered evacuees only.
    pub departure_by_order_date: BTreeMap<NaiveDate, Tally<DayBucket>>,
    /// Per order group, shelter-distance bin index.
    pub shelter: BTreeMap<OrderType, Tally<usize>>,
    pub duration: BTreeMap<OrderType, Tally<DurationBucket>>,
    pub county: BTreeMap<String, CountyAccumulator>,
    /// (elevation bin, order group) → (active, evacuated).
    pub elevation: BTreeMap<(ElevationBin, OrderType), (u64, u64)>,
    pub no_elevation: u64,
    /// Active profiles without a matching context.
    pub missing_context: u64,
    pub inactive: u64,
}

impl Aggregates {
    pub fn add(&mut self, p: &EvacuationProfile, c: &DeviceContext, bins: &DistanceBins) {
        if !p.active {
            self.inactive += 1;
            return;
        }
        let g = c.order_type;
        let gi = g.code() as usize;
        if p.evacuated {
            self.crosstab.evacuated[gi] += 1;
        } else {
            self.crosstab.not_evacuated[gi] += 1;
        }

        let county = self.county.entry(c.county_id.clone().unwrap_or_else(|| UNASSIGNED_COUNTY.into())).or_default();
        county.active += 1;

        match c.elevation_bin {
            Some(bin) => {
                let cell = self.elevation.entry((bin, g)).or_default();
                cell.0 += 1;
                cell.1 += u64::from(p.evacuated);
            }
            None => self.no_elevation += 1,
        }

        if !p.evacuated {
            return;
        }
        county.evacuated += 1;
        let dep = day_bucket(p, DateField::Departure);
        self.departure.add(dep);
        self.reentry.add(day_bucket(p, DateField::Reentry));
        if let (true, Some(od)) = (g != OrderType::None, c.order_date) {
            self.departure_by_order_date.entry(od).or_default().add(dep);
        }
        if let Some(mi) = p.shelter_distance_mi {
            self.shelter.entry(g).or_default().add(bins.index(mi));
            county.shelter_mi.push(mi);
        }
        let dur = p.duration_days.map_or(DurationBucket::Censored, DurationBucket::Days);
        self.duration.entry(g).or_default().add(dur);
        match p.duration_days {
            Some(d) => {
                county.duration_sum += d;
                county.durations += 1;
            }
            None => county.censored += 1,
        }
    }

    pub fn merge(&mut self, o: &Aggregates) {
        self.crosstab.merge(&o.crosstab);
        self.departure.merge(&o.departure);
        self.reentry.merge(&o.reentry);
        for (k, t) in &o.departure_by_order_date {
            self.departure_by_order_date.entry(*k).or_default().merge(t);
        }
        for (k, t) in &o.shelter {
            self.shelter.entry(*k).or_default().merge(t);
        }
        for (k, t) in &o.duration {
            self.duration.entry(*k).or_default().merge(t);
        }
        for (k, c) in &o.county {
            self.county.entry(k.clone()).or_default().merge(c);
        }
        for (k, (a, e)) in &o.elevation {
            let cell = self.elevation.entry(*k).or_default();
            cell.0 += a;
            cell.1 += e;
        }
        self.no_elevation += o.no_elevation;
        self.missing_context += o.missing_context;
        self.inactive += o.inactive;
    }

    pub fn evacuees(&self) -> u64 {
        self.crosstab.evacuated.iter().sum()
    }

    pub fn active(&self) -> u64 {
        self.crosstab.column_total(OrderGroup::All)
    }
}

/// Joins profiles to contexts on device id and accumulates every table.
pub fn aggregate(profiles: &[EvacuationProfile], contexts: &[DeviceContext], bins: &DistanceBins) -> Aggregates {
    let by_id: HashMap<&str, &DeviceContext> = contexts.iter().map(|c| (c.device_id.as_str(), c)).collect();
    let mut agg = Aggregates::default();
    for p in profiles {
        match by_id.get(p.device_id.as_str()) {
            Some(c) => agg.add(p, c, bins),
            None if p.active => agg.missing_context += 1,
            None => agg.inactive += 1,
        }
    }
    agg
}

pub fn decision_by_order(profiles: &[EvacuationProfile], contexts: &[DeviceContext]) -> CrossTab {
    aggregate(profiles, contexts, &DistanceBins::default()).crosstab
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShareRow {
    pub bucket: String,
    pub count: u64,
    pub percent: f64,
}

fn share_rows<K: Ord + Clone + fmt::Display>(t: &Tally<K>) -> Vec<ShareRow> {
    t.iter()
        .map(|(k, n)| ShareRow { bucket: k.to_string(), count: n, percent: t.percent(k) })
        .collect()
}

pub fn date_distribution(agg: &Aggregates, field: DateField) -> Vec<ShareRow> {
    share_rows(match field {
        DateField::Departure => &agg.departure,
        DateField::Reentry => &agg.reentry,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixRow {
    pub order_date: NaiveDate,
    pub departure: String,
    pub count: u64,
    pub percent: f64,
}

/// Departure distribution per order-issue date; each row sums to 100.
pub fn departure_by_order_date(agg: &Aggregates) -> Vec<MatrixRow> {
    agg.departure_by_order_date
        .iter()
        .flat_map(|(od, t)| {
            t.iter().map(move |(k, n)| MatrixRow {
                order_date: *od,
                departure: k.to_string(),
                count: n,
                percent: t.percent(k),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupShareRow {
    pub order_group: String,
    pub bucket: String,
    pub count: u64,
    pub percent: f64,
}

fn with_all<K: Ord + Clone>(per_group: &BTreeMap<OrderType, Tally<K>>) -> Vec<(OrderGroup, Tally<K>)> {
    let mut all = Tally::default();
    let mut out = Vec::new();
    for g in OrderType::ALL {
        let t = per_group.get(&g).cloned().unwrap_or_default();
        all.merge(&t);
        out.push((OrderGroup::Order(g), t));
    }
    out.push((OrderGroup::All, all));
    out
}

/// Shelter-distance shares per order group; every bin is listed.
pub fn shelter_distance_distribution(agg: &Aggregates, bins: &DistanceBins) -> Vec<GroupShareRow> {
    with_all(&agg.shelter)
        .into_iter()
        .flat_map(|(g, t)| {
            (0..bins.len())
                .map(|i| GroupShareRow {
                    order_group: g.to_string(),
                    bucket: bins.label(i),
                    count: t.count(&i),
                    percent: t.percent(&i),
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Duration shares per order group over all evacuees of the group, with
/// censored durations as their own bucket.
pub fn duration_distribution(agg: &Aggregates) -> Vec<GroupShareRow> {
    with_all(&agg.duration)
        .into_iter()
        .flat_map(|(g, t)| {
            t.iter()
                .map(|(k, n)| GroupShareRow { order_group: g.to_string(), bucket: k.to_string(), count: n, percent: t.percent(k) })
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountyRow {
    pub county_id: String,
    pub active_devices: u64,
    pub evacuees: u64,
    pub evacuation_rate: f64,
    pub median_shelter_mi: Option<f64>,
    pub mean_duration_days: Option<f64>,
    pub durations_counted: u64,
    pub censored_durations: u64,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

pub fn county_aggregates(agg: &Aggregates) -> Vec<CountyRow> {
    agg.county
        .iter()
        .map(|(id, c)| CountyRow {
            county_id: id.clone(),
            active_devices: c.active,
            evacuees: c.evacuated,
            evacuation_rate: percent(c.evacuated, c.active),
            median_shelter_mi: median(&c.shelter_mi),
            mean_duration_days: (c.durations > 0).then(|| c.duration_sum as f64 / c.durations as f64),
            durations_counted: c.durations,
            censored_durations: c.censored,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElevationRow {
    pub elevation_bin: String,
    pub order_group: String,
    pub active_devices: u64,
    pub evacuees: u64,
    pub evacuation_rate: f64,
}

/// Evacuation percent for every (elevation bin × order group) cell.
pub fn elevation_by_order_rates(agg: &Aggregates) -> Vec<ElevationRow> {
    let mut rows = Vec::new();
    for bin in ElevationBin::ALL {
        for g in OrderType::ALL {
            let (a, e) = agg.elevation.get(&(bin, g)).copied().unwrap_or_default();
            rows.push(ElevationRow {
                elevation_bin: bin.to_string(),
                order_group: g.to_string(),
                active_devices: a,
                evacuees: e,
                evacuation_rate: percent(e, a),
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sept(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 9, d).unwrap()
    }

    fn ctx(id: &str, order: OrderType, county: &str, bin: Option<ElevationBin>) -> DeviceContext {
        DeviceContext {
            device_id: id.into(),
            county_id: Some(county.into()),
            zone_id: Some(1),
            order_type: order,
            order_date: (order != OrderType::None).then(|| sept(8)),
            elevation_m: bin.map(|_| 5.0),
            elevation_bin: bin,
            tract_id: None,
            median_age: None,
            median_income: None,
            vehicle_availability_pct: None,
            race_white_frac: None,
        }
    }

    fn evac(id: &str, dep: Option<u32>, re: Option<u32>, mi: f64) -> EvacuationProfile {
        let departure_date = dep.map(sept);
        let reentry_date = re.map(sept);
        EvacuationProfile {
            device_id: id.into(),
            active: true,
            evacuated: true,
            departure_date,
            reentry_date,
            duration_days: departure_date.zip(reentry_date).map(|(d, r)| (r - d).num_days()),
            shelter_distance_mi: Some(mi),
        }
    }

    fn stay(id: &str) -> EvacuationProfile {
        EvacuationProfile {
            device_id: id.into(),
            active: true,
            evacuated: false,
            departure_date: None,
            reentry_date: None,
            duration_days: None,
            shelter_distance_mi: None,
        }
    }

    #[test]
    fn crosstab_percentages() {
        let t = CrossTab::from_counts([187285, 38524, 72628], [380547, 75868, 52771]);
        let m = OrderGroup::Order(OrderType::Mandatory);
        assert!((t.percent(true, m) - 57.92).abs() < 0.01);
        assert!((t.percent(false, m) - 42.08).abs() < 0.01);
        assert_eq!(t.column_total(OrderGroup::All), 807623);
        for g in OrderGroup::COLUMNS {
            assert!((t.percent(true, g) + t.percent(false, g) - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_column_is_flagged() {
        let t = CrossTab::from_counts([5, 0, 1], [5, 0, 1]);
        let v = OrderGroup::Order(OrderType::Voluntary);
        assert_eq!(t.percent(true, v), 0.0);
        let rows = t.rows();
        assert!(rows.iter().filter(|r| r.order_group == "voluntary").all(|r| r.note == "empty column"));
        assert!(rows.iter().filter(|r| r.order_group == "none").all(|r| r.note.is_empty()));
    }

    #[test]
    fn planted_forty_percent_everywhere() {
        let mut profiles = Vec::new();
        let mut contexts = Vec::new();
        for (gi, g) in OrderType::ALL.iter().enumerate() {
            for i in 0..250 {
                let id = format!("{gi}-{i}");
                profiles.push(if i % 5 < 2 { evac(&id, Some(8), Some(12), 30.0) } else { stay(&id) });
                contexts.push(ctx(&id, *g, "X", Some(ElevationBin::Low)));
            }
        }
        let t = decision_by_order(&profiles, &contexts);
        for g in OrderGroup::COLUMNS {
            assert!((t.percent(true, g) - 40.0).abs() < 1e-12);
        }
    }

    #[test]
    fn departure_distribution_and_closure() {
        let mut profiles = Vec::new();
        let mut contexts = Vec::new();
        for i in 0..100 {
            let id = i.to_string();
            let dep = match i % 4 {
                0 => 8,
                3 => 10,
                _ => 9,
            };
            profiles.push(evac(&id, Some(dep), if i % 10 == 0 { None } else { Some(14) }, 50.0));
            contexts.push(ctx(&id, OrderType::Mandatory, "X", None));
        }
        let agg = aggregate(&profiles, &contexts, &DistanceBins::default());
        assert_eq!(agg.departure.percent(&DayBucket::Day(sept(8))), 25.0);
        assert_eq!(agg.departure.percent(&DayBucket::Day(sept(9))), 50.0);
        assert_eq!(agg.departure.percent(&DayBucket::Day(sept(10))), 25.0);
        assert_eq!(agg.reentry.percent(&DayBucket::Censored), 10.0);
        for field in [DateField::Departure, DateField::Reentry] {
            let sum: f64 = date_distribution(&agg, field).iter().map(|r| r.percent).sum();
            assert!((sum - 100.0).abs() < 0.01);
        }
    }

    #[test]
    fn all_depart_same_day() {
        let profiles: Vec<_> = (0..7).map(|i| evac(&i.to_string(), Some(9), Some(11), 5.0)).collect();
        let contexts: Vec<_> = (0..7).map(|i| ctx(&i.to_string(), OrderType::Mandatory, "X", None)).collect();
        let agg = aggregate(&profiles, &contexts, &DistanceBins::default());
        let rows = date_distribution(&agg, DateField::Departure);
        assert_eq!(rows, vec![ShareRow { bucket: "2017-09-09".into(), count: 7, percent: 100.0 }]);
        let m = departure_by_order_date(&agg);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].order_date, m[0].percent), (sept(8), 100.0));
    }

    #[test]
    fn distance_bins_right_closed() {
        let b = DistanceBins::default();
        assert_eq!(b.index(10.0), 0);
        assert_eq!(b.index(20.0), 0);
        assert_eq!(b.index(20.0001), 1);
        assert_eq!(b.index(100.0), 4);
        assert_eq!(b.index(250.0), 5);
        assert_eq!(b.label(0), "1-20");
        assert_eq!(b.label(2), "40-60");
        assert_eq!(b.label(5), ">100");
    }

    #[test]
    fn shelter_and_duration_tables() {
        let profiles: Vec<_> = (0..10)
            .map(|i| evac(&i.to_string(), Some(8), if i < 8 { Some(11) } else { None }, 10.0))
            .collect();
        let contexts: Vec<_> = (0..10).map(|i| ctx(&i.to_string(), OrderType::Voluntary, "X", None)).collect();
        let agg = aggregate(&profiles, &contexts, &DistanceBins::default());
        let shelter = shelter_distance_distribution(&agg, &DistanceBins::default());
        let vol_first = shelter.iter().find(|r| r.order_group == "voluntary" && r.bucket == "1-20").unwrap();
        assert_eq!(vol_first.percent, 100.0);
        let dur = duration_distribution(&agg);
        let spike = dur.iter().find(|r| r.order_group == "voluntary" && r.bucket == "3").unwrap();
        let censored = dur.iter().find(|r| r.order_group == "voluntary" && r.bucket == "censored").unwrap();
        assert_eq!(spike.count + censored.count, 10);
        assert_eq!(censored.count, 2);
    }

    #[test]
    fn county_medians_by_hand() {
        let profiles = vec![
            evac("a", Some(8), Some(11), 10.0),
            evac("b", Some(8), Some(13), 30.0),
            evac("c", Some(8), Some(10), 20.0),
            stay("d"),
            evac("e", Some(7), Some(12), 100.0),
            evac("f", Some(7), None, 50.0),
        ];
        let contexts = vec![
            ctx("a", OrderType::Mandatory, "North", None),
            ctx("b", OrderType::Mandatory, "North", None),
            ctx("c", OrderType::Mandatory, "North", None),
            ctx("d", OrderType::Mandatory, "North", None),
            ctx("e", OrderType::None, "South", None),
            DeviceContext { county_id: None, ..ctx("f", OrderType::None, "", None) },
        ];
        let rows = county_aggregates(&aggregate(&profiles, &contexts, &DistanceBins::default()));
        let north = rows.iter().find(|r| r.county_id == "North").unwrap();
        assert_eq!((north.active_devices, north.evacuees), (4, 3));
        assert_eq!(north.median_shelter_mi, Some(20.0));
        assert!((north.mean_duration_days.unwrap() - (3.0 + 5.0 + 2.0) / 3.0).abs() < 1e-12);
        assert_eq!(north.evacuation_rate, 75.0);
        let south = rows.iter().find(|r| r.county_id == "South").unwrap();
        assert_eq!(south.median_shelter_mi, Some(100.0));
        let un = rows.iter().find(|r| r.county_id == UNASSIGNED_COUNTY).unwrap();
        assert_eq!((un.censored_durations, un.mean_duration_days), (1, None));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    #[test]
    fn elevation_cells() {
        let profiles: Vec<_> = (0..9).map(|i| evac(&i.to_string(), Some(8), Some(10), 5.0)).collect();
        let contexts: Vec<_> = (0..9)
            .map(|i| ctx(&i.to_string(), OrderType::ALL[i % 3], "X", Some(ElevationBin::ALL[i / 3])))
            .collect();
        let rows = elevation_by_order_rates(&aggregate(&profiles, &contexts, &DistanceBins::default()));
        assert_eq!(rows.len(), 9);
        assert!(rows.iter().all(|r| r.evacuation_rate == 100.0 && r.active_devices == 1));
    }

    #[test]
    fn merge_is_partition_independent() {
        let mut profiles = Vec::new();
        let mut contexts = Vec::new();
        for i in 0..60u32 {
            let id = i.to_string();
            profiles.push(match i % 3 {
                0 => stay(&id),
                1 => evac(&id, Some(4 + i % 6), Some(14 + i % 5), 3.0 + i as f64 * 2.5),
                _ => evac(&id, Some(5 + i % 4), None, 120.0 - i as f64),
            });
            contexts.push(ctx(&id, OrderType::ALL[(i / 3 % 3) as usize], ["A", "B"][(i % 2) as usize], Some(ElevationBin::ALL[(i % 3) as usize])));
        }
        let bins = DistanceBins::default();
        let whole = aggregate(&profiles, &contexts, &bins);
        let mut merged = aggregate(&profiles[40..], &contexts, &bins);
        merged.merge(&aggregate(&profiles[..15], &contexts, &bins));
        merged.merge(&aggregate(&profiles[15..40], &contexts, &bins));
        assert_eq!(whole.crosstab, merged.crosstab);
        assert_eq!(whole.departure, merged.departure);
        assert_eq!(whole.shelter, merged.shelter);
        assert_eq!(whole.elevation, merged.elevation);
        assert_eq!(county_aggregates(&whole), county_aggregates(&merged));
    }
}
