//! Sighting records, validation and per-device trajectory assembly.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::ops::{AddAssign, Range};

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// One timestamped observation of a device.
#[derive(Debug, Clone, PartialEq)]
pub struct SightingRecord {
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub device_id: String,
    pub device_type: u8,
    pub lat: f64,
    pub lon: f64,
    pub accuracy_m: f64,
    pub tz_offset_s: i32,
}

impl SightingRecord {
    pub fn point(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }

    /// Wall-clock seconds at the device's position.
    pub fn local_time(&self) -> i64 {
        self.timestamp + i64::from(self.tz_offset_s)
    }

    pub fn local_day(&self) -> NaiveDate {
        local_day(self.timestamp, self.tz_offset_s)
    }

    /// Seconds since local midnight, in `0..86400`.
    pub fn local_seconds_of_day(&self) -> i64 {
        self.local_time().rem_euclid(SECONDS_PER_DAY)
    }

    /// Renders the record as one delimited input line.
    pub fn to_line(&self, delimiter: char) -> String {
        let d = delimiter;
        format!(
            "{}{d}{}{d}{}{d}{}{d}{}{d}{}{d}{}",
            self.timestamp, self.device_id, self.device_type, self.lat, self.lon, self.accuracy_m, self.tz_offset_s
        )
    }
}

/// Calendar date of `ts + tz_offset_s` read as UTC seconds.
pub fn local_day(ts: i64, tz_offset_s: i32) -> NaiveDate {
    let local = ts + i64::from(tz_offset_s);
    let days = local.div_euclid(SECONDS_PER_DAY);
    DateTime::from_timestamp(days * SECONDS_PER_DAY, 0)
        .map(|dt| dt.date_naive())
        .unwrap_or(NaiveDate::MIN)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
}

pub const FIELD_COUNT: usize = 7;

/// Tab if the line contains one, otherwise comma.
pub fn detect_delimiter(line: &str) -> char {
    if line.contains('\t') {
        '\t'
    } else {
        ','
    }
}

/// A header row is any row whose first field is not an integer timestamp.
pub fn is_header(line: &str) -> bool {
    let delim = detect_delimiter(line);
    let first = line.split(delim).next().unwrap_or("").trim();
    first.parse::<i64>().is_err()
}

pub fn parse_sighting(line: &str) -> Result<SightingRecord, ParseError> {
    parse_sighting_with(line, detect_delimiter(line))
}

pub fn parse_sighting_with(line: &str, delimiter: char) -> Result<SightingRecord, ParseError> {
    let line = line.trim_end_matches(['\r', '\n']);
    let mut fields = [""; FIELD_COUNT];
    let mut count = 0;
    for f in line.split(delimiter) {
        if count < FIELD_COUNT {
            fields[count] = f.trim();
        }
        count += 1;
    }
    if count != FIELD_COUNT {
        return Err(ParseError::MalformedRecord(format!("expected {FIELD_COUNT} fields, found {count}")));
    }
    fn num<T: std::str::FromStr>(name: &str, s: &str) -> Result<T, ParseError> {
        s.parse::<T>()
            .map_err(|_| ParseError::MalformedRecord(format!("{name}: cannot parse {s:?}")))
    }
    let timestamp: i64 = num("timestamp", fields[0])?;
    if fields[1].is_empty() {
        return Err(ParseError::MalformedRecord("empty device id".into()));
    }
    let device_type: u8 = num("device_type", fields[2])?;
    let lat: f64 = num("latitude", fields[3])?;
    let lon: f64 = num("longitude", fields[4])?;
    let accuracy_m: f64 = num("accuracy", fields[5])?;
    let tz_offset_s: i32 = num("tz_offset", fields[6])?;

    if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
        return Err(ParseError::OutOfRange(format!("latitude {lat}")));
    }
    if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
        return Err(ParseError::OutOfRange(format!("longitude {lon}")));
    }
    if !accuracy_m.is_finite() || accuracy_m < 0.0 {
        return Err(ParseError::OutOfRange(format!("accuracy {accuracy_m}")));
    }
    Ok(SightingRecord {
        timestamp,
        device_id: fields[1].to_string(),
        device_type,
        lat,
        lon,
        accuracy_m,
        tz_offset_s,
    })
}

/// Inclusive range of calendar dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn contains_range(&self, other: &DateRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &DateRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn num_days(&self) -> usize {
        ((self.end - self.start).num_days() + 1).max(0) as usize
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        self.start.iter_days().take(self.num_days())
    }

    pub fn index_of(&self, d: NaiveDate) -> Option<usize> {
        self.contains(d).then(|| (d - self.start).num_days() as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        self.min_lat <= lat && lat <= self.max_lat && self.min_lon <= lon && lon <= self.max_lon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    Malformed,
    OutOfRange,
    Accuracy,
    OutsideBoundingBox,
    OutsideDateRange,
    Duplicate,
}

/// Record-level filter applied after parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestFilter {
    pub accuracy_ceiling_m: f64,
    pub bbox: Option<BoundingBox>,
    /// Records are kept when their local day falls in any range. Empty keeps all.
    pub date_ranges: Vec<DateRange>,
}

impl Default for IngestFilter {
    fn default() -> Self {
        Self { accuracy_ceiling_m: 250.0, bbox: None, date_ranges: Vec::new() }
    }
}

impl IngestFilter {
    pub fn check(&self, r: &SightingRecord) -> Result<(), DropReason> {
        if r.accuracy_m > self.accuracy_ceiling_m {
            return Err(DropReason::Accuracy);
        }
        if let Some(b) = &self.bbox {
            if !b.contains(r.lat, r.lon) {
                return Err(DropReason::OutsideBoundingBox);
            }
        }
        if !self.date_ranges.is_empty() {
            let day = r.local_day();
            if !self.date_ranges.iter().any(|dr| dr.contains(day)) {
                return Err(DropReason::OutsideDateRange);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub malformed: u64,
    pub out_of_range: u64,
    pub accuracy: u64,
    pub outside_bbox: u64,
    pub outside_date_range: u64,
    pub duplicate: u64,
}

impl DropCounts {
    pub fn total(&self) -> u64 {
        self.malformed + self.out_of_range + self.accuracy + self.outside_bbox + self.outside_date_range + self.duplicate
    }

    pub fn bump(&mut self, reason: DropReason) {
        self.add(reason, 1);
    }

    pub fn add(&mut self, reason: DropReason, n: u64) {
        let slot = match reason {
            DropReason::Malformed => &mut self.malformed,
            DropReason::OutOfRange => &mut self.out_of_range,
            DropReason::Accuracy => &mut self.accuracy,
            DropReason::OutsideBoundingBox => &mut self.outside_bbox,
            DropReason::OutsideDateRange => &mut self.outside_date_range,
            DropReason::Duplicate => &mut self.duplicate,
        };
        *slot += n;
    }
}

impl AddAssign for DropCounts {
    fn add_assign(&mut self, o: Self) {
        self.malformed += o.malformed;
        self.out_of_range += o.out_of_range;
        self.accuracy += o.accuracy;
        self.outside_bbox += o.outside_bbox;
        self.outside_date_range += o.outside_date_range;
        self.duplicate += o.duplicate;
    }
}

/// Ingest tallies. `records_read == records_kept + dropped.total()` always.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records_read: u64,
    pub records_kept: u64,
    pub dropped: DropCounts,
    pub devices: u64,
}

impl IngestStats {
    pub fn is_conserved(&self) -> bool {
        self.records_read == self.records_kept + self.dropped.total()
    }
}

impl AddAssign for IngestStats {
    fn add_assign(&mut self, o: Self) {
        self.records_read += o.records_read;
        self.records_kept += o.records_kept;
        self.dropped += o.dropped;
        self.devices += o.devices;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaySlice {
    pub date: NaiveDate,
    pub range: Range<usize>,
}

/// Sightings of one device, ordered by local day then timestamp, with one
/// contiguous slice per local day.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceTrajectory {
    pub device_id: String,
    pub sightings: Vec<SightingRecord>,
    pub days: Vec<DaySlice>,
}

pub(crate) fn sort_key(a: &SightingRecord, b: &SightingRecord) -> std::cmp::Ordering {
    a.local_day()
        .cmp(&b.local_day())
        .then(a.timestamp.cmp(&b.timestamp))
        .then(a.lat.total_cmp(&b.lat))
        .then(a.lon.total_cmp(&b.lon))
        .then(a.accuracy_m.total_cmp(&b.accuracy_m))
        .then(a.tz_offset_s.cmp(&b.tz_offset_s))
        .then(a.device_type.cmp(&b.device_type))
}

impl DeviceTrajectory {
    /// Sorts, removes duplicate (timestamp, lat, lon) tuples and indexes days.
    /// Returns the trajectory and the number of duplicates removed.
    pub fn from_records(device_id: String, mut sightings: Vec<SightingRecord>) -> (Self, u64) {
        sightings.sort_by(sort_key);
        let before = sightings.len();
        sightings.dedup_by(|b, a| a.timestamp == b.timestamp && a.lat == b.lat && a.lon == b.lon);
        let removed = (before - sightings.len()) as u64;
        let days = index_days(&sightings);
        (Self { device_id, sightings, days }, removed)
    }

    /// Assumes `sightings` are already in trajectory order.
    pub fn from_sorted(device_id: String, sightings: Vec<SightingRecord>) -> Self {
        let days = index_days(&sightings);
        Self { device_id, sightings, days }
    }

    pub fn days(&self) -> impl Iterator<Item = (NaiveDate, &[SightingRecord])> {
        self.days.iter().map(|d| (d.date, &self.sightings[d.range.clone()]))
    }

    pub fn days_in(&self, range: DateRange) -> impl Iterator<Item = (NaiveDate, &[SightingRecord])> {
        self.days().filter(move |(d, _)| range.contains(*d))
    }

    pub fn day(&self, date: NaiveDate) -> Option<&[SightingRecord]> {
        self.days
            .binary_search_by(|d| d.date.cmp(&date))
            .ok()
            .map(|i| &self.sightings[self.days[i].range.clone()])
    }

    /// Contiguous sightings whose local day is inside `range`.
    pub fn slice_in(&self, range: DateRange) -> &[SightingRecord] {
        let start = self.days.partition_point(|d| d.date < range.start);
        let end = self.days.partition_point(|d| d.date <= range.end);
        if start >= end {
            return &[];
        }
        &self.sightings[self.days[start].range.start..self.days[end - 1].range.end]
    }
}

fn index_days(sightings: &[SightingRecord]) -> Vec<DaySlice> {
    let mut days: Vec<DaySlice> = Vec::new();
    for (i, s) in sightings.iter().enumerate() {
        let d = s.local_day();
        match days.last_mut() {
            Some(last) if last.date == d => last.range.end = i + 1,
            _ => days.push(DaySlice { date: d, range: i..i + 1 }),
        }
    }
    days
}

/// Groups records by device and builds ordered trajectories.
///
/// Records failing `filter` are dropped and counted; the returned
/// trajectories are sorted by device id regardless of input order.
pub fn build_trajectories<I>(records: I, filter: &IngestFilter) -> (Vec<DeviceTrajectory>, IngestStats)
where
    I: IntoIterator<Item = SightingRecord>,
{
    let mut stats = IngestStats::default();
    let mut by_device: BTreeMap<String, Vec<SightingRecord>> = BTreeMap::new();
    for r in records {
        stats.records_read += 1;
        match filter.check(&r) {
            Ok(()) => by_device.entry(r.device_id.clone()).or_default().push(r),
            Err(reason) => stats.dropped.bump(reason),
        }
    }
    let trajectories = assemble(by_device, &mut stats);
    (trajectories, stats)
}

pub(crate) fn assemble(
    by_device: BTreeMap<String, Vec<SightingRecord>>,
    stats: &mut IngestStats,
) -> Vec<DeviceTrajectory> {
    by_device
        .into_iter()
        .map(|(id, recs)| {
            let (t, dups) = DeviceTrajectory::from_records(id, recs);
            stats.dropped.add(DropReason::Duplicate, dups);
            stats.records_kept += t.sightings.len() as u64;
            stats.devices += 1;
            t
        })
        .collect()
}

/// Line-level reader over delimited text: skips a header, auto-detects the
/// delimiter from the first line, and tallies parse failures.
pub struct SightingReader<R> {
    inner: R,
    delimiter: Option<char>,
    line: String,
    pub stats: IngestStats,
}

impl<R: BufRead> SightingReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, delimiter: None, line: String::new(), stats: IngestStats::default() }
    }

    /// Next record passing `filter`, or `None` at end of input.
    pub fn next_kept(&mut self, filter: &IngestFilter) -> std::io::Result<Option<SightingRecord>> {
        loop {
            self.line.clear();
            if self.inner.read_line(&mut self.line)? == 0 {
                return Ok(None);
            }
            let line = self.line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let delim = match self.delimiter {
                Some(d) => d,
                None => {
                    let d = detect_delimiter(line);
                    self.delimiter = Some(d);
                    if is_header(line) {
                        continue;
                    }
                    d
                }
            };
            self.stats.records_read += 1;
            let rec = match parse_sighting_with(line, delim) {
                Ok(r) => r,
                Err(ParseError::MalformedRecord(_)) => {
                    self.stats.dropped.bump(DropReason::Malformed);
                    continue;
                }
                Err(ParseError::OutOfRange(_)) => {
                    self.stats.dropped.bump(DropReason::OutOfRange);
                    continue;
                }
            };
            if let Err(reason) = filter.check(&rec) {
                self.stats.dropped.bump(reason);
                continue;
            }
            return Ok(Some(rec));
        }
    }
}

/// Reads a whole delimited stream into memory and builds trajectories.
pub fn ingest_reader<R: BufRead>(reader: R, filter: &IngestFilter) -> std::io::Result<(Vec<DeviceTrajectory>, IngestStats)> {
    let mut rd = SightingReader::new(reader);
    let mut by_device: BTreeMap<String, Vec<SightingRecord>> = BTreeMap::new();
    while let Some(r) = rd.next_kept(filter)? {
        by_device.entry(r.device_id.clone()).or_default().push(r);
    }
    let mut stats = rd.stats;
    let trajectories = assemble(by_device, &mut stats);
    Ok((trajectories, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROW: &str = "1504068337,e07941996a2ffd303021914e0c12gcf,1,28.43023,-81.60654,5,-14400";

    fn rec(device: &str, ts: i64, lat: f64, lon: f64) -> SightingRecord {
        SightingRecord {
            timestamp: ts,
            device_id: device.into(),
            device_type: 1,
            lat,
            lon,
            accuracy_m: 5.0,
            tz_offset_s: -14400,
        }
    }

    /// Howard Hinnant's days-from-civil inverse.
    fn civil_from_days(z: i64) -> (i64, u32, u32) {
        let z = z + 719_468;
        let era = z.div_euclid(146_097);
        let doe = z - era * 146_097;
        let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
        let y = yoe + era * 400;
        let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
        let mp = (5 * doy + 2) / 153;
        let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
        let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
        (if m <= 2 { y + 1 } else { y }, m, d)
    }

    #[test]
    fn parses_sample_row() {
        let r = parse_sighting(ROW).unwrap();
        assert_eq!(r.timestamp, 1504068337);
        assert_eq!(r.device_id, "e07941996a2ffd303021914e0c12gcf");
        assert_eq!(r.device_type, 1);
        assert_eq!(r.lat, 28.43023);
        assert_eq!(r.lon, -81.60654);
        assert_eq!(r.accuracy_m, 5.0);
        assert_eq!(r.tz_offset_s, -14400);
        let tabbed = ROW.replace(',', "\t");
        assert_eq!(parse_sighting(&tabbed).unwrap(), r);
        assert_eq!(parse_sighting(&r.to_line(',')).unwrap(), r);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(parse_sighting("a,b,c"), Err(ParseError::MalformedRecord(_))));
        assert!(matches!(
            parse_sighting("1504068337,dev,1,91.0,-81.6,5,-14400"),
            Err(ParseError::OutOfRange(_))
        ));
        assert!(matches!(
            parse_sighting("1504068337,dev,1,28.0,-181.0,5,-14400"),
            Err(ParseError::OutOfRange(_))
        ));
        assert!(matches!(
            parse_sighting("1504068337,dev,1,28.0,-81.0,-1,-14400"),
            Err(ParseError::OutOfRange(_))
        ));
        assert!(matches!(
            parse_sighting("15040x,dev,1,28.0,-81.0,5,-14400"),
            Err(ParseError::MalformedRecord(_))
        ));
        assert!(matches!(
            parse_sighting("1,dev,1,28.0,-81.0,5,-14400,extra"),
            Err(ParseError::MalformedRecord(_))
        ));
    }

    #[test]
    fn local_day_matches_civil_oracle() {
        let d = local_day(1504068337, -14400);
        assert_eq!(d, NaiveDate::from_ymd_opt(2017, 8, 30).unwrap());
        let (y, m, dd) = civil_from_days((1504068337i64 - 14400).div_euclid(86400));
        assert_eq!((y, m, dd), (2017, 8, 30));
        assert_eq!(local_day(0, 0), NaiveDate::from_ymd_opt(1970, 1, 1).unwrap());
        assert_eq!(local_day(86399, 0), NaiveDate::from_ymd_opt(1970, 1, 1).unwrap());
        assert_eq!(local_day(86400, 0), NaiveDate::from_ymd_opt(1970, 1, 2).unwrap());
        assert_eq!(local_day(-1, 0), NaiveDate::from_ymd_opt(1969, 12, 31).unwrap());
        for z in (-50_000i64..50_000).step_by(97) {
            let (y, m, dd) = civil_from_days(z);
            assert_eq!(local_day(z * 86400 + 1234, 0), NaiveDate::from_ymd_opt(y as i32, m, dd).unwrap());
        }
    }

    #[test]
    fn sorts_and_dedups() {
        let recs = vec![
            rec("a", 300, 1.0, 1.0),
            rec("a", 100, 1.0, 1.0),
            rec("a", 200, 1.0, 1.0),
            rec("a", 200, 1.0, 1.0),
            rec("a", 200, 1.5, 1.0),
        ];
        let (t, stats) = build_trajectories(recs, &IngestFilter::default());
        assert_eq!(t.len(), 1);
        let ts: Vec<i64> = t[0].sightings.iter().map(|s| s.timestamp).collect();
        assert_eq!(ts, vec![100, 200, 200, 300]);
        assert_eq!(stats.dropped.duplicate, 1);
        assert!(stats.is_conserved());
    }

    #[test]
    fn accuracy_ceiling_drops() {
        let mut r = rec("a", 1, 1.0, 1.0);
        r.accuracy_m = 500.0;
        let (t, stats) = build_trajectories(vec![r, rec("a", 2, 1.0, 1.0)], &IngestFilter::default());
        assert_eq!(t[0].sightings.len(), 1);
        assert_eq!(stats.dropped.accuracy, 1);
        let mut edge = rec("a", 3, 1.0, 1.0);
        edge.accuracy_m = 250.0;
        assert!(IngestFilter::default().check(&edge).is_ok());
    }

    #[test]
    fn bbox_and_date_filters() {
        let filter = IngestFilter {
            accuracy_ceiling_m: 250.0,
            bbox: Some(BoundingBox { min_lat: 0.0, max_lat: 2.0, min_lon: 0.0, max_lon: 2.0 }),
            date_ranges: vec![DateRange::new(
                NaiveDate::from_ymd_opt(1970, 1, 1).unwrap(),
                NaiveDate::from_ymd_opt(1970, 1, 1).unwrap(),
            )],
        };
        assert_eq!(filter.check(&rec("a", 20_000, 1.0, 1.0)), Ok(()));
        assert_eq!(filter.check(&rec("a", 20_000, 3.0, 1.0)), Err(DropReason::OutsideBoundingBox));
        assert_eq!(filter.check(&rec("a", 200_000, 1.0, 1.0)), Err(DropReason::OutsideDateRange));
    }

    #[test]
    fn interleaved_devices_conserve_counts() {
        let mut recs = Vec::new();
        for i in 0..10_000i64 {
            recs.push(rec("b", 1_504_000_000 + 7 * i, 28.0, -81.0));
            let mut r = rec("a", 1_504_000_000 + 11 * i, 28.0, -81.0);
            if i % 10 == 0 {
                r.accuracy_m = 1000.0;
            }
            recs.push(r);
        }
        let (t, stats) = build_trajectories(recs, &IngestFilter::default());
        assert_eq!(t.len(), 2);
        assert_eq!(stats.records_read, 20_000);
        assert_eq!(stats.dropped.accuracy, 1_000);
        assert_eq!(stats.records_kept, 19_000);
        assert!(stats.is_conserved());
        let per_device: u64 = t.iter().map(|t| t.sightings.len() as u64).sum();
        assert_eq!(per_device, stats.records_kept);
    }

    #[test]
    fn day_slices_cover_every_sighting() {
        let recs: Vec<_> = (0..50).map(|i| rec("a", 1_504_000_000 + i * 7_000, 28.0, -81.0)).collect();
        let (t, _) = build_trajectories(recs, &IngestFilter::default());
        let t = &t[0];
        let mut covered = 0;
        for (date, slice) in t.days() {
            assert!(slice.iter().all(|s| s.local_day() == date));
            covered += slice.len();
        }
        assert_eq!(covered, t.sightings.len());
        let first = t.days[0].date;
        assert_eq!(t.day(first).unwrap().len(), t.days[0].range.len());
        let range = DateRange::new(first, first.succ_opt().unwrap());
        assert_eq!(t.slice_in(range).len(), t.days[0].range.len() + t.days[1].range.len());
    }

    #[test]
    fn reader_skips_header_and_counts() {
        let text = format!(
            "timestamp\tdevice\ttype\tlat\tlon\tacc\ttz\n{}\n{}\nbad\trow\n",
            ROW.replace(',', "\t"),
            "1504068342\te0\t1\t95.0\t-81.6\t25\t-14400"
        );
        let (t, stats) = ingest_reader(text.as_bytes(), &IngestFilter::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(stats.records_read, 3);
        assert_eq!(stats.dropped.out_of_range, 1);
        assert_eq!(stats.dropped.malformed, 1);
        assert!(stats.is_conserved());
    }
}
