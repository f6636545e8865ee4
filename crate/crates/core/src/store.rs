//! On-disk trajectory store, sharded by device.
//!
//! Building is an external sort. The input is streamed once; kept records
//! are buffered up to a fixed count, sorted by (shard, device, time) and
//! written out as a run file. Each shard is then produced by a k-way merge
//! of its section in every run, emitting one device at a time. Memory is the
//! run buffer plus, per worker, one record per run and one trajectory.
//! Readers likewise stream one device at a time.
//!
//! Shard file: magic `EVTRAJ01`, then per device
//! `u32 id_len, id, u32 n, ts i64×n, lat f64×n, lon f64×n, acc f64×n,
//! tz i32×n, type u8×n`, little-endian.

use std::cmp::{Ordering, Reverse};
use std::collections::hash_map::DefaultHasher;
use std::collections::BinaryHeap;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::InputError;
use crate::ingest::{sort_key, DeviceTrajectory, DropReason, IngestFilter, IngestStats, SightingReader, SightingRecord};

const MAGIC: &[u8; 8] = b"EVTRAJ01";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub file: String,
    pub devices: u64,
    pub sightings: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreIndex {
    pub shards: Vec<ShardInfo>,
    /// Sightings in the largest single trajectory.
    pub max_device_sightings: u64,
}

impl StoreIndex {
    pub fn devices(&self) -> u64 {
        self.shards.iter().map(|s| s.devices).sum()
    }

    pub fn sightings(&self) -> u64 {
        self.shards.iter().map(|s| s.sightings).sum()
    }
}

pub fn shard_of(device_id: &str, shards: usize) -> usize {
    let mut h = DefaultHasher::new();
    device_id.hash(&mut h);
    (h.finish() % shards as u64) as usize
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> InputError + '_ {
    move |e| InputError::io(path, e)
}

fn corrupt(path: &Path, msg: impl Into<String>) -> InputError {
    InputError::invalid("trajectory store", format!("{}: {}", path.display(), msg.into()))
}

fn write_spill<W: Write>(w: &mut W, r: &SightingRecord) -> io::Result<()> {
    let id = r.device_id.as_bytes();
    w.write_u32::<LE>(id.len() as u32)?;
    w.write_all(id)?;
    w.write_i64::<LE>(r.timestamp)?;
    w.write_f64::<LE>(r.lat)?;
    w.write_f64::<LE>(r.lon)?;
    w.write_f64::<LE>(r.accuracy_m)?;
    w.write_i32::<LE>(r.tz_offset_s)?;
    w.write_u8(r.device_type)
}

fn read_spill<R: Read>(r: &mut R) -> io::Result<Option<SightingRecord>> {
    let len = match r.read_u32::<LE>() {
        Ok(n) => n as usize,
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut id = vec![0; len];
    r.read_exact(&mut id)?;
    let device_id = String::from_utf8(id).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    Ok(Some(SightingRecord {
        timestamp: r.read_i64::<LE>()?,
        lat: r.read_f64::<LE>()?,
        lon: r.read_f64::<LE>()?,
        accuracy_m: r.read_f64::<LE>()?,
        tz_offset_s: r.read_i32::<LE>()?,
        device_type: r.read_u8()?,
        device_id,
    }))
}

fn write_block<W: Write>(w: &mut W, t: &DeviceTrajectory) -> io::Result<()> {
    let id = t.device_id.as_bytes();
    w.write_u32::<LE>(id.len() as u32)?;
    w.write_all(id)?;
    w.write_u32::<LE>(t.sightings.len() as u32)?;
    for s in &t.sightings {
        w.write_i64::<LE>(s.timestamp)?;
    }
    for s in &t.sightings {
        w.write_f64::<LE>(s.lat)?;
    }
    for s in &t.sightings {
        w.write_f64::<LE>(s.lon)?;
    }
    for s in &t.sightings {
        w.write_f64::<LE>(s.accuracy_m)?;
    }
    for s in &t.sightings {
        w.write_i32::<LE>(s.tz_offset_s)?;
    }
    for s in &t.sightings {
        w.write_u8(s.device_type)?;
    }
    Ok(())
}

fn read_block<R: Read>(r: &mut R) -> io::Result<Option<DeviceTrajectory>> {
    let len = match r.read_u32::<LE>() {
        Ok(n) => n as usize,
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut id = vec![0; len];
    r.read_exact(&mut id)?;
    let device_id = String::from_utf8(id).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let n = r.read_u32::<LE>()? as usize;
    let mut ts = vec![0i64; n];
    let mut lat = vec![0f64; n];
    let mut lon = vec![0f64; n];
    let mut acc = vec![0f64; n];
    let mut tz = vec![0i32; n];
    let mut ty = vec![0u8; n];
    r.read_i64_into::<LE>(&mut ts)?;
    r.read_f64_into::<LE>(&mut lat)?;
    r.read_f64_into::<LE>(&mut lon)?;
    r.read_f64_into::<LE>(&mut acc)?;
    r.read_i32_into::<LE>(&mut tz)?;
    r.read_exact(&mut ty)?;
    let sightings = (0..n)
        .map(|i| SightingRecord {
            timestamp: ts[i],
            device_id: device_id.clone(),
            device_type: ty[i],
            lat: lat[i],
            lon: lon[i],
            accuracy_m: acc[i],
            tz_offset_s: tz[i],
        })
        .collect();
    Ok(Some(DeviceTrajectory::from_sorted(device_id, sightings)))
}

fn shard_name(i: usize) -> String {
    format!("shard-{i:04}.bin")
}

fn run_name(i: usize) -> String {
    format!("run-{i:04}.tmp")
}

/// Default number of records buffered before a sorted run is written.
pub const DEFAULT_RUN_RECORDS: usize = 1 << 18;

/// Writes `path` via a sibling temp file and a rename.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), InputError> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.partial", e.to_string_lossy()),
        None => "partial".into(),
    });
    let file = File::create(&tmp).map_err(io_err(&tmp))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(&tmp))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

struct Run {
    path: PathBuf,
    /// Byte offset of each shard's section, plus the end offset.
    offsets: Vec<u64>,
}

fn write_run(dir: &Path, idx: usize, buf: &mut Vec<(usize, SightingRecord)>, shards: usize) -> Result<Run, InputError> {
    buf.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.device_id.cmp(&b.1.device_id)).then_with(|| sort_key(&a.1, &b.1)));
    let path = dir.join(run_name(idx));
    let mut offsets = Vec::with_capacity(shards + 1);
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::with_capacity(1 << 16, file);
    let mut pos = 0u64;
    let mut next = 0;
    for (shard, rec) in buf.iter() {
        while next <= *shard {
            offsets.push(pos);
            next += 1;
        }
        write_spill(&mut w, rec).map_err(io_err(&path))?;
        pos += 4 + rec.device_id.len() as u64 + 8 * 4 + 4 + 1;
    }
    while offsets.len() <= shards {
        offsets.push(pos);
    }
    w.flush().map_err(io_err(&path))?;
    buf.clear();
    Ok(Run { path, offsets })
}

struct Head {
    rec: SightingRecord,
    run: usize,
}

impl PartialEq for Head {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Head {}

impl PartialOrd for Head {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Head {
    fn cmp(&self, o: &Self) -> Ordering {
        self.rec.device_id.cmp(&o.rec.device_id).then_with(|| sort_key(&self.rec, &o.rec)).then(self.run.cmp(&o.run))
    }
}

/// Merges shard `shard` out of every run into a shard file, one device at a
/// time. Returns the shard summary, its stats and its largest trajectory.
fn merge_shard(dir: &Path, shard: usize, runs: &[Run]) -> Result<(ShardInfo, IngestStats, u64), InputError> {
    let mut readers = Vec::with_capacity(runs.len());
    let mut heap = BinaryHeap::new();
    for (i, run) in runs.iter().enumerate() {
        let (start, end) = (run.offsets[shard], run.offsets[shard + 1]);
        let mut f = File::open(&run.path).map_err(io_err(&run.path))?;
        f.seek(SeekFrom::Start(start)).map_err(io_err(&run.path))?;
        let mut r = BufReader::with_capacity(1 << 13, f.take(end - start));
        if let Some(rec) = read_spill(&mut r).map_err(io_err(&run.path))? {
            heap.push(Reverse(Head { rec, run: i }));
        }
        readers.push(r);
    }

    let path = dir.join(shard_name(shard));
    let mut stats = IngestStats::default();
    let mut max = 0u64;
    write_atomic(&path, |w| {
        w.write_all(MAGIC)?;
        let mut current: Vec<SightingRecord> = Vec::new();
        let mut flush = |recs: &mut Vec<SightingRecord>, w: &mut BufWriter<File>| -> io::Result<()> {
            if recs.is_empty() {
                return Ok(());
            }
            let id = recs[0].device_id.clone();
            let (t, dups) = DeviceTrajectory::from_records(id, std::mem::take(recs));
            stats.dropped.add(DropReason::Duplicate, dups);
            stats.records_kept += t.sightings.len() as u64;
            stats.devices += 1;
            max = max.max(t.sightings.len() as u64);
            write_block(w, &t)
        };
        while let Some(Reverse(Head { rec, run })) = heap.pop() {
            if let Some(next) = read_spill(&mut readers[run])? {
                heap.push(Reverse(Head { rec: next, run }));
            }
            if current.last().is_some_and(|c| c.device_id != rec.device_id) {
                flush(&mut current, w)?;
            }
            current.push(rec);
        }
        flush(&mut current, w)
    })?;
    Ok((ShardInfo { file: shard_name(shard), devices: stats.devices, sightings: stats.records_kept }, stats, max))
}

/// Streams `reader` into a sharded store under `dir`, which is created (and
/// emptied of old store files) as needed. At most `run_records` records are
/// held before spilling a sorted run; shard merges run on `pool`.
pub fn build_store<R: BufRead>(
    reader: R,
    filter: &IngestFilter,
    dir: &Path,
    shards: usize,
    run_records: usize,
    pool: &rayon::ThreadPool,
) -> Result<(StoreIndex, IngestStats), InputError> {
    assert!(shards > 0 && run_records > 0);
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("shard-") || name.starts_with("run-") || name == INDEX_FILE {
            std::fs::remove_file(&p).map_err(io_err(&p))?;
        }
    }

    let mut rd = SightingReader::new(reader);
    let mut buf: Vec<(usize, SightingRecord)> = Vec::with_capacity(run_records);
    let mut runs = Vec::new();
    while let Some(r) = rd.next_kept(filter).map_err(|e| InputError::io(Path::new("<sightings>"), e))? {
        buf.push((shard_of(&r.device_id, shards), r));
        if buf.len() == run_records {
            runs.push(write_run(dir, runs.len(), &mut buf, shards)?);
        }
    }
    if !buf.is_empty() {
        runs.push(write_run(dir, runs.len(), &mut buf, shards)?);
    }
    drop(buf);
    let mut stats = rd.stats;

    let results: Vec<_> = pool.install(|| (0..shards).into_par_iter().map(|i| merge_shard(dir, i, &runs)).collect());
    let mut index = StoreIndex { shards: Vec::with_capacity(shards), max_device_sightings: 0 };
    for r in results {
        let (info, st, max) = r?;
        stats += st;
        index.max_device_sightings = index.max_device_sightings.max(max);
        index.shards.push(info);
    }
    for run in &runs {
        std::fs::remove_file(&run.path).map_err(io_err(&run.path))?;
    }
    let index_path = dir.join(INDEX_FILE);
    write_atomic(&index_path, |w| serde_json::to_writer_pretty(&mut *w, &index).map_err(io::Error::other))?;
    Ok((index, stats))
}

/// Streams the device blocks of one shard file.
pub struct ShardReader {
    path: PathBuf,
    inner: BufReader<File>,
}

impl ShardReader {
    pub fn open(path: &Path) -> Result<Self, InputError> {
        let mut inner = BufReader::new(File::open(path).map_err(io_err(path))?);
        let mut magic = [0u8; 8];
        inner.read_exact(&mut magic).map_err(io_err(path))?;
        if &magic != MAGIC {
            return Err(corrupt(path, "bad magic"));
        }
        Ok(Self { path: path.into(), inner })
    }
}

impl Iterator for ShardReader {
    type Item = Result<DeviceTrajectory, InputError>;

    fn next(&mut self) -> Option<Self::Item> {
        read_block(&mut self.inner).map_err(|e| corrupt(&self.path, e.to_string())).transpose()
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryStore {
    pub dir: PathBuf,
    pub index: StoreIndex,
}

impl TrajectoryStore {
    pub fn open(dir: &Path) -> Result<Self, InputError> {
        let p = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
        let index = serde_json::from_str(&text).map_err(|e| corrupt(&p, e.to_string()))?;
        Ok(Self { dir: dir.into(), index })
    }

    pub fn shard_paths(&self) -> Vec<PathBuf> {
        self.index.shards.iter().map(|s| self.dir.join(&s.file)).collect()
    }

    /// Applies `f` to every trajectory, shards in parallel on `pool`, one
    /// trajectory per worker at a time. Results come back in device-id order.
    pub fn map_devices<T, F>(&self, pool: &rayon::ThreadPool, f: F) -> Result<Vec<(String, T)>, InputError>
    where
        T: Send,
        F: Fn(&DeviceTrajectory) -> T + Sync,
    {
        let per_shard: Vec<Result<Vec<(String, T)>, InputError>> = pool.install(|| {
            self.shard_paths()
                .par_iter()
                .map(|p| {
                    ShardReader::open(p)?
                        .map(|t| t.map(|t| (t.device_id.clone(), f(&t))))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect()
        });
        let mut out = Vec::new();
        for r in per_shard {
            out.extend(r?);
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ingest_reader;

    fn pool() -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap()
    }

    fn input() -> String {
        let mut s = String::from("timestamp,device_id,device_type,lat,lon,accuracy,tz\n");
        for d in 0..25 {
            for k in 0..(d % 7 + 1) {
                let ts = 1_501_560_000 + k * 3_000 + d;
                s.push_str(&format!("{ts},dev{d:02},{},{},{},{},-14400\n", d % 2, 28.0 + k as f64 * 1e-3, -81.5, 10 + k));
            }
            s.push_str(&format!("1501560000,dev{d:02},1,28.0,-81.5,10,-14400\n"));
        }
        s.push_str("garbage line\n");
        s.push_str("1501560000,far,1,28.0,-81.5,900,-14400\n");
        s
    }

    #[test]
    fn store_matches_in_memory_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let filter = IngestFilter::default();
        let (expected, expected_stats) = ingest_reader(input().as_bytes(), &filter).unwrap();
        let (index, stats) = build_store(input().as_bytes(), &filter, dir.path(), 4, 7, &pool()).unwrap();
        assert_eq!(stats, expected_stats);
        assert!(stats.is_conserved());
        assert_eq!(index.devices(), 25);
        assert_eq!(index.max_device_sightings, 8);
        let store = TrajectoryStore::open(dir.path()).unwrap();
        let got = store.map_devices(&pool(), |t| t.clone()).unwrap();
        let got: Vec<DeviceTrajectory> = got.into_iter().map(|(_, t)| t).collect();
        assert_eq!(got, expected);
        assert!(std::fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().starts_with("run-")));
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        build_store(input().as_bytes(), &IngestFilter::default(), a.path(), 3, 10, &pool()).unwrap();
        build_store(input().as_bytes(), &IngestFilter::default(), b.path(), 3, 1000, &pool()).unwrap();
        for i in 0..3 {
            let n = shard_name(i);
            assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap());
        }
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        std::fs::write(&p, b"NOTASTORE").unwrap();
        assert!(ShardReader::open(&p).is_err());
    }
}
