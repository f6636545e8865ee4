//! Stage runners. Each stage reads its inputs from the output directory
//! (or the configured input files), writes its artifacts atomically and
//! records digests and parameters in `manifest.json`.
//!
//! ```text
//! ingest   -> store/, ingest_stats.json
//! homes    -> homes.csv, homes_stats.json               (ingest)
//! evac     -> evacuation_profiles.csv, evac_stats.json  (ingest, homes)
//! mobility -> mobility_baseline.csv, mobility_stats.json (ingest)
//! enrich   -> device_context.csv, enrich_stats.json     (homes)
//! report   -> table2_crosstab.csv, fig*.csv, report_stats.json (evac, enrich)
//! fit      -> model_summary.json, model_summary.txt, fit_stats.json (evac, enrich, mobility)
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::{
    county_aggregates, date_distribution, departure_by_order_date, duration_distribution, elevation_by_order_rates,
    shelter_distance_distribution, Aggregates, DateField,
};
use crate::choice_model::{assemble_design, compare_models, fit_spec, render_table, ModelError, ModelSpec, ModelSummary};
use crate::config::{ConfigError, PipelineConfig};
use crate::enrich::{enrich_device, DeviceContext, EnrichStats, ReferenceData, TractTable};
use crate::error::InputError;
use crate::evacuation::{daily_min_distance, detect_evacuation, EvacuationProfile};
use crate::geo::{load_zones, ElevationGrid, GeoPoint};
use crate::home::{infer_home, HomeEstimate};
use crate::mobility::{baseline_summary, MobilityBaseline};
use crate::store::{build_store, write_atomic, TrajectoryStore, INDEX_FILE};

pub const STORE_DIR: &str = "store";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const INGEST_STATS: &str = "ingest_stats.json";
pub const HOMES_FILE: &str = "homes.csv";
pub const HOMES_STATS: &str = "homes_stats.json";
pub const PROFILES_FILE: &str = "evacuation_profiles.csv";
pub const EVAC_STATS: &str = "evac_stats.json";
pub const BASELINE_FILE: &str = "mobility_baseline.csv";
pub const MOBILITY_STATS: &str = "mobility_stats.json";
pub const CONTEXT_FILE: &str = "device_context.csv";
pub const ENRICH_STATS: &str = "enrich_stats.json";
pub const TABLE2_FILE: &str = "table2_crosstab.csv";
pub const DEPARTURE_FILE: &str = "fig4_departure.csv";
pub const REENTRY_FILE: &str = "fig4_reentry.csv";
pub const MATRIX_FILE: &str = "fig5_matrix.csv";
pub const DISTANCE_FILE: &str = "fig6_distance.csv";
pub const DURATION_FILE: &str = "fig8_duration.csv";
pub const COUNTY_FILE: &str = "fig7_fig9_county.csv";
pub const ELEVATION_FILE: &str = "fig10_elevation.csv";
pub const REPORT_STATS: &str = "report_stats.json";
pub const SUMMARY_JSON: &str = "model_summary.json";
pub const SUMMARY_TXT: &str = "model_summary.txt";
pub const FIT_STATS: &str = "fit_stats.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Homes,
    Evac,
    Mobility,
    Enrich,
    Report,
    Fit,
}

impl Stage {
    /// Execution order of `all`.
    pub const ALL: [Stage; 7] =
        [Stage::Ingest, Stage::Homes, Stage::Evac, Stage::Mobility, Stage::Enrich, Stage::Report, Stage::Fit];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Homes => "homes",
            Stage::Evac => "evac",
            Stage::Mobility => "mobility",
            Stage::Enrich => "enrich",
            Stage::Report => "report",
            Stage::Fit => "fit",
        }
    }

    /// Files the stage writes, relative to the output directory. The store
    /// is represented by its index.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[INGEST_STATS],
            Stage::Homes => &[HOMES_FILE, HOMES_STATS],
            Stage::Evac => &[PROFILES_FILE, EVAC_STATS],
            Stage::Mobility => &[BASELINE_FILE, MOBILITY_STATS],
            Stage::Enrich => &[CONTEXT_FILE, ENRICH_STATS],
            Stage::Report => &[
                TABLE2_FILE,
                DEPARTURE_FILE,
                REENTRY_FILE,
                MATRIX_FILE,
                DISTANCE_FILE,
                DURATION_FILE,
                COUNTY_FILE,
                ELEVATION_FILE,
                REPORT_STATS,
            ],
            Stage::Fit => &[SUMMARY_JSON, SUMMARY_TXT, FIT_STATS],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing {}: run the `{stage}` stage first", path.display())]
    MissingArtifact { stage: Stage, path: PathBuf },
    #[error("inputs.{0} is not set in the configuration")]
    MissingInput(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("model fit failed: {0}")]
    Model(#[from] ModelError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

impl PipelineError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::MissingArtifact { .. } => "missing_artifact",
            PipelineError::MissingInput(_) => "missing_input",
            PipelineError::Config(_) => "config",
            PipelineError::Input(_) => "input",
            PipelineError::Model(_) => "model",
            PipelineError::Pool(_) => "runtime",
        }
    }

    /// The upstream stage that must run before retrying, if any.
    pub fn required_stage(&self) -> Option<Stage> {
        match self {
            PipelineError::MissingArtifact { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// One row of `homes.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeRow {
    pub device_id: String,
    pub home_lat: f64,
    pub home_lon: f64,
    pub night_sightings: usize,
    pub clusters: usize,
    pub confidence: f64,
}

impl HomeRow {
    pub fn home(&self) -> GeoPoint {
        GeoPoint { lat: self.home_lat, lon: self.home_lon }
    }
}

impl From<&HomeEstimate> for HomeRow {
    fn from(h: &HomeEstimate) -> Self {
        Self {
            device_id: h.device_id.clone(),
            home_lat: h.home.lat,
            home_lon: h.home.lon,
            night_sightings: h.night_sighting_count,
            clusters: h.cluster_count,
            confidence: h.confidence,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomeStats {
    pub devices: u64,
    pub homes: u64,
    pub insufficient_data: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvacStats {
    pub devices: u64,
    pub no_home: u64,
    pub inactive: u64,
    pub active: u64,
    pub evacuated: u64,
    pub stayed: u64,
    pub departure_unknown: u64,
    pub reentry_censored: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MobilityStats {
    pub devices: u64,
    pub baselines: u64,
    pub no_baseline_data: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportStats {
    pub profiles: u64,
    pub inactive: u64,
    pub missing_context: u64,
    pub active: u64,
    pub evacuees: u64,
    pub no_elevation: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub parameters: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Digests and parameters of the last run of each stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<Stage, StageRecord>,
}

pub fn sha256_file(path: &Path) -> std::result::Result<String, InputError> {
    let mut f = BufReader::new(File::open(path).map_err(|e| InputError::io(path, e))?);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| InputError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::other)?;
        w.write_all(b"\n")
    })?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, |w| {
        let mut c = csv::Writer::from_writer(w);
        for r in rows {
            c.serialize(r).map_err(io::Error::other)?;
        }
        c.flush()
    })?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> std::result::Result<Vec<T>, InputError> {
    let what = "stage artifact";
    let mut rdr = csv::Reader::from_path(path).map_err(|e| InputError::invalid(what, format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| InputError::invalid(what, format!("{}: {e}", path.display()))))
        .collect()
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs())
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))?;
        Ok(Self { config, pool })
    }

    pub fn out(&self) -> &Path {
        &self.config.output_dir
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out().join(name)
    }

    /// Path of an upstream artifact, or the error naming the stage that makes it.
    fn require(&self, stage: Stage, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(PipelineError::MissingArtifact { stage, path: p })
        }
    }

    fn input(&self, key: &'static str, p: &Option<PathBuf>) -> Result<PathBuf> {
        p.clone().ok_or(PipelineError::MissingInput(key))
    }

    fn open_store(&self) -> Result<TrajectoryStore> {
        self.require(Stage::Ingest, &format!("{STORE_DIR}/{INDEX_FILE}"))?;
        Ok(TrajectoryStore::open(&self.path(STORE_DIR))?)
    }

    /// Runs one stage.
    pub fn run(&self, stage: Stage) -> Result<Value> {
        std::fs::create_dir_all(self.out()).map_err(|e| InputError::io(self.out(), e))?;
        info!("stage {stage}: start");
        let (summary, params, inputs) = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Homes => self.homes()?,
            Stage::Evac => self.evac()?,
            Stage::Mobility => self.mobility()?,
            Stage::Enrich => self.enrich()?,
            Stage::Report => self.report()?,
            Stage::Fit => self.fit()?,
        };
        self.record(stage, params, inputs)?;
        info!("stage {stage}: done");
        Ok(summary)
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<Value> {
        let mut out = serde_json::Map::new();
        for s in Stage::ALL {
            out.insert(s.to_string(), self.run(s)?);
        }
        Ok(Value::Object(out))
    }

    fn record(&self, stage: Stage, parameters: Value, inputs: Vec<(String, PathBuf)>) -> Result<()> {
        let mut rec = StageRecord { parameters, ..Default::default() };
        for (k, p) in inputs {
            rec.inputs.insert(k, sha256_file(&p)?);
        }
        let mut outputs: Vec<String> = stage.outputs().iter().map(|s| s.to_string()).collect();
        if stage == Stage::Ingest {
            outputs.extend(self.store_files()?);
        }
        for name in outputs {
            rec.outputs.insert(name.clone(), sha256_file(&self.path(&name))?);
        }
        let path = self.path(MANIFEST_FILE);
        let mut manifest: Manifest = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default();
        manifest.stages.insert(stage, rec);
        write_json(&path, &manifest)
    }

    fn store_files(&self) -> Result<Vec<String>> {
        let store = TrajectoryStore::open(&self.path(STORE_DIR))?;
        let mut v = vec![format!("{STORE_DIR}/{INDEX_FILE}")];
        v.extend(store.index.shards.iter().map(|s| format!("{STORE_DIR}/{}", s.file)));
        Ok(v)
    }

    /// Upstream artifact as a manifest input entry.
    fn artifact(&self, name: &str) -> (String, PathBuf) {
        (name.to_string(), self.path(name))
    }

    fn ingest(&self) -> Result<(Value, Value, Vec<(String, PathBuf)>)> {
        let c = &self.config;
        let src = self.input("sightings", &c.inputs.sightings)?;
        let dir = self.path(STORE_DIR);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| InputError::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| InputError::io(&dir, e))?;
        let file = File::open(&src).map_err(|e| InputError::io(&src, e))?;
        let reader = io::BufReader::with_capacity(1 << 20, file);
        let (index, stats) =
            build_store(reader, &c.ingest_filter(), &dir, c.ingest.shards, c.ingest.run_records, &self.pool)?;
        write_json(&self.path(INGEST_STATS), &stats)?;
        let params = json!({
            "ingest": c.ingest,
            "baseline_month": c.baseline_month,
            "study_month": c.study_month,
        });
        let summary = json!({ "stats": stats, "max_device_sightings": index.max_device_sightings });
        Ok((summary, params, vec![("sightings".into(), src)]))
    }

    fn homes(&self) -> Result<(Value, Value, Vec<(String, PathBuf)>)> {
        let c = &self.config;
        let store = self.open_store()?;
        let results = store.map_devices(&self.pool, |t| infer_home(t, c.baseline_month, &c.home))?;
        let mut stats = HomeStats::default();
        let mut rows = Vec::new();
        for (_, r) in &results {
            stats.devices += 1;
            match r {
                Ok(h) => {
                    stats.homes += 1;
                    rows.push(HomeRow::from(h));
                }
                Err(_) => stats.insufficient_data += 1,
            }
        }
        write_csv(&self.path(HOMES_FILE), &rows)?;
        write_json(&self.path(HOMES_STATS), &stats)?;
        let params = json!({ "baseline_month": c.baseline_month, "home": c.home });
        Ok((json!(stats), params, vec![self.artifact(&format!("{STORE_DIR}/{INDEX_FILE}"))]))
    }

    fn evac(&self) -> Result<(Value, Value, Vec<(String, PathBuf)>)> {
        let c = &self.config;
        let store = self.open_store()?;
        let homes_path = self.require(Stage::Homes, HOMES_FILE)?;
        let homes: HashMap<String, GeoPoint> =
            read_csv::<HomeRow>(&homes_path)?.into_iter().map(|h| (h.device_id.clone(), h.home())).collect();
        let threshold = c.threshold_m();
        let results = store.map_devices(&self.pool, |t| {
            homes
                .get(&t.device_id)
                .map(|&h| detect_evacuation(&daily_min_distance(t, h, c.study_month), c.study_window, threshold))
        })?;
        let mut stats = EvacStats::default();
        let mut rows = Vec::new();
        for (_, p) in results {
            stats.devices += 1;
            let Some(p) = p else {
                stats.no_home += 1;
                continue;
            };
            if !p.active {
                stats.inactive += 1;
            } else {
                stats.active += 1;
                if p.evacuated {
                    stats.evacuated += 1;
                    stats.departure_unknown += u64::from(p.departure_date.is_none());
                    stats.reentry_censored += u64::from(p.reentry_date.is_none());
                } else {
                    stats.stayed += 1;
                }
            }
            rows.push(p);
        }
        write_csv(&self.path(PROFILES_FILE), &rows)?;
        write_json(&self.path(EVAC_STATS), &stats)?;
        let params = json!({
            "study_month": c.study_month,
            "study_window": c.study_window,
            "evacuation": c.evacuation,
        });
        let inputs = vec![self.artifact(&format!("{STORE_DIR}/{INDEX_FILE}")), self.artifact(HOMES_FILE)];
        Ok((json!(stats), params, inputs))
    }

    fn mobility(&self) -> Result<(Value, Value, Vec<(String, PathBuf)>)> {
        let c = &self.config;
        let store = self.open_store()?;
        let results = store.map_devices(&self.pool, |t| baseline_summary(t, c.baseline_month, &c.mobility).ok())?;
        let mut stats = MobilityStats::default();
        let mut rows = Vec::new();
        for (_, b) in results {
            stats.devices += 1;
            match b {
                Some(b) => {
                    stats.baselines += 1;
                    rows.push(b);
                }
                None => stats.no_baseline_data += 1,
            }
        }
        write_csv(&self.path(BASELINE_FILE), &rows)?;
        write_json(&self.path(MOBILITY_STATS), &stats)?;
        let params = json!({ "baseline_month": c.baseline_month, "mobility": c.mobility });
        Ok((json!(stats), params, vec![self.artifact(&format!("{STORE_DIR}/{INDEX_FILE}"))]))
    }

    fn enrich(&self) -> Result<(Value, Value, Vec<(String, PathBuf)>)> {
        let i = &self.config.inputs;
        let homes_path = self.require(Stage::Homes, HOMES_FILE)?;
        let zones_path = self.input("zones", &i.zones)?;
        let grid_path = self.input("elevation", &i.elevation)?;
        let tracts_path = self.input("tracts", &i.tracts)?;
        if i.tract_polygons.is_none() && i.tract_sidecar.is_none() {
            return Err(PipelineError::MissingInput("tract_polygons"));
        }
        let refs = ReferenceData {
            zones: load_zones(&zones_path)?,
            grid: ElevationGrid::load(&grid_path)?,
            tracts: TractTable::load(&tracts_path, i.tract_polygons.as_deref(), i.tract_sidecar.as_deref())?,
        };
        let homes: Vec<HomeRow> = read_csv(&homes_path)?;
        let chunks: Vec<(Vec<DeviceContext>, EnrichStats)> = self.pool.install(|| {
            homes
                .par_chunks(1024)
                .map(|chunk| {
                    let mut st = EnrichStats::default();
                    let v = chunk.iter().map(|h| enrich_device(&h.device_id, h.home(), &refs, &mut st)).collect();
                    (v, st)
                })
                .collect()
        });
        let mut stats = EnrichStats::default();
        let mut rows = Vec::with_capacity(homes.len());
        for (v, st) in chunks {
            rows.extend(v);
            stats += st;
        }
        write_csv(&self.path(CONTEXT_FILE), &rows)?;
        write_json(&self.path(ENRICH_STATS), &stats)?;
        let mut inputs = vec![
            self.artifact(HOMES_FILE),
            ("zones".to_string(), zones_path),
            ("elevation".to_string(), grid_path),
            ("tracts".to_string(), tracts_path),
        ];
        if let Some(p) = &i.tract_polygons {
            inputs.push(("tract_polygons".into(), p.clone()));
        }
        if let Some(p) = &i.tract_sidecar {
            inputs.push(("tract_sidecar".into(), p.clone()));
        }
        Ok((json!(stats), json!({}), inputs))
    }

    fn report(&self) -> Result<(Value, Value, Vec<(String, PathBuf)>)> {
        let profiles_path = self.require(Stage::Evac, PROFILES_FILE)?;
        let context_path = self.require(Stage::Enrich, CONTEXT_FILE)?;
        let profiles: Vec<EvacuationProfile> = read_csv(&profiles_path)?;
        let contexts: Vec<DeviceContext> = read_csv(&context_path)?;
        let bins = self.config.distance_bins();
        let by_id: HashMap<&str, &DeviceContext> = contexts.iter().map(|c| (c.device_id.as_str(), c)).collect();
        let agg = self.pool.install(|| {
            profiles
                .par_chunks(4096)
                .map(|chunk| {
                    let mut a = Aggregates::default();
                    for p in chunk {
                        match by_id.get(p.device_id.as_str()) {
                            Some(c) => a.add(p, c, &bins),
                            None if p.active => a.missing_context += 1,
                            None => a.inactive += 1,
                        }
                    }
                    a
                })
                .reduce(Aggregates::default, |mut a, b| {
                    a.merge(&b);
                    a
                })
        });
        write_csv(&self.path(TABLE2_FILE), &agg.crosstab.rows())?;
        write_csv(&self.path(DEPARTURE_FILE), &date_distribution(&agg, DateField::Departure))?;
        write_csv(&self.path(REENTRY_FILE), &date_distribution(&agg, DateField::Reentry))?;
        write_csv(&self.path(MATRIX_FILE), &departure_by_order_date(&agg))?;
        write_csv(&self.path(DISTANCE_FILE), &shelter_distance_distribution(&agg, &bins))?;
        write_csv(&self.path(DURATION_FILE), &duration_distribution(&agg))?;
        write_csv(&self.path(COUNTY_FILE), &county_aggregates(&agg))?;
        write_csv(&self.path(ELEVATION_FILE), &elevation_by_order_rates(&agg))?;
        let stats = ReportStats {
            profiles: profiles.len() as u64,
            inactive: agg.inactive,
            missing_context: agg.missing_context,
            active: agg.active(),
            evacuees: agg.evacuees(),
            no_elevation: agg.no_elevation,
        };
        write_json(&self.path(REPORT_STATS), &stats)?;
        let params = json!({ "report": self.config.report });
        Ok((json!(stats), params, vec![self.artifact(PROFILES_FILE), self.artifact(CONTEXT_FILE)]))
    }

    fn fit(&self) -> Result<(Value, Value, Vec<(String, PathBuf)>)> {
        let profiles_path = self.require(Stage::Evac, PROFILES_FILE)?;
        let context_path = self.require(Stage::Enrich, CONTEXT_FILE)?;
        let baseline_path = self.require(Stage::Mobility, BASELINE_FILE)?;
        let profiles: Vec<EvacuationProfile> = read_csv(&profiles_path)?;
        let contexts: Vec<DeviceContext> = read_csv(&context_path)?;
        let baselines: Vec<MobilityBaseline> = read_csv(&baseline_path)?;
        let enc = self.config.model.order_encoding;
        let small = ModelSpec::without_mobility(enc);
        let big = ModelSpec::with_mobility(enc);
        // Both models are fitted on the rows complete for the larger one so
        // that they are nested.
        let design = assemble_design(&profiles, &contexts, &baselines, &big)?;
        let opts = self.config.fit_options();
        let fit_small = fit_spec(&design, &small, opts)?;
        let fit_big = fit_spec(&design, &big, opts)?;
        let comparison = Some(compare_models(&fit_small, &fit_big)?);
        let summary = ModelSummary { order_encoding: enc, design: design.drops, models: vec![fit_small, fit_big], comparison };
        write_json(&self.path(SUMMARY_JSON), &summary)?;
        write_atomic(&self.path(SUMMARY_TXT), |w| w.write_all(render_table(&summary).as_bytes()))?;
        let stats = json!({
            "design": design.drops,
            "iterations": summary.models.iter().map(|m| (m.model.clone(), m.iterations)).collect::<BTreeMap<_, _>>(),
        });
        write_json(&self.path(FIT_STATS), &stats)?;
        let params = json!({ "model": self.config.model });
        let inputs = vec![self.artifact(PROFILES_FILE), self.artifact(CONTEXT_FILE), self.artifact(BASELINE_FILE)];
        Ok((stats, params, inputs))
    }
}
