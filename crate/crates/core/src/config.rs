//! Pipeline configuration, read from TOML. Every field has a default, so an
//! empty file is a valid configuration apart from the input paths.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::DistanceBins;
use crate::choice_model::{FitOptions, OrderEncoding};
use crate::geo::METERS_PER_MILE;
use crate::home::HomeParams;
use crate::ingest::{BoundingBox, DateRange, IngestFilter};
use crate::mobility::MobilityParams;
use crate::store::DEFAULT_RUN_RECORDS;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    pub sightings: Option<PathBuf>,
    pub zones: Option<PathBuf>,
    pub elevation: Option<PathBuf>,
    /// Tract attribute table (CSV).
    pub tracts: Option<PathBuf>,
    /// Tract polygons (GeoJSON) used to locate homes in tracts.
    pub tract_polygons: Option<PathBuf>,
    /// Alternative to polygons: CSV of device_id,tract_id.
    pub tract_sidecar: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub accuracy_ceiling_m: f64,
    pub bbox: Option<BoundingBox>,
    /// Number of device-hash shards in the trajectory store.
    pub shards: usize,
    /// Records buffered in memory per sorted run while building the store.
    pub run_records: usize,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self { accuracy_ceiling_m: 250.0, bbox: None, shards: 64, run_records: DEFAULT_RUN_RECORDS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvacuationSection {
    pub threshold_miles: f64,
}

impl Default for EvacuationSection {
    fn default() -> Self {
        Self { threshold_miles: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Upper edges of the shelter-distance bins in miles; the last bin is open.
    pub shelter_bin_edges_mi: Vec<f64>,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { shelter_bin_edges_mi: DistanceBins::default().edges_mi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub order_encoding: OrderEncoding,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let f = FitOptions::default();
        Self { order_encoding: OrderEncoding::Ordinal, tol: f.tol, max_iter: f.max_iter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: InputPaths,
    pub output_dir: PathBuf,
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
    pub baseline_month: DateRange,
    pub study_month: DateRange,
    pub study_window: DateRange,
    pub ingest: IngestSection,
    pub home: HomeParams,
    pub evacuation: EvacuationSection,
    pub mobility: MobilityParams,
    pub report: ReportSection,
    pub model: ModelSection,
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: InputPaths::default(),
            output_dir: PathBuf::from("out"),
            jobs: 0,
            baseline_month: DateRange::new(date(2017, 8, 1), date(2017, 8, 31)),
            study_month: DateRange::new(date(2017, 9, 1), date(2017, 9, 30)),
            study_window: DateRange::new(date(2017, 9, 4), date(2017, 9, 12)),
            ingest: IngestSection::default(),
            home: HomeParams::default(),
            evacuation: EvacuationSection::default(),
            mobility: MobilityParams::default(),
            report: ReportSection::default(),
            model: ModelSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.into(), msg: e.to_string() })?;
        cfg.resolve_relative_to(path.parent().unwrap_or(Path::new("")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml(&text, path)
    }

    /// Relative paths in a config file are taken relative to the file.
    fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [&mut i.sightings, &mut i.zones, &mut i.elevation, &mut i.tracts, &mut i.tract_polygons, &mut i.tract_sidecar]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (name, r) in [("baseline_month", self.baseline_month), ("study_month", self.study_month), ("study_window", self.study_window)] {
            if r.start > r.end {
                return bad(format!("{name} starts after it ends"));
            }
        }
        if !self.study_month.contains_range(&self.study_window) {
            return bad("study_window must lie inside study_month".into());
        }
        let positive = [
            ("ingest.accuracy_ceiling_m", self.ingest.accuracy_ceiling_m),
            ("home.eps_m", self.home.eps_m),
            ("evacuation.threshold_miles", self.evacuation.threshold_miles),
            ("mobility.roam_m", self.mobility.roam_m),
            ("mobility.dwell_s", self.mobility.dwell_s as f64),
            ("mobility.gap_s", self.mobility.gap_s as f64),
            ("model.tol", self.model.tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0"));
            }
        }
        if self.home.min_pts == 0 {
            return bad("home.min_pts must be > 0".into());
        }
        if self.ingest.shards == 0 {
            return bad("ingest.shards must be > 0".into());
        }
        if self.ingest.run_records == 0 {
            return bad("ingest.run_records must be > 0".into());
        }
        if self.model.max_iter == 0 {
            return bad("model.max_iter must be > 0".into());
        }
        let edges = &self.report.shelter_bin_edges_mi;
        if edges.is_empty() || edges.iter().any(|e| !(*e > 0.0)) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return bad("report.shelter_bin_edges_mi must be positive and strictly increasing".into());
        }
        if let Some(b) = &self.ingest.bbox {
            if b.min_lat > b.max_lat || b.min_lon > b.max_lon {
                return bad("ingest.bbox is empty".into());
            }
        }
        Ok(())
    }

    pub fn threshold_m(&self) -> f64 {
        self.evacuation.threshold_miles * METERS_PER_MILE
    }

    pub fn ingest_filter(&self) -> IngestFilter {
        IngestFilter {
            accuracy_ceiling_m: self.ingest.accuracy_ceiling_m,
            bbox: self.ingest.bbox,
            date_ranges: vec![self.baseline_month, self.study_month],
        }
    }

    pub fn distance_bins(&self) -> DistanceBins {
        DistanceBins { edges_mi: self.report.shelter_bin_edges_mi.clone() }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { tol: self.model.tol, max_iter: self.model.max_iter }
    }

    pub fn jobs(&self) -> usize {
        if self.jobs == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.jobs
        }
    }

    /// Default configuration rendered as TOML.
    pub fn documented_default() -> String {
        toml::to_string(&Self::default()).expect("serializable")
    }
}
