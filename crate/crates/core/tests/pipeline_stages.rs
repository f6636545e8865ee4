use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use evacuscope::config::PipelineConfig;
use evacuscope::pipeline::{sha256_file, Manifest, Pipeline, PipelineError, Stage, MANIFEST_FILE};
use evacuscope::synth::{self, generate, ScenarioConfig};

fn scenario(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let cfg = ScenarioConfig { devices: 150, seed: 5, dropout_prob: 0.05, silent_share: 0.05, ..ScenarioConfig::default() };
    generate(&cfg, &data).unwrap();
    data
}

fn config(data: &Path, out: &Path, jobs: usize) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.inputs.sightings = Some(data.join(synth::SIGHTINGS_FILE));
    c.inputs.zones = Some(data.join(synth::ZONES_FILE));
    c.inputs.elevation = Some(data.join(synth::ELEVATION_FILE));
    c.inputs.tracts = Some(data.join(synth::TRACTS_FILE));
    c.inputs.tract_polygons = Some(data.join(synth::TRACT_POLYGONS_FILE));
    c.output_dir = out.to_path_buf();
    c.ingest.shards = 8;
    c.ingest.run_records = 5_000;
    c.jobs = jobs;
    c
}

/// Relative path → digest for every file under `dir`.
fn digests(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, sha256_file(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn rerun_and_thread_count_give_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = scenario(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    Pipeline::new(config(&data, &a, 1)).unwrap().run_all().unwrap();
    let first = digests(&a);
    Pipeline::new(config(&data, &a, 1)).unwrap().run_all().unwrap();
    assert_eq!(digests(&a), first);
    Pipeline::new(config(&data, &b, 3)).unwrap().run_all().unwrap();
    assert_eq!(digests(&b), first);
    assert!(!first.keys().any(|k| k.ends_with(".partial") || k.contains("run-")));
}

#[test]
fn each_stage_rebuilds_its_own_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = scenario(tmp.path());
    let out = tmp.path().join("out");
    let p = Pipeline::new(config(&data, &out, 2)).unwrap();
    p.run_all().unwrap();
    let all = digests(&out);
    for stage in Stage::ALL {
        for f in stage.outputs() {
            std::fs::remove_file(out.join(f)).unwrap();
        }
        p.run(stage).unwrap();
        assert_eq!(digests(&out), all, "stage {stage}");
    }
}

#[test]
fn manifest_matches_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = scenario(tmp.path());
    let out = tmp.path().join("out");
    Pipeline::new(config(&data, &out, 1)).unwrap().run_all().unwrap();
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m.stages.len(), Stage::ALL.len());
    let files = digests(&out);
    for (stage, rec) in &m.stages {
        assert!(!rec.outputs.is_empty(), "{stage}");
        for (name, digest) in &rec.outputs {
            assert_eq!(files.get(name), Some(digest), "{stage}: {name}");
        }
    }
    let sightings = sha256_file(&data.join(synth::SIGHTINGS_FILE)).unwrap();
    assert_eq!(m.stages[&Stage::Ingest].inputs["sightings"], sightings);
    assert_eq!(m.stages[&Stage::Homes].parameters["home"]["min_pts"], 5);
}

fn missing_stage(r: Result<serde_json::Value, PipelineError>) -> Option<Stage> {
    r.err().and_then(|e| e.required_stage())
}

#[test]
fn missing_upstream_names_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = scenario(tmp.path());
    let out = tmp.path().join("out");
    let p = Pipeline::new(config(&data, &out, 1)).unwrap();
    assert_eq!(missing_stage(p.run(Stage::Homes)), Some(Stage::Ingest));
    assert_eq!(missing_stage(p.run(Stage::Mobility)), Some(Stage::Ingest));
    p.run(Stage::Ingest).unwrap();
    assert_eq!(missing_stage(p.run(Stage::Evac)), Some(Stage::Homes));
    assert_eq!(missing_stage(p.run(Stage::Enrich)), Some(Stage::Homes));
    p.run(Stage::Homes).unwrap();
    p.run(Stage::Evac).unwrap();
    p.run(Stage::Mobility).unwrap();
    assert_eq!(missing_stage(p.run(Stage::Report)), Some(Stage::Enrich));
    let err = p.run(Stage::Fit).unwrap_err();
    assert_eq!(err.required_stage(), Some(Stage::Enrich));
    assert!(err.to_string().contains("`enrich`"), "{err}");
    p.run(Stage::Enrich).unwrap();
    p.run(Stage::Fit).unwrap();
}

#[test]
fn missing_inputs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = PipelineConfig::default();
    c.output_dir = tmp.path().join("out");
    let p = Pipeline::new(c).unwrap();
    assert!(matches!(p.run(Stage::Ingest), Err(PipelineError::MissingInput("sightings"))));
}

#[test]
fn stage_names_round_trip() {
    for s in Stage::ALL {
        assert_eq!(s.as_str().parse::<Stage>(), Ok(s));
    }
    assert!("everything".parse::<Stage>().is_err());
}
