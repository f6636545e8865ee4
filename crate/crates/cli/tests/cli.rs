use std::path::Path;
use std::process::{Command, Output};

use evacuscope::config::PipelineConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evacuscope"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn synth(dir: &Path, devices: usize) -> String {
    let scenario = dir.join("scenario.toml");
    std::fs::write(&scenario, format!("devices = {devices}\nseed = 9\n")).unwrap();
    let data = dir.join("data");
    let o = run(&["synth", "--config", scenario.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    data.to_string_lossy().into_owned()
}

fn write_config(dir: &Path, data: &str) -> String {
    let p = dir.join("pipeline.toml");
    std::fs::write(
        &p,
        format!(
            "output_dir = \"out\"\n[inputs]\nsightings = \"{data}/sightings.csv\"\nzones = \"{data}/zones.geojson\"\n\
             elevation = \"{data}/elevation.asc\"\ntracts = \"{data}/tracts.csv\"\ntract_polygons = \"{data}/tracts.geojson\"\n"
        ),
    )
    .unwrap();
    p.to_string_lossy().into_owned()
}

const REPORTS: [&str; 9] = [
    "table2_crosstab.csv",
    "fig4_departure.csv",
    "fig4_reentry.csv",
    "fig5_matrix.csv",
    "fig6_distance.csv",
    "fig7_fig9_county.csv",
    "fig8_duration.csv",
    "fig10_elevation.csv",
    "model_summary.json",
];

#[test]
fn all_writes_reports_and_rerun_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 120);
    let cfg = write_config(tmp.path(), &data);
    let o = run(&["all", "--config", &cfg, "--jobs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["ingest"]["stats"]["devices"], 120);
    let out = tmp.path().join("out");
    for f in REPORTS {
        assert!(out.join(f).is_file(), "{f}");
    }
    let snapshot = |f: &str| std::fs::read(out.join(f)).unwrap();
    let before: Vec<Vec<u8>> = REPORTS.iter().map(|f| snapshot(f)).collect();
    let manifest = snapshot("manifest.json");
    let o = run(&["all", "--config", &cfg, "--jobs", "1"]);
    assert!(o.status.success());
    let after: Vec<Vec<u8>> = REPORTS.iter().map(|f| snapshot(f)).collect();
    assert_eq!(before, after);
    assert_eq!(manifest, snapshot("manifest.json"));
}

#[test]
fn fit_without_enrich_fails_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 60);
    let cfg = write_config(tmp.path(), &data);
    for stage in ["ingest", "homes", "evac", "mobility"] {
        assert!(run(&[stage, "--config", &cfg]).status.success(), "{stage}");
    }
    let o = run(&["fit", "--config", &cfg]);
    assert!(!o.status.success());
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "missing_artifact");
    assert_eq!(err["required_stage"], "enrich");
    assert!(!tmp.path().join("out/model_summary.json").exists());
}

#[test]
fn out_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 40);
    let cfg = write_config(tmp.path(), &data);
    let alt = tmp.path().join("elsewhere");
    let o = run(&["ingest", "--config", &cfg, "--out", alt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(alt.join("ingest_stats.json").is_file());
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = synth(a.path(), 30);
    let db = synth(b.path(), 30);
    for f in ["sightings.csv", "ground_truth.csv", "zones.geojson", "elevation.asc", "tracts.csv", "tracts.geojson"] {
        assert_eq!(std::fs::read(Path::new(&da).join(f)).unwrap(), std::fs::read(Path::new(&db).join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_config_is_a_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.toml");
    std::fs::write(&p, "[evacuation]\nthreshold_miles = -1.0\n").unwrap();
    let o = run(&["homes", "--config", p.to_str().unwrap()]);
    assert!(!o.status.success());
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "config");
}

#[test]
fn default_config_parses_back() {
    let o = run(&["default-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let c = PipelineConfig::from_toml(&text, Path::new("pipeline.toml")).unwrap();
    assert_eq!(c.home.min_pts, 5);
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let c = PipelineConfig::load(&root.join("pipeline.toml")).unwrap();
    assert!(c.inputs.sightings.as_ref().unwrap().ends_with("data/sightings.csv"));
    assert_eq!(c, PipelineConfig { inputs: c.inputs.clone(), output_dir: c.output_dir.clone(), ..PipelineConfig::default() });
    let s = evacuscope::synth::ScenarioConfig::load(&root.join("scenario.toml")).unwrap();
    assert_eq!(s, evacuscope::synth::ScenarioConfig::default());
}
