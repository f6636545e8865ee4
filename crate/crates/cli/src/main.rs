use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use evacuscope::config::PipelineConfig;
use evacuscope::pipeline::{Pipeline, PipelineError, Stage};
use evacuscope::synth::{generate, ScenarioConfig, SynthError};

/// Reconstructs evacuation behavior from mobile-device location sightings.
#[derive(Parser)]
#[command(name = "evacuscope", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; overrides the config.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Stream sightings into the device-sharded trajectory store.
    Ingest(RunArgs),
    /// Infer night-time home locations.
    Homes(RunArgs),
    /// Detect evacuation spells.
    Evac(RunArgs),
    /// Baseline-month trip and convex-hull metrics.
    Mobility(RunArgs),
    /// Join homes to zones, elevation and tracts.
    Enrich(RunArgs),
    /// Write the report tables.
    Report(RunArgs),
    /// Fit the evacuation-decision models.
    Fit(RunArgs),
    /// Run every stage in order.
    All(RunArgs),
    /// Generate a synthetic scenario with ground truth.
    Synth {
        /// Scenario configuration (flat TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default pipeline configuration.
    DefaultConfig,
}

fn error_report(kind: &str, message: String, stage: Option<Stage>) -> Value {
    let mut v = json!({ "error": kind, "message": message });
    if let Some(s) = stage {
        v["required_stage"] = json!(s.as_str());
    }
    v
}

fn run_stage(stage: Option<Stage>, args: RunArgs) -> Result<Value, PipelineError> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = args.out {
        cfg.output_dir = o;
    }
    let p = Pipeline::new(cfg)?;
    match stage {
        Some(s) => p.run(s),
        None => p.run_all(),
    }
}

fn run_synth(config: Option<PathBuf>, out: PathBuf) -> Result<Value, SynthError> {
    let cfg = match config {
        Some(p) => ScenarioConfig::load(&p)?,
        None => ScenarioConfig::default(),
    };
    let s = generate(&cfg, &out)?;
    Ok(json!(s))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (stage, args) = match cli.command {
        Command::Synth { config, out } => {
            return finish(run_synth(config, out).map_err(|e| error_report("synth", e.to_string(), None)));
        }
        Command::DefaultConfig => {
            print!("{}", PipelineConfig::documented_default());
            return ExitCode::SUCCESS;
        }
        Command::Ingest(a) => (Some(Stage::Ingest), a),
        Command::Homes(a) => (Some(Stage::Homes), a),
        Command::Evac(a) => (Some(Stage::Evac), a),
        Command::Mobility(a) => (Some(Stage::Mobility), a),
        Command::Enrich(a) => (Some(Stage::Enrich), a),
        Command::Report(a) => (Some(Stage::Report), a),
        Command::Fit(a) => (Some(Stage::Fit), a),
        Command::All(a) => (None, a),
    };
    finish(run_stage(stage, args).map_err(|e| error_report(e.kind(), e.to_string(), e.required_stage())))
}

fn finish(r: Result<Value, Value>) -> ExitCode {
    match r {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
