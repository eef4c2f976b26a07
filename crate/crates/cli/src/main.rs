use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aqnet::config::SimConfig;
use aqnet::engine::{self, write_q_tables};
use aqnet::error::{ConfigError, SimError};
use aqnet::experiment::{self, ExperimentSpec};
use aqnet::metrics::{self, MetricsReport, RunMetrics};
use aqnet::mobility::{self, RouteShape, SyntheticTraceSpec};
use aqnet::model::Rsu;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "aqnet",
    version,
    about = "Opportunistic offloading simulator for mobile air-quality sensors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single configuration.
    Run {
        config: PathBuf,
        /// Directory for records.csv, metrics.json and Q-table snapshots.
        /// Without it the metrics JSON goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an experiment spec (policies x sweep points x seeds).
    Sweep {
        spec: PathBuf,
        /// Override the spec's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a run config or experiment spec and list every violation.
    Validate { path: PathBuf },
    /// Write synthetic trace (and optionally RSU) CSV files.
    GenTraces {
        #[arg(long)]
        n_devices: usize,
        #[arg(long, value_enum, default_value = "loop")]
        shape: ShapeArg,
        /// Loop perimeter in meters.
        #[arg(long, default_value_t = 7000.0)]
        perimeter_m: f64,
        /// Grid blocks per side.
        #[arg(long, default_value_t = 4)]
        blocks: u32,
        #[arg(long, default_value_t = 1000.0)]
        block_m: f64,
        #[arg(long, default_value_t = 10.0)]
        speed_mps: f64,
        #[arg(long)]
        duration: u64,
        #[arg(long, default_value_t = 60.0)]
        step_seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also place this many RSUs along the route shape.
        #[arg(long)]
        rsus: Option<usize>,
        #[arg(long, default_value_t = 350.0)]
        rsu_range_m: f64,
        #[arg(long)]
        rsu_out: Option<PathBuf>,
    },
    /// Recompute metrics from a delivery-record CSV.
    ReplayMetrics {
        records: PathBuf,
        /// Latency threshold in steps used to count delayed packets.
        #[arg(long)]
        delta: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Loop,
    Grid,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, out, seed } => run(&config, out.as_deref(), seed),
        Command::Sweep { spec, out } => sweep(&spec, out),
        Command::Validate { path } => validate(&path),
        Command::GenTraces {
            n_devices,
            shape,
            perimeter_m,
            blocks,
            block_m,
            speed_mps,
            duration,
            step_seconds,
            seed,
            out,
            rsus,
            rsu_range_m,
            rsu_out,
        } => {
            let shape = match shape {
                ShapeArg::Loop => RouteShape::Loop { perimeter_m },
                ShapeArg::Grid => RouteShape::Grid { blocks, block_m },
            };
            let spec = SyntheticTraceSpec {
                n_devices,
                shape,
                speed_mps,
                duration,
                step_seconds,
                seed,
            };
            let traces = mobility::generate_synthetic_traces(&spec).map_err(|e| Failure::Config(e.to_string()))?;
            mobility::write_traces(&out, &traces).map_err(runtime)?;
            if let Some(count) = rsus {
                let path = rsu_out.unwrap_or_else(|| out.with_file_name("rsus.csv"));
                let sites = shape
                    .rsu_sites(count, seed)
                    .map_err(|e| Failure::Config(e.to_string()))?;
                let rsus = sites
                    .into_iter()
                    .enumerate()
                    .map(|(id, p)| Rsu::new(id, p, rsu_range_m, 10_000.0))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| Failure::Config(e.to_string()))?;
                mobility::write_rsus(&path, &rsus).map_err(runtime)?;
            }
            Ok(())
        }
        Command::ReplayMetrics { records, delta } => {
            let records = metrics::read_records(&records)?;
            let m = RunMetrics::from_records(&records, delta);
            print_json(&MetricsReport::new(&m, &records));
            Ok(())
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serialisable"));
}

fn run(path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = SimConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let output = engine::run(&cfg)?;
    let report = MetricsReport::new(&output.metrics, &output.records);
    match out {
        None => print_json(&report),
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(runtime)?;
            metrics::write_records(&dir.join("records.csv"), &output.records)?;
            let json = serde_json::to_string_pretty(&report).expect("serialisable") + "\n";
            std::fs::write(dir.join("metrics.json"), json).map_err(runtime)?;
            if output.q_tables.iter().any(Option::is_some) {
                write_q_tables(&dir.join("qtables"), &output.q_tables)?;
            }
            eprintln!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn sweep(path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(out) = out {
        spec.output_dir = out;
    }
    eprintln!("{} runs", spec.jobs().len());
    let results = experiment::run_experiment(&spec)?;
    experiment::write_experiment(&spec.output_dir, &results)?;
    eprintln!(
        "wrote {} result rows and {} aggregate rows to {}",
        results.rows.len(),
        results.aggregates.len(),
        spec.output_dir.display()
    );
    Ok(())
}

fn validate(path: &Path) -> Result<(), Failure> {
    let errors = experiment::validate_config(path)?;
    if errors.is_empty() {
        println!("ok");
        return Ok(());
    }
    for e in &errors {
        println!("{e}");
    }
    Err(Failure::Config(format!(
        "{} violation(s) in {}",
        errors.len(),
        path.display()
    )))
}
