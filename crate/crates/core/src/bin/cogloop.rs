//! Command-line entry point.
//!
//! `cogloop run` executes the strategy-comparison experiment and writes
//! `runs.csv`, `summary.csv` and `report.md` into the output directory.
//! A TOML config file can set any option; command-line flags override it.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use cogloop::backend::{BackendConfig, BackendKind};
use cogloop::harness::{emit_report, run_experiment, ExperimentConfig};
use cogloop::kernel::Method;
use cogloop::strategies::LatencyMode;

#[derive(Parser)]
#[command(name = "cogloop", version, about = "Continual-learning agent experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the strategy-comparison experiment.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Notlearning,
    Learning,
    Nofixcode,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Scripted,
    Live,
}

#[derive(Clone, Copy, ValueEnum)]
enum LatencyArg {
    Simulated,
    Wall,
}

#[derive(Args)]
struct RunArgs {
    /// Method to run, or `all` for the full comparison.
    #[arg(long)]
    method: Option<MethodArg>,
    /// Measured runs per method.
    #[arg(long)]
    runs: Option<u32>,
    /// Base scenario seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Chat backend.
    #[arg(long)]
    backend: Option<BackendArg>,
    /// Runtime source: simulated latency model or wall clock.
    #[arg(long)]
    latency: Option<LatencyArg>,
    /// Preload experience memory from a .memory.jsonl file.
    #[arg(long, value_name = "PATH")]
    warm_memory: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// TOML config file; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

/// Config-file image of the CLI flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    method: Option<String>,
    runs: Option<u32>,
    seed: Option<u64>,
    latency: Option<String>,
    warm_memory: Option<PathBuf>,
    out: Option<PathBuf>,
    backend: Option<FileBackend>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileBackend {
    kind: Option<String>,
    endpoint: Option<String>,
    model: Option<String>,
    timeout_s: Option<u64>,
    max_retries: Option<u32>,
}

fn parse_methods(token: &str) -> Result<Vec<Method>, String> {
    match token {
        "all" => Ok(Method::ALL.to_vec()),
        other => Method::from_token(other)
            .map(|m| vec![m])
            .ok_or_else(|| format!("unknown method `{other}`")),
    }
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig, String> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            toml::from_str(&text).map_err(|e| format!("config parse error: {e}"))?
        }
        None => FileConfig::default(),
    };

    let mut config = ExperimentConfig::default();

    if let Some(token) = &file.method {
        config.methods = parse_methods(token)?;
    }
    if let Some(m) = args.method {
        config.methods = match m {
            MethodArg::Notlearning => vec![Method::NotLearning],
            MethodArg::Learning => vec![Method::Learning],
            MethodArg::Nofixcode => vec![Method::NoFixCodeByLearning],
            MethodArg::All => Method::ALL.to_vec(),
        };
    }
    if let Some(runs) = file.runs {
        config.runs = runs;
    }
    if let Some(runs) = args.runs {
        config.runs = runs;
    }
    if let Some(seed) = file.seed {
        config.seed_base = seed;
    }
    if let Some(seed) = args.seed {
        config.seed_base = seed;
    }

    let mut backend = BackendConfig::default();
    if let Some(fb) = &file.backend {
        if let Some(kind) = &fb.kind {
            backend.kind = match kind.as_str() {
                "scripted" => BackendKind::Scripted,
                "live" => BackendKind::Live,
                other => return Err(format!("unknown backend kind `{other}`")),
            };
        }
        if let Some(endpoint) = &fb.endpoint {
            backend.endpoint = endpoint.clone();
        }
        if let Some(model) = &fb.model {
            backend.model = model.clone();
        }
        if let Some(timeout_s) = fb.timeout_s {
            backend.timeout_s = timeout_s;
        }
        if let Some(max_retries) = fb.max_retries {
            backend.max_retries = max_retries;
        }
    }
    if let Some(kind) = args.backend {
        backend.kind = match kind {
            BackendArg::Scripted => BackendKind::Scripted,
            BackendArg::Live => BackendKind::Live,
        };
    }
    config.backend = backend;

    if let Some(latency) = &file.latency {
        config.latency = match latency.as_str() {
            "simulated" => LatencyMode::Simulated,
            "wall" => LatencyMode::Wall,
            other => return Err(format!("unknown latency mode `{other}`")),
        };
    }
    if let Some(latency) = args.latency {
        config.latency = match latency {
            LatencyArg::Simulated => LatencyMode::Simulated,
            LatencyArg::Wall => LatencyMode::Wall,
        };
    }

    if let Some(path) = &file.warm_memory {
        config.warm_memory = Some(path.clone());
    }
    if let Some(path) = &args.warm_memory {
        config.warm_memory = Some(path.clone());
    }
    if let Some(out) = &file.out {
        config.out_dir = out.clone();
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }

    Ok(config)
}

fn run(args: &RunArgs) -> Result<(), String> {
    let config = build_config(args)?;
    let (results, report) = run_experiment(&config).map_err(|e| e.to_string())?;
    let paths = emit_report(&results, &report, &config.out_dir).map_err(|e| e.to_string())?;

    for aggregate in &report.aggregates {
        println!(
            "{:<12} runs={:<3} runtime_mean={:.2}s interactions_mean={:.2} correct={}/{}{}",
            aggregate.method.token(),
            aggregate.runs,
            aggregate.runtime_mean_s,
            aggregate.interactions_mean,
            aggregate.correct_runs,
            aggregate.runs,
            if aggregate.partial { " (partial)" } else { "" }
        );
    }
    for pair in &report.pairs {
        println!(
            "{} vs {}: t={:.3} dof={:.1} p={:.6} -> {}",
            pair.a.token(),
            pair.b.token(),
            pair.t,
            pair.dof,
            pair.p,
            if pair.significant {
                "significant"
            } else {
                "not significant"
            }
        );
    }
    for path in paths {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => match run(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(message) => {
                eprintln!("error: {message}");
                ExitCode::FAILURE
            }
        },
    }
}
