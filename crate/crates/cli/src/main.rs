use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use stairtoken_cli::commands;
use stairtoken_cli::output::{resolve_out_root, Run, OUT_ENV};

#[derive(Parser)]
#[command(
    name = "stairtoken",
    version,
    about = "Stair-token estimation and token-conditioned stepping experiments"
)]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// First seed; replaces the configured seed list with as many
    /// consecutive seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root (overrides STAIRTOKEN_OUT and the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write stair specs, point clouds and BEV grids for a seed sweep.
    Gen,
    /// Project a point cloud (XYZ or ASCII PLY) onto the BEV grid.
    Bev { cloud: PathBuf },
    /// Sense one world and print its estimated token.
    Estimate {
        /// World spec file written by `gen`; sampled from the config otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Also write the sensed cloud (.ply or .xyz).
        #[arg(long)]
        export_cloud: Option<PathBuf>,
    },
    /// Three-stage training of the token policy and terrain head.
    Train,
    /// Blind vs height-scan vs token policies under identical budgets.
    Ablation,
    /// Success on training and unseen stair heights.
    Generalize,
    /// Velocity tracking under a piecewise-constant command.
    Track,
    /// Analytic estimator accuracy over randomized configurations.
    BenchmarkEstimator,
    /// Estimate the token of a cloud file and print it.
    Ingest { path: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Bev { .. } => "bev",
            Command::Estimate { .. } => "estimate",
            Command::Train => "train",
            Command::Ablation => "ablation",
            Command::Generalize => "generalize",
            Command::Track => "track",
            Command::BenchmarkEstimator => "benchmark-estimator",
            Command::Ingest { .. } => "ingest",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = commands::load_config(cli.config.as_deref(), cli.seed)?;
    let (root, source) = resolve_out_root(cli.out.as_deref(), std::env::var(OUT_ENV).ok(), &cfg);
    let run = Run::new(cli.command.name(), cfg, root, source);
    match &cli.command {
        Command::Gen => commands::gen(&run),
        Command::Bev { cloud } => commands::bev(&run, cloud),
        Command::Estimate { spec, export_cloud } => commands::estimate(&run, spec.as_deref(), export_cloud.as_deref()),
        Command::Train => commands::train(&run),
        Command::Ablation => commands::ablation(&run),
        Command::Generalize => commands::generalize(&run),
        Command::Track => commands::track(&run),
        Command::BenchmarkEstimator => commands::benchmark_estimator(&run),
        Command::Ingest { path } => commands::ingest(path, &run),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
