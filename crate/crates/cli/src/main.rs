//! `lgplug`: command-line driver for the detection pipeline.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use lgplug::pipeline::{self, parse_value, PipelineConfig, Stage};

#[derive(Parser)]
#[command(name = "lgplug", version, about = "LLM-guided OOD node detection for text-attributed graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Re-run stages even when their config hash is unchanged.
    #[arg(long)]
    force: bool,
    /// Override a config key, e.g. `--set exposure.clusters=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        for s in &self.sets {
            config = config.with_assignment(s)?;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the graph, split and initial features.
    Ingest(RunArgs),
    /// Train the graph and text encoders and write node embeddings.
    Align(RunArgs),
    /// Cluster, query the LLM and write the exposure set and query ledger.
    Expose(RunArgs),
    /// Train the detector and write per-node OOD scores.
    Train(RunArgs),
    /// Compute AUROC, FPR95 and score densities.
    Eval(RunArgs),
    /// Run every stage in order.
    Run(RunArgs),
    /// Run expose, train and eval over a parameter grid.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Grid axis, e.g. `--grid exposure.clusters=5,10,20`; replaces the
        /// config's `[sweep.grid]` when given.
        #[arg(long = "grid", value_name = "KEY=V1,V2,...")]
        grid: Vec<String>,
    },
    /// Summarize a run directory.
    Report {
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Print the default configuration.
    Config,
}

fn parse_grid(axes: &[String]) -> anyhow::Result<BTreeMap<String, Vec<toml::Value>>> {
    let mut grid = BTreeMap::new();
    for axis in axes {
        let Some((key, values)) = axis.split_once('=') else {
            bail!("expected KEY=V1,V2,... in --grid, got {axis:?}");
        };
        let values = values.split(',').filter(|v| !v.trim().is_empty()).map(|v| parse_value(v.trim())).collect();
        grid.insert(key.trim().to_string(), values);
    }
    Ok(grid)
}

fn stages(args: &RunArgs, stages: &[Stage]) -> anyhow::Result<()> {
    let config = args.load()?;
    let summary = pipeline::run_pipeline(&config, &args.out, stages, args.force)?;
    for (stage, status) in summary {
        println!("{stage}: {}", serde_json::to_string(&status)?.trim_matches('"'));
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => stages(&a, &[Stage::Ingest]),
        Command::Align(a) => stages(&a, &[Stage::Align]),
        Command::Expose(a) => stages(&a, &[Stage::Expose]),
        Command::Train(a) => stages(&a, &[Stage::Train]),
        Command::Eval(a) => stages(&a, &[Stage::Eval]),
        Command::Run(a) => stages(&a, &Stage::ALL),
        Command::Sweep { run, grid } => {
            let config = run.load()?;
            let grid = if grid.is_empty() { config.sweep.grid.clone() } else { parse_grid(&grid)? };
            let rows = pipeline::sweep(&config, &grid, &run.out)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!(
                "{} point(s), {failed} failed; results in {}",
                rows.len(),
                run.out.join(pipeline::SWEEP_FILE).display()
            );
            Ok(())
        }
        Command::Report { out } => {
            print!("{}", pipeline::report(&out)?);
            Ok(())
        }
        Command::Config => {
            print!("{}", PipelineConfig::default().to_toml_string().context("serializing the default config")?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<lgplug::Error>().map_or(1, lgplug::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
