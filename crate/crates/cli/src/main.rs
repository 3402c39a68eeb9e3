//! `cdi` - causal data integration pipeline.
//!
//! Mines candidate confounders from a data lake and a knowledge graph,
//! cleans and merges them into an augmented dataset, builds a clustered
//! causal DAG, identifies adjustment sets, estimates effects, and scores
//! generated graphs against a ground truth.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cdi_core::inference::EffectKind;
use commands::Mode;
use config::PipelineConfig;

#[derive(Parser)]
#[command(name = "cdi", version, about = "causal data integration pipeline")]
struct Cli {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Config overrides as dotted KEY=VAL pairs, e.g. alpha=0.01 or
    /// oracle.backend=replay. Repeatable.
    #[arg(long = "stage-overrides", global = true)]
    stage_overrides: Vec<String>,

    /// DAG source for build/full: the hybrid pipeline or a data-only
    /// baseline.
    #[arg(long, global = true, value_enum, default_value = "hybrid")]
    mode: ModeArg,

    /// Effect kind for analyze/full.
    #[arg(long, global = true, value_enum, default_value = "direct")]
    kind: KindArg,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Hybrid,
    Pc,
    Bic,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Direct,
    Total,
}

#[derive(Subcommand)]
enum Command {
    /// Mine candidate attributes from the data lake and knowledge graph.
    Extract,
    /// Clean, prune, weight, and assemble the augmented dataset.
    Organize,
    /// Build the clustered causal DAG.
    Build,
    /// Identify adjustment sets and estimate the effect.
    Analyze,
    /// Score the built C-DAG against the ground truth.
    Evaluate,
    /// Run every stage in order and write the run manifest.
    Full,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mode = match cli.mode {
        ModeArg::Hybrid => Mode::Hybrid,
        ModeArg::Pc => Mode::Pc,
        ModeArg::Bic => Mode::Bic,
    };
    let kind = match cli.kind {
        KindArg::Direct => EffectKind::Direct,
        KindArg::Total => EffectKind::Total,
    };
    let result = (|| -> Result<(), error::CliError> {
        let config_path = cli
            .config
            .as_ref()
            .ok_or_else(|| error::CliError::Config("--config is required".to_string()))?;
        let config = PipelineConfig::load(config_path, &cli.stage_overrides)?;
        match cli.command {
            Command::Extract => commands::cmd_extract(&config),
            Command::Organize => commands::cmd_organize(&config),
            Command::Build => commands::cmd_build(&config, mode),
            Command::Analyze => commands::cmd_analyze(&config, kind),
            Command::Evaluate => commands::cmd_evaluate(&config),
            Command::Full => commands::cmd_full(&config, mode, kind),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cdi: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
