//! Command-line experiments: synthetic data generation, static masks,
//! masked pipeline runs, mask ablations and cost tables.
//!
//! Exit codes: 0 on success, 2 for usage errors and invalid values, 3 for
//! unreadable or malformed data and failed writes.

pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{CostGrid, CostRow, RunReport};
pub use config::{CommonArgs, RunConfig};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "regionmask",
    version,
    about = "Region-masked video object detection experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence and training annotations
    ///
    /// Writes scene.json, frames.mvdf, annotations.json and
    /// train_annotations.json to --out and prints a SHA-256 checksum for each.
    Gen,

    /// Build the static mask from training annotations
    ///
    /// Writes static_mask.json, static_mask.pgm and heatmap.pgm to --out.
    Mask {
        /// Annotation JSON (default: <DATA>/train_annotations.json)
        #[arg(long, value_name = "FILE")]
        annotations: Option<PathBuf>,

        /// Directory written by gen
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },

    /// Run the masked pipeline over a generated sequence
    ///
    /// Writes run.json and run.csv to --out. CSV columns: dataset, backbone,
    /// seed_scene, seed_model, tokens_processed, patch_keep_rate, period,
    /// static_keep_rate, precision, recall, f1, gmacs, buffer_mb,
    /// scatter_gather_ops; with --oracle also oracle_precision,
    /// oracle_recall, oracle_f1, oracle_max_rel_error, oracle_mean_rel_error.
    Run {
        /// Directory written by gen
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },

    /// Compare dense, combined, static-only and dynamic-only masks
    ///
    /// Generates --sequences sequences and writes ablation.csv and
    /// ablation.json to --out.
    Ablate,

    /// Tabulate MACs and buffer memory for the configured model
    ///
    /// Writes cost.csv to --out: a dense row, then one masked row per token
    /// count. Columns: method, backbone, tokens_processed, patch_keep_rate,
    /// gmacs, buffer_mb, block_ref_mb, output_buffer_mb, scatter_gather_ops,
    /// eventful_mb.
    Cost {
        /// Comma-separated token counts
        #[arg(
            long,
            value_name = "N,..",
            value_delimiter = ',',
            conflicts_with = "keep_rates"
        )]
        tokens: Option<Vec<usize>>,

        /// Comma-separated keep rates in (0, 1]; rounded up to whole tokens
        #[arg(long, value_name = "R,..", value_delimiter = ',')]
        keep_rates: Option<Vec<f64>>,
    },
}

const DEFAULT_KEEP_RATES: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Runs a parsed command, writing progress lines to `out`.
pub fn run(cli: &Cli, out: &mut impl Write) -> Result<()> {
    let mut cfg = RunConfig::resolve(&cli.common)?;
    match &cli.command {
        Command::Gen => {
            commands::cmd_gen(&cfg, out)?;
        }
        Command::Mask { annotations, data } => {
            if let Some(d) = data {
                cfg.data = d.clone();
            }
            commands::cmd_mask(&cfg, annotations.as_deref(), out)?;
        }
        Command::Run { data } => {
            if let Some(d) = data {
                cfg.data = d.clone();
            }
            if let Some(m) = commands::read_manifest(&cfg.data)? {
                match cli.common.seed_scene {
                    Some(s) if s != m.seed_scene => {
                        return Err(CliError::Usage(format!(
                            "--seed-scene {s} disagrees with {} (generated with seed {})",
                            cfg.data.join(commands::SCENE_FILE).display(),
                            m.seed_scene
                        )))
                    }
                    _ => cfg.seed_scene = m.seed_scene,
                }
            }
            commands::cmd_run(&cfg, out)?;
        }
        Command::Ablate => {
            commands::cmd_ablate(&cfg, out)?;
        }
        Command::Cost { tokens, keep_rates } => {
            let grid = match (tokens, keep_rates) {
                (Some(t), _) => CostGrid::Tokens(t.clone()),
                (None, Some(r)) => CostGrid::KeepRates(r.clone()),
                (None, None) => CostGrid::KeepRates(DEFAULT_KEEP_RATES.to_vec()),
            };
            commands::cmd_cost(&cfg, &grid, out)?;
        }
    }
    Ok(())
}
