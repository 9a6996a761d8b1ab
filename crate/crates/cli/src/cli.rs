//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config;
use crate::run::{Inputs, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "isli",
    version,
    about = "Interactive swarm leader identification experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment config layered over the built-in defaults.
    #[arg(long)]
    pub config: PathBuf,
    /// Output run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace a non-empty output directory.
    #[arg(long)]
    pub overwrite: bool,
    /// Seed list, e.g. `--seed 1,2,3`; replaces `seeds` from the config.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    /// Extra `key.path=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the policy with PPO, once per seed.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint over an (N, v_max) grid, or train a hyperparameter grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        densities: Option<PathBuf>,
        /// Evaluation episodes per cell and seed.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        grid_n: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        grid_vmax: Vec<f64>,
        /// `eval` (default) or `train`.
        #[arg(long, default_value = "eval")]
        mode: String,
    },
    /// Roll out the prober, record interaction ratios and fit role densities.
    FitKde {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Episodes per swarm size.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run held-out episodes and identify the leader in each.
    Identify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        densities: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Dump one episode step by step.
    ExportTrace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        episode_seed: Option<u64>,
    },
    /// Re-execute a previous run from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
}

fn list<T: ToString>(xs: &[T]) -> String {
    format!(
        "[{}]",
        xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
    )
}

fn execute(
    name: &str,
    common: Common,
    mut extra: Vec<String>,
    inputs: Inputs,
) -> Result<RunManifest> {
    let mut overrides = common.overrides;
    if !common.seed.is_empty() {
        overrides.push(format!("seeds={}", list(&common.seed)));
    }
    overrides.append(&mut extra);
    let config = config::resolve(Some(&common.config), &overrides)?;
    commands::execute(name, &config, &inputs, &common.out, common.overwrite)
}

pub fn run(cli: Cli) -> Result<RunManifest> {
    match cli.command {
        Command::Train { common } => execute("train", common, vec![], Inputs::default()),
        Command::Sweep {
            common,
            checkpoint,
            densities,
            episodes,
            grid_n,
            grid_vmax,
            mode,
        } => {
            let mut extra = Vec::new();
            if let Some(e) = episodes {
                extra.push(format!("eval.episodes={e}"));
            }
            if !grid_n.is_empty() {
                extra.push(format!("sweep.grid_n={}", list(&grid_n)));
            }
            if !grid_vmax.is_empty() {
                // Debug keeps a decimal point so TOML reads floats.
                let v: Vec<String> = grid_vmax.iter().map(|x| format!("{x:?}")).collect();
                extra.push(format!("sweep.grid_vmax={}", list(&v)));
            }
            let inputs = Inputs {
                checkpoint,
                densities,
                mode: Some(mode),
                ..Inputs::default()
            };
            execute("sweep", common, extra, inputs)
        }
        Command::FitKde {
            common,
            checkpoint,
            episodes,
        } => {
            let extra = episodes
                .map(|e| format!("dataset.episodes={e}"))
                .into_iter()
                .collect();
            let inputs = Inputs {
                checkpoint,
                ..Inputs::default()
            };
            execute("fit-kde", common, extra, inputs)
        }
        Command::Identify {
            common,
            checkpoint,
            densities,
            episodes,
        } => {
            let extra = episodes
                .map(|e| format!("eval.episodes={e}"))
                .into_iter()
                .collect();
            let inputs = Inputs {
                checkpoint,
                densities: Some(densities),
                ..Inputs::default()
            };
            execute("identify", common, extra, inputs)
        }
        Command::ExportTrace {
            common,
            checkpoint,
            episode_seed,
        } => {
            let inputs = Inputs {
                checkpoint,
                episode_seed,
                ..Inputs::default()
            };
            execute("export-trace", common, vec![], inputs)
        }
        Command::Rerun {
            manifest,
            out,
            overwrite,
        } => commands::rerun(&manifest, &out, overwrite),
    }
}

/// Parse and run; clap usage errors exit with status 2.
pub fn main_from<I, T>(args: I) -> Result<RunManifest>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(Cli::parse_from(args))
}
