//! Command-line orchestration: build synthetic task DBs, train the generator
//! and predictor, search architectures for a target dataset, run the
//! four-way ablation, compute generation/prediction metrics, and run the
//! gradient self-check.

pub mod commands;
pub mod config;
pub mod transcripts;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "setnas",
    version,
    about = "Dataset-conditioned architecture generation and ranking on the NAS-Bench-201 cell space"
)]
pub struct Cli {
    /// Optional key=value config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic task DB (datasets, cells, oracle accuracies).
    GenTasks(commands::gen_tasks::Args),
    /// Train the generator or the predictor on a task DB.
    Train(commands::train::Args),
    /// Generate candidates for a target dataset and rank them.
    Search(commands::search::Args),
    /// Four-way ablation: random / gen_only / pred_only / full.
    Eval(commands::eval::Args),
    /// Generation validity/uniqueness/novelty plus predictor Pearson r.
    Metrics(commands::metrics::Args),
    /// Finite-difference gradient self-check over all primitives and losses.
    Gradcheck(commands::gradcheck::Args),
}

/// Run a parsed command; errors map to exit code 1 in `main`.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let file_cfg = config::FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenTasks(args) => commands::gen_tasks::run(args, &file_cfg),
        Command::Train(args) => commands::train::run(args, &file_cfg),
        Command::Search(args) => commands::search::run(args, &file_cfg),
        Command::Eval(args) => commands::eval::run(args, &file_cfg),
        Command::Metrics(args) => commands::metrics::run(args, &file_cfg),
        Command::Gradcheck(args) => commands::gradcheck::run(args, &file_cfg),
    }
}
