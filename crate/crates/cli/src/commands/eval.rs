use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Parser;
use serde::Serialize;

use setnas_core::generator::load_generator;
use setnas_core::pipeline::{run_ablation, AblationRow, EvalMode};
use setnas_core::predictor::load_predictor;
use setnas_core::setenc::Dataset;
use setnas_core::taskdb::load_db;
use setnas_core::train::with_jobs;

use crate::config::{out_path, FileConfig};

#[derive(Parser, Debug)]
pub struct Args {
    /// Task DB with held-out (validation) datasets and the oracle.
    #[arg(long)]
    pub db: PathBuf,
    /// Comma-separated subset of random,gen_only,pred_only,full.
    #[arg(long)]
    pub modes: Option<String>,
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    /// Seeds per mode.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub n_candidates: Option<usize>,
    /// Held-out datasets to evaluate on (prefix of the validation split).
    #[arg(long)]
    pub n_eval_tasks: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Params {
    db: String,
    modes: Vec<EvalMode>,
    seeds: u64,
    n_candidates: usize,
    n_eval_tasks: usize,
    seed: u64,
}

#[derive(Serialize)]
struct Report {
    rows: Vec<AblationRow>,
}

pub fn run(args: Args, file: &FileConfig) -> Result<()> {
    let db = load_db(&args.db)?;
    let modes: Vec<EvalMode> = match file.resolve(args.modes, "modes", String::new())? {
        s if s.is_empty() => EvalMode::ALL.to_vec(),
        s => s
            .split(',')
            .map(|m| EvalMode::parse(m.trim()))
            .collect::<setnas_core::Result<Vec<_>>>()?,
    };
    let seeds = file.resolve(args.seeds, "seeds", 10)?;
    let n_candidates = file.resolve(args.n_candidates, "n_candidates", 50)?;
    let n_eval_tasks = file.resolve(args.n_eval_tasks, "n_eval_tasks", 10)?;
    let seed = file.resolve(args.seed, "seed", 0)?;
    let jobs = file.resolve(args.jobs, "jobs", 1)?;

    let generator = match &args.generator {
        Some(p) => Some(load_generator(p)?),
        None => None,
    };
    let predictor = match &args.predictor {
        Some(p) => Some(load_predictor(p)?),
        None => None,
    };
    for mode in &modes {
        if mode.needs_generator() && generator.is_none() {
            bail!("mode {} needs --generator", mode.label());
        }
        if mode.needs_predictor() && predictor.is_none() {
            bail!("mode {} needs --predictor", mode.label());
        }
    }

    let val = db.val_tasks();
    if val.is_empty() {
        bail!("task db has no validation tasks to evaluate on");
    }
    let datasets: Vec<&Dataset> = val.iter().take(n_eval_tasks).map(|t| &t.dataset).collect();

    let rows = with_jobs(jobs, || {
        run_ablation(
            &modes,
            generator.as_ref().map(|g| (&g.store, &g.model)),
            predictor.as_ref().map(|p| (&p.store, &p.model)),
            &datasets,
            &db.oracle,
            n_candidates,
            seeds,
            seed,
        )
    })?;

    println!("mode        mean±std (oracle accuracy points over {seeds} seeds)");
    for row in &rows {
        println!(
            "{:<11} {:6.2} ± {:.2}",
            row.mode.label(),
            row.mean_points,
            row.std_points
        );
    }

    let params = Params {
        db: args.db.display().to_string(),
        modes,
        seeds,
        n_candidates,
        n_eval_tasks: datasets.len(),
        seed,
    };
    let path = out_path(&args.out);
    super::write_artifact(&path, "eval", params, Report { rows })?;
    println!("wrote report {}", path.display());
    Ok(())
}
