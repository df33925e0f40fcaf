use std::collections::HashSet;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::Parser;
use serde::Serialize;

use setnas_core::generator::{load_generator, SampleSource};
use setnas_core::pipeline::run_search;
use setnas_core::predictor::load_predictor;
use setnas_core::setenc::Dataset;
use setnas_core::space::CellSpec;
use setnas_core::taskdb::{load_db, oracle_accuracy_noiseless, read_dataset_json};

use crate::config::{out_path, FileConfig};

#[derive(Parser, Debug)]
pub struct Args {
    #[arg(long)]
    pub generator: PathBuf,
    #[arg(long)]
    pub predictor: PathBuf,
    /// Task DB (novelty reference; also the source of --task-id datasets).
    #[arg(long)]
    pub db: PathBuf,
    /// Target dataset by task id from the DB.
    #[arg(long, conflicts_with = "dataset_file")]
    pub task_id: Option<u64>,
    /// External target dataset (JSON dataset block, one line).
    #[arg(long)]
    pub dataset_file: Option<PathBuf>,
    #[arg(long)]
    pub n_candidates: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where search latents come from: the dataset posterior or the prior.
    #[arg(long, value_parser = ["posterior", "prior"])]
    pub sample_source: Option<String>,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Rankings JSONL path (default: report path with .jsonl).
    #[arg(long)]
    pub rankings: Option<PathBuf>,
}

#[derive(Serialize)]
struct Params {
    generator: String,
    predictor: String,
    db: String,
    target: String,
    n_candidates: usize,
    top_k: usize,
    seed: u64,
    sample_source: SampleSource,
}

#[derive(Serialize)]
struct Report {
    target: String,
    n_candidates: usize,
    metrics: setnas_core::generator::GenerationMetrics,
    ranked: Vec<setnas_core::predictor::RankedCandidate>,
    selected_cell: CellSpec,
    /// Expected oracle accuracy of the selected cell, when the target came
    /// from a task DB with its oracle.
    oracle_accuracy: Option<f64>,
}

pub fn run(args: Args, file: &FileConfig) -> Result<()> {
    let t0 = Instant::now();
    let db = load_db(&args.db)?;
    let (dataset, target_label): (Dataset, String) = match (&args.task_id, &args.dataset_file) {
        (Some(id), None) => {
            let task = db
                .task(*id)
                .ok_or_else(|| anyhow::anyhow!("task id {id} not found in {}", args.db.display()))?;
            (task.dataset.clone(), format!("task:{id}"))
        }
        (None, Some(path)) => (read_dataset_json(path)?, format!("file:{}", path.display())),
        (None, None) => bail!("one of --task-id or --dataset-file is required"),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    let n_candidates = file.resolve(args.n_candidates, "n_candidates", 500)?;
    let top_k = file.resolve(args.top_k, "top_k", 30)?;
    let seed = file.resolve(args.seed, "seed", 0)?;
    let source = match file
        .resolve(args.sample_source, "sample_source", "posterior".to_string())?
        .as_str()
    {
        "prior" => SampleSource::Prior,
        _ => SampleSource::Posterior,
    };

    let generator = load_generator(&args.generator)?;
    let predictor = load_predictor(&args.predictor)?;
    let training_cells: HashSet<CellSpec> = db.train_tasks().iter().map(|t| t.cell).collect();

    let outcome = run_search(
        &generator.store,
        &generator.model,
        &predictor.store,
        &predictor.model,
        &dataset,
        n_candidates,
        top_k,
        source,
        seed,
        &training_cells,
    )?;

    let oracle_accuracy = args
        .task_id
        .map(|_| oracle_accuracy_noiseless(&dataset, &outcome.selected, &db.oracle));

    let report_path = out_path(&args.out);
    let rankings_path = args
        .rankings
        .map(|p| out_path(&p))
        .unwrap_or_else(|| report_path.with_extension("jsonl"));

    let mut jsonl = String::new();
    for r in &outcome.ranked {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    std::fs::write(&rankings_path, jsonl)?;

    let params = Params {
        generator: args.generator.display().to_string(),
        predictor: args.predictor.display().to_string(),
        db: args.db.display().to_string(),
        target: target_label.clone(),
        n_candidates,
        top_k,
        seed,
        sample_source: source,
    };
    let report = Report {
        target: target_label,
        n_candidates: outcome.n_candidates,
        metrics: outcome.metrics.clone(),
        ranked: outcome.ranked.clone(),
        selected_cell: outcome.selected,
        oracle_accuracy,
    };
    super::write_artifact(&report_path, "search", params, report)?;

    println!(
        "selected {} (validity {:.4}, {} ranked)",
        outcome.selected,
        outcome.metrics.validity,
        outcome.ranked.len()
    );
    if let Some(acc) = oracle_accuracy {
        println!("oracle accuracy of selected cell: {acc:.4}");
    }
    println!("wrote report {}", report_path.display());
    println!("wrote rankings {}", rankings_path.display());
    // Timing is reported on the console only, so reports stay byte-stable
    // across runs with equal seeds.
    println!("search wall clock: {} ms", t0.elapsed().as_millis());
    Ok(())
}
