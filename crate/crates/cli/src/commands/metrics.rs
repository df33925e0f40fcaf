use std::collections::HashSet;
use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use serde::Serialize;

use setnas_core::generator::{
    generate_candidates, generation_metrics, load_generator, GenerationMetrics, SampleSource,
};
use setnas_core::predictor::{load_predictor, pearson, predict_tasks};
use setnas_core::rng::derive;
use setnas_core::space::CellSpec;
use setnas_core::taskdb::load_db;

use crate::config::{out_path, FileConfig};

#[derive(Parser, Debug)]
pub struct Args {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub generator: PathBuf,
    #[arg(long)]
    pub predictor: PathBuf,
    /// Decodes per sampling source (must be positive).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Validation datasets used for posterior sampling.
    #[arg(long)]
    pub n_eval_tasks: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Params {
    db: String,
    generator: String,
    predictor: String,
    n: u64,
    n_eval_tasks: usize,
    seed: u64,
}

#[derive(Serialize)]
struct Report {
    prior: GenerationMetrics,
    posterior: GenerationMetrics,
    pearson_r: f64,
    pearson_tasks: usize,
}

pub fn run(args: Args, file: &FileConfig) -> Result<()> {
    let db = load_db(&args.db)?;
    let seed = file.resolve(args.seed, "seed", 0)?;
    let n_eval_tasks = file.resolve(args.n_eval_tasks, "n_eval_tasks", 10)?;
    let n = args.n as usize;

    let generator = load_generator(&args.generator)?;
    let predictor = load_predictor(&args.predictor)?;
    let training_cells: HashSet<CellSpec> = db.train_tasks().iter().map(|t| t.cell).collect();
    let val = db.val_tasks();
    anyhow::ensure!(!val.is_empty(), "task db has no validation tasks");
    let eval_tasks: Vec<_> = val.iter().take(n_eval_tasks.max(1)).copied().collect();

    // Prior: n decodes of z ~ N(0, I).
    let prior_traces = generate_candidates(
        &generator.store,
        &generator.model,
        &eval_tasks[0].dataset,
        n,
        SampleSource::Prior,
        derive(seed, "metrics-prior", 0),
    )?;
    let prior = generation_metrics(&prior_traces, &training_cells)?;

    // Posterior: n decodes split across the evaluation datasets.
    let per = n.div_ceil(eval_tasks.len());
    let mut post_traces = Vec::with_capacity(n);
    for (i, task) in eval_tasks.iter().enumerate() {
        if post_traces.len() >= n {
            break;
        }
        let want = per.min(n - post_traces.len());
        post_traces.extend(generate_candidates(
            &generator.store,
            &generator.model,
            &task.dataset,
            want,
            SampleSource::Posterior,
            derive(seed, "metrics-posterior", i as u64),
        )?);
    }
    let posterior = generation_metrics(&post_traces, &training_cells)?;

    // Predictor correlation on the held-out split.
    let (preds, truths) = predict_tasks(&predictor.model, &predictor.store, &val)?;
    let r = pearson(&preds, &truths)?;

    println!(
        "prior:     validity {:.4} uniqueness {} novelty {}",
        prior.validity,
        opt(prior.uniqueness),
        opt(prior.novelty)
    );
    println!(
        "posterior: validity {:.4} uniqueness {} novelty {}",
        posterior.validity,
        opt(posterior.uniqueness),
        opt(posterior.novelty)
    );
    println!("pearson r over {} held-out tasks: {:.4}", val.len(), r);

    let params = Params {
        db: args.db.display().to_string(),
        generator: args.generator.display().to_string(),
        predictor: args.predictor.display().to_string(),
        n: args.n,
        n_eval_tasks: eval_tasks.len(),
        seed,
    };
    let report = Report {
        prior,
        posterior,
        pearson_r: r,
        pearson_tasks: val.len(),
    };
    let path = out_path(&args.out);
    super::write_artifact(&path, "metrics", params, report)?;
    println!("wrote report {}", path.display());
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.4}"),
        None => "undefined".to_string(),
    }
}
