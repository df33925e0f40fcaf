use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};

use setnas_core::generator::{
    load_generator, save_generator, train_generator, GeneratorConfig, ResumeState,
};
use setnas_core::predictor::{
    self, load_predictor, save_predictor, train_predictor, PredictorConfig,
};
use setnas_core::taskdb::load_db;
use setnas_core::train::TrainLog;

use crate::config::{out_path, FileConfig};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Model {
    Generator,
    Predictor,
}

#[derive(Parser, Debug)]
pub struct Args {
    #[arg(long, value_enum)]
    pub model: Model,
    /// Task DB directory.
    #[arg(long)]
    pub db: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from an existing checkpoint; --epochs adds further epochs.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Per-epoch loss CSV path (default: the checkpoint path with .csv).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// KL weight (generator only).
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Graph-encoder hidden width (predictor only).
    #[arg(long)]
    pub graph_hidden: Option<usize>,
}

pub fn run(args: Args, file: &FileConfig) -> Result<()> {
    let db = load_db(&args.db)?;
    let tasks = db.train_tasks();
    let out = out_path(&args.out);
    let log_path = args
        .log
        .map(|p| out_path(&p))
        .unwrap_or_else(|| out.with_extension("csv"));
    let seed = file.resolve(args.seed, "seed", 0)?;
    let jobs = file.resolve(args.jobs, "jobs", 1)?;

    let log: TrainLog = match args.model {
        Model::Generator => {
            let (mut cfg, resume) = match &args.resume {
                Some(path) => {
                    let loaded = load_generator(path)?;
                    let opt = loaded
                        .opt
                        .context("checkpoint has no optimizer state; cannot resume")?;
                    (
                        loaded.cfg,
                        Some((loaded.store, opt, loaded.meta.epochs_done, loaded.meta.seed)),
                    )
                }
                None => {
                    let mut cfg = GeneratorConfig::default();
                    cfg.encoder.d_x = db.manifest.d_x;
                    cfg.lambda = file.resolve(args.lambda, "lambda", cfg.lambda)?;
                    cfg.lr = file.resolve(args.lr, "lr", cfg.lr)?;
                    cfg.batch_size = file.resolve(args.batch_size, "batch_size", cfg.batch_size)?;
                    (cfg, None)
                }
            };
            if cfg.encoder.d_x != db.manifest.d_x {
                bail!(
                    "checkpoint expects {}-dim features, db has {}",
                    cfg.encoder.d_x,
                    db.manifest.d_x
                );
            }
            cfg.epochs = file.resolve(args.epochs, "epochs", cfg.epochs)?;
            cfg.jobs = jobs;
            let (seed, resume_state) = match resume {
                Some((store, opt, epochs_done, stored_seed)) => (
                    stored_seed,
                    Some(ResumeState {
                        store,
                        opt,
                        epochs_done,
                    }),
                ),
                None => (seed, None),
            };
            let trained = train_generator(&tasks, &cfg, seed, resume_state)?;
            save_generator(&out, &trained.store, &trained.opt, &cfg, seed, trained.epochs_done)?;
            println!(
                "wrote generator checkpoint {} ({} epochs done, step {})",
                out.display(),
                trained.epochs_done,
                trained.opt.step
            );
            trained.log
        }
        Model::Predictor => {
            let (mut cfg, resume) = match &args.resume {
                Some(path) => {
                    let loaded = load_predictor(path)?;
                    let opt = loaded
                        .opt
                        .context("checkpoint has no optimizer state; cannot resume")?;
                    (
                        loaded.cfg,
                        Some((loaded.store, opt, loaded.meta.epochs_done, loaded.meta.seed)),
                    )
                }
                None => {
                    let mut cfg = PredictorConfig::default();
                    cfg.encoder.d_x = db.manifest.d_x;
                    cfg.graph.d_h = file.resolve(args.graph_hidden, "graph_hidden", cfg.graph.d_h)?;
                    cfg.lr = file.resolve(args.lr, "lr", cfg.lr)?;
                    cfg.batch_size = file.resolve(args.batch_size, "batch_size", cfg.batch_size)?;
                    (cfg, None)
                }
            };
            if cfg.encoder.d_x != db.manifest.d_x {
                bail!(
                    "checkpoint expects {}-dim features, db has {}",
                    cfg.encoder.d_x,
                    db.manifest.d_x
                );
            }
            cfg.epochs = file.resolve(args.epochs, "epochs", cfg.epochs)?;
            cfg.jobs = jobs;
            let (seed, resume_state) = match resume {
                Some((store, opt, epochs_done, stored_seed)) => (
                    stored_seed,
                    Some(predictor::ResumeState {
                        store,
                        opt,
                        epochs_done,
                    }),
                ),
                None => (seed, None),
            };
            let trained = train_predictor(&tasks, &cfg, seed, resume_state)?;
            save_predictor(&out, &trained.store, &trained.opt, &cfg, seed, trained.epochs_done)?;
            println!(
                "wrote predictor checkpoint {} ({} epochs done, step {})",
                out.display(),
                trained.epochs_done,
                trained.opt.step
            );
            trained.log
        }
    };

    for e in &log.epochs {
        println!(
            "epoch {}: loss {:.6} kl {:.6} total {:.6} ({} ms)",
            e.epoch, e.loss, e.kl, e.total, e.wall_ms
        );
    }
    std::fs::write(&log_path, log.to_csv())
        .with_context(|| format!("writing loss csv {}", log_path.display()))?;
    println!("wrote loss csv {}", log_path.display());
    Ok(())
}
