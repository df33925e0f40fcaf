use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;

use setnas_core::taskdb::{build_db, DbConfig};

use crate::config::{out_path, FileConfig};

#[derive(Parser, Debug)]
pub struct Args {
    /// Output directory for tasks.jsonl, manifest.json, oracle.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Probability a task's cell lies within Hamming distance 1 of its
    /// dataset's target cell (1.0 suits the generator, lower mixes in
    /// random cells for predictor coverage).
    #[arg(long)]
    pub good_cell_fraction: Option<f64>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub instances_per_class: Option<usize>,
    #[arg(long)]
    pub d_x: Option<usize>,
}

pub fn run(args: Args, file: &FileConfig) -> Result<()> {
    let d = DbConfig::default();
    let cfg = DbConfig {
        n_train: file.resolve(args.n_train, "n_train", d.n_train)?,
        n_val: file.resolve(args.n_val, "n_val", d.n_val)?,
        seed: file.resolve(args.seed, "seed", d.seed)?,
        good_cell_fraction: file.resolve(
            args.good_cell_fraction,
            "good_cell_fraction",
            d.good_cell_fraction,
        )?,
        classes: file.resolve(args.classes, "classes", d.classes)?,
        instances_per_class: file.resolve(
            args.instances_per_class,
            "instances_per_class",
            d.instances_per_class,
        )?,
        d_x: file.resolve(args.d_x, "d_x", d.d_x)?,
    };
    let dir = out_path(&args.out);
    let db = build_db(&dir, &cfg)?;
    println!(
        "wrote task db to {}: {} train / {} val tasks (seed {})",
        dir.display(),
        db.manifest.n_train,
        db.manifest.n_val,
        db.manifest.seed
    );
    Ok(())
}
