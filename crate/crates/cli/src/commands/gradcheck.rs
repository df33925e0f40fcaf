use anyhow::{bail, Result};
use clap::Parser;

use setnas_core::diag::gradient_suite;

use crate::config::FileConfig;

#[derive(Parser, Debug)]
pub struct Args {
    /// Random points per primitive.
    #[arg(long)]
    pub points: Option<usize>,
    /// Test hook: perturb the named item's finite-difference reference so
    /// the detection path is exercised.
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

pub fn run(args: Args, file: &FileConfig) -> Result<()> {
    let points = file.resolve(args.points, "points", 10)?;
    let items = gradient_suite(points, args.corrupt.as_deref())?;
    let mut failed = Vec::new();
    for item in &items {
        let status = if item.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<24} max rel err {:.3e} (threshold {:.0e})",
            item.name, item.max_rel_err, item.threshold
        );
        if !item.passed() {
            failed.push(item.name.clone());
        }
    }
    if !failed.is_empty() {
        bail!("gradient check failed for: {}", failed.join(", "));
    }
    println!("all {} gradient checks passed", items.len());
    Ok(())
}
