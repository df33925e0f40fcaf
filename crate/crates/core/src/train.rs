//! Shared training-loop machinery: windowed parallel gradient accumulation,
//! per-epoch logs, and checkpoint metadata.
//!
//! Gradients for the tasks of a mini-batch are computed on independent tapes
//! (parameters are shared read-only) and folded into the store in task order,
//! so results are bit-identical regardless of the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::ParamStore;
use crate::error::Result;

/// Tasks per parallel window; bounds peak memory while keeping the gradient
/// summation order fixed.
const WINDOW: usize = 8;

/// Per-task gradient plus whatever scalar statistics the caller logs.
pub struct TaskGrad {
    pub grads: Vec<(String, Vec<f64>)>,
    pub stats: Vec<f64>,
}

/// Compute per-item gradients for one mini-batch and fold them into the
/// store's accumulators in item order, then scale by `scale` (callers pass
/// the reciprocal of the task count for a batch mean). Returns per-item
/// stats in item order.
pub fn accumulate_batch<T, F>(
    store: &mut ParamStore,
    batch: &[T],
    scale: f64,
    job: F,
) -> Result<Vec<Vec<f64>>>
where
    T: Sync,
    F: Fn(&ParamStore, &T) -> Result<TaskGrad> + Sync,
{
    let mut all_stats = Vec::with_capacity(batch.len());
    store.zero_grads();
    for window in batch.chunks(WINDOW) {
        let results: Vec<Result<TaskGrad>> = window
            .par_iter()
            .map(|task| job(&*store, task))
            .collect();
        for r in results {
            let r = r?;
            for (name, g) in &r.grads {
                store.accumulate_grad(name, g)?;
            }
            all_stats.push(r.stats);
        }
    }
    store.scale_grads(scale);
    Ok(all_stats)
}

/// Run `f` on a rayon pool of `jobs` threads (1 = serial).
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    pool.install(f)
}

/// One epoch's mean losses.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Reconstruction loss for the generator, MSE for the predictor.
    pub loss: f64,
    /// KL term (zero for the predictor).
    pub kl: f64,
    pub total: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,kl,total,wall_ms\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.loss, e.kl, e.total, e.wall_ms
            ));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.epochs
            .iter()
            .all(|e| e.loss.is_finite() && e.kl.is_finite() && e.total.is_finite())
    }
}

/// Metadata stored inside every checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs_done: usize,
    pub config: serde_json::Value,
    pub code_version: String,
}

impl TrainMeta {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable meta")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn code_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}
