//! Meta-performance predictor: scores (dataset, architecture) pairs and
//! ranks generated candidates.
//!
//! The dataset branch is its own set-encoder instance read out at the
//! posterior mean; the architecture branch is the bidirectional graph
//! encoder. Their concatenation feeds two linear layers with a relu between
//! them; the output is an unbounded real interpreted on the [0, 1] accuracy
//! scale. Training minimizes squared error against task accuracies.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::decoder::DecodeTrace;
use crate::diffcore::tape::{Tape, Var};
use crate::diffcore::{optimizer_step, OptimizerState, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::graphenc::{GraphEncoder, GraphEncoderConfig};
use crate::rng::{derive, rng_from};
use crate::setenc::{Dataset, EncoderConfig, SetEncoder};
use crate::space::{dag_to_cell, is_valid, ArchDag, CellSpec};
use crate::taskdb::TaskRecord;
use crate::train::{with_jobs, EpochStats, TrainLog};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub head_hidden: usize,
    pub encoder: EncoderConfig,
    pub graph: GraphEncoderConfig,
    pub jobs: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            lr: 1e-4,
            batch_size: 32,
            epochs: 100,
            head_hidden: 256,
            encoder: EncoderConfig::default(),
            graph: GraphEncoderConfig::default(),
            jobs: 1,
        }
    }
}

/// A scored candidate; ranks start at 1 and follow descending predicted
/// accuracy with ties broken by the canonical cell string.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub rank: usize,
    pub cell: CellSpec,
    pub predicted_accuracy: f64,
}

pub struct Predictor {
    pub encoder: SetEncoder,
    pub graph: GraphEncoder,
    head1: crate::diffcore::nn::Linear,
    head2: crate::diffcore::nn::Linear,
}

impl Predictor {
    pub fn init(cfg: &PredictorConfig, seed: u64) -> Result<(ParamStore, Predictor)> {
        let mut store = ParamStore::new();
        let mut rng = rng_from(derive(seed, "predictor-init", 0));
        let encoder = SetEncoder::new(&mut store, "enc", cfg.encoder, &mut rng)?;
        let graph = GraphEncoder::new(&mut store, "graph", cfg.graph, &mut rng)?;
        let joint = 2 * cfg.graph.d_h + cfg.encoder.d_z;
        let head1 =
            crate::diffcore::nn::Linear::new(&mut store, "head.l1", joint, cfg.head_hidden, &mut rng)?;
        let head2 =
            crate::diffcore::nn::Linear::new(&mut store, "head.l2", cfg.head_hidden, 1, &mut rng)?;
        Ok((
            store,
            Predictor {
                encoder,
                graph,
                head1,
                head2,
            },
        ))
    }

    /// Rebuild the module structure over a loaded parameter store.
    pub fn attach(cfg: &PredictorConfig, store: &ParamStore) -> Result<Predictor> {
        let (fresh, model) = Predictor::init(cfg, 0)?;
        if fresh.len() != store.len() {
            return Err(Error::ShapeMismatch {
                op: "predictor_attach",
                lhs: vec![fresh.len()],
                rhs: vec![store.len()],
            });
        }
        for (name, t) in fresh.iter() {
            if store.get(name)?.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "predictor_attach",
                    lhs: t.shape().to_vec(),
                    rhs: store.get(name)?.shape().to_vec(),
                });
            }
        }
        Ok(model)
    }

    /// Head over concatenated `[graph ‖ mu]` rows; `[n, 1]` out.
    fn head_on(&self, tape: &mut Tape, store: &ParamStore, joint: Var) -> Result<Var> {
        let h = self.head1.apply(tape, store, joint)?;
        let h = tape.relu(h);
        self.head2.apply(tape, store, h)
    }

    /// Prediction as a tape scalar (for training).
    pub fn predict_on(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        dataset: &Dataset,
        dag: &ArchDag,
    ) -> Result<Var> {
        let (mu, _logvar) = self.encoder.encode(tape, store, dataset)?;
        let graph = self.graph.encode_bidirectional_on(tape, store, dag)?;
        let joint = tape.concat_cols(&[graph, mu])?;
        self.head_on(tape, store, joint)
    }

    /// Deterministic scalar prediction.
    pub fn predict(&self, store: &ParamStore, dataset: &Dataset, dag: &ArchDag) -> Result<f64> {
        let mut tape = Tape::new();
        let out = self.predict_on(&mut tape, store, dataset, dag)?;
        let v = tape.scalar_value(out);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "predictor output".to_string(),
            });
        }
        Ok(v)
    }

    /// Score many cells against one dataset: the dataset is encoded once,
    /// each distinct cell once, and distinct cells run through the graph
    /// encoder in batches.
    pub fn score_cells(
        &self,
        store: &ParamStore,
        dataset: &Dataset,
        cells: &[CellSpec],
    ) -> Result<Vec<f64>> {
        const SCORING_BATCH: usize = 64;
        let mut tape = Tape::new();
        let (mu, _) = self.encoder.encode(&mut tape, store, dataset)?;
        let mut distinct: Vec<CellSpec> = Vec::new();
        let mut cache: HashMap<CellSpec, f64> = HashMap::new();
        for cell in cells {
            if !cache.contains_key(cell) {
                cache.insert(*cell, f64::NAN);
                distinct.push(*cell);
            }
        }
        for chunk in distinct.chunks(SCORING_BATCH) {
            let dags: Vec<crate::space::ArchDag> =
                chunk.iter().map(crate::space::cell_to_dag).collect();
            let dag_refs: Vec<&crate::space::ArchDag> = dags.iter().collect();
            let graph = self
                .graph
                .encode_bidirectional_batch_on(&mut tape, store, &dag_refs)?;
            let mu_rep = tape.concat_rows(&vec![mu; chunk.len()])?;
            let joint = tape.concat_cols(&[graph, mu_rep])?;
            let preds = self.head_on(&mut tape, store, joint)?;
            let values = tape.value(preds).data().to_vec();
            for (cell, v) in chunk.iter().zip(values) {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: "predictor output".to_string(),
                    });
                }
                cache.insert(*cell, v);
            }
        }
        Ok(cells.iter().map(|c| cache[c]).collect())
    }
}

pub struct ResumeState {
    pub store: ParamStore,
    pub opt: OptimizerState,
    pub epochs_done: usize,
}

pub struct TrainedPredictor {
    pub store: ParamStore,
    pub opt: OptimizerState,
    pub log: TrainLog,
    pub epochs_done: usize,
    pub model: Predictor,
}

/// Mini-batch MSE training against task accuracies (which must lie in
/// [0, 1]). Epoch randomness derives from `(seed, epoch)`, so resume
/// continues the exact uninterrupted trajectory.
pub fn train_predictor(
    tasks: &[&TaskRecord],
    cfg: &PredictorConfig,
    seed: u64,
    resume: Option<ResumeState>,
) -> Result<TrainedPredictor> {
    if tasks.is_empty() {
        return Err(Error::EmptyTasks);
    }
    for t in tasks {
        if !(0.0..=1.0).contains(&t.accuracy) {
            return Err(Error::AccuracyOutOfRange { value: t.accuracy });
        }
    }
    let (store, opt, start_epoch) = match resume {
        Some(r) => (r.store, r.opt, r.epochs_done),
        None => {
            let (store, _) = Predictor::init(cfg, seed)?;
            let opt = OptimizerState::new(&store, cfg.lr);
            (store, opt, 0)
        }
    };
    let model = Predictor::attach(cfg, &store)?;
    let mut store = store;
    let mut opt = opt;
    let mut log = TrainLog::default();

    // Graph targets are fixed per task; build them once.
    let dags: Vec<ArchDag> = tasks.iter().map(|t| crate::space::cell_to_dag(&t.cell)).collect();

    with_jobs(cfg.jobs, || -> Result<()> {
        for epoch in start_epoch..start_epoch + cfg.epochs {
            let t0 = Instant::now();
            let mut rng = rng_from(derive(seed, "predictor-epoch", epoch as u64));
            let mut order: Vec<usize> = (0..tasks.len()).collect();
            order.shuffle(&mut rng);

            let mut sum = 0.0;
            let mut count = 0usize;
            for batch_idx in order.chunks(cfg.batch_size.max(1)) {
                let per_task =
                    predictor_batch_step(&mut store, &model, tasks, &dags, batch_idx)?;
                for s in &per_task {
                    sum += s;
                    count += 1;
                }
                optimizer_step(&mut store, &mut opt)?;
            }
            let mse = sum / count.max(1) as f64;
            log.epochs.push(EpochStats {
                epoch,
                loss: mse,
                kl: 0.0,
                total: mse,
                wall_ms: t0.elapsed().as_millis() as u64,
            });
        }
        Ok(())
    })?;

    Ok(TrainedPredictor {
        store,
        opt,
        log,
        epochs_done: start_epoch + cfg.epochs,
        model,
    })
}

/// One mini-batch gradient step, staged so the expensive graph encoder runs
/// batched over the whole mini-batch while the per-dataset set encoders run
/// on parallel per-task tapes. The dataset means cross between the stages as
/// explicit leaves whose gradients re-seed the per-task backward sweeps.
/// Gradients fold in task order, so results do not depend on the worker
/// count. Returns per-task squared errors in batch order.
fn predictor_batch_step(
    store: &mut ParamStore,
    model: &Predictor,
    tasks: &[&TaskRecord],
    dags: &[ArchDag],
    batch_idx: &[usize],
) -> Result<Vec<f64>> {
    use rayon::prelude::*;

    store.zero_grads();
    let d_z = model.encoder.cfg.d_z;

    // Stage A: encode every dataset of the batch on its own tape.
    let mut encoder_tapes: Vec<(Tape, Var)> = batch_idx
        .par_iter()
        .map(|&i| -> Result<(Tape, Var)> {
            let mut tape = Tape::new();
            let (mu, _) = model.encoder.encode(&mut tape, &*store, &tasks[i].dataset)?;
            Ok((tape, mu))
        })
        .collect::<Result<Vec<_>>>()?;

    // Stage B: one tape for the batched graph encoder and head.
    let mut mu_rows = Vec::with_capacity(batch_idx.len() * d_z);
    for (tape, mu) in &encoder_tapes {
        mu_rows.extend_from_slice(tape.value(*mu).data());
    }
    let mut tape = Tape::new();
    let mu_leaf = tape.leaf(
        Tensor::from_vec(vec![batch_idx.len(), d_z], mu_rows)?.with_requires_grad(true),
    );
    let dag_refs: Vec<&ArchDag> = batch_idx.iter().map(|&i| &dags[i]).collect();
    let graph = model
        .graph
        .encode_bidirectional_batch_on(&mut tape, store, &dag_refs)?;
    let joint = tape.concat_cols(&[graph, mu_leaf])?;
    let preds = model.head_on(&mut tape, store, joint)?;
    let targets = tape.constant(Tensor::from_vec(
        vec![batch_idx.len(), 1],
        batch_idx.iter().map(|&i| tasks[i].accuracy).collect(),
    )?);
    let diff = tape.sub(preds, targets)?;
    let sq = tape.square(diff);
    let per_task = tape.value(sq).data().to_vec();
    let loss = tape.sum_all(sq);
    tape.backward(loss)?;
    tape.accumulate_param_grads(store)?;
    let mu_grad = tape.grad(mu_leaf).ok_or_else(|| Error::MissingGradient {
        name: "dataset-mean leaf".to_string(),
    })?;

    // Stage C: push the mean gradients back through each encoder tape.
    let grad_lists: Vec<Result<Vec<(String, Vec<f64>)>>> = encoder_tapes
        .par_iter_mut()
        .enumerate()
        .map(|(row, (tape, mu))| {
            let seed = mu_grad.row_slice(row);
            tape.backward_seeded(*mu, seed)?;
            let mut grads = Vec::new();
            tape.collect_bound_grads(&mut grads);
            Ok(grads)
        })
        .collect();
    for grads in grad_lists {
        for (name, g) in grads? {
            store.accumulate_grad(&name, &g)?;
        }
    }
    store.scale_grads(1.0 / batch_idx.len() as f64);
    Ok(per_task)
}

/// Write a predictor checkpoint with its config in the metadata.
pub fn save_predictor(
    path: &std::path::Path,
    store: &ParamStore,
    opt: &OptimizerState,
    cfg: &PredictorConfig,
    seed: u64,
    epochs_done: usize,
) -> Result<()> {
    // Canonicalize invocation-specific fields so a resumed run writes the
    // same bytes as an uninterrupted one.
    let mut canonical = cfg.clone();
    canonical.epochs = epochs_done;
    canonical.jobs = 1;
    let meta = crate::train::TrainMeta {
        seed,
        epochs_done,
        config: serde_json::to_value(&canonical)?,
        code_version: crate::train::code_version(),
    };
    crate::diffcore::checkpoint::save(path, store, Some(opt), "predictor", &meta.to_json())
}

pub struct LoadedPredictor {
    pub store: ParamStore,
    pub opt: Option<OptimizerState>,
    pub cfg: PredictorConfig,
    pub meta: crate::train::TrainMeta,
    pub model: Predictor,
}

pub fn load_predictor(path: &std::path::Path) -> Result<LoadedPredictor> {
    let ck = crate::diffcore::checkpoint::load(path)?;
    if ck.component != "predictor" {
        return Err(Error::Parse {
            input: ck.component,
            what: "predictor checkpoint (component tag)",
        });
    }
    let meta = crate::train::TrainMeta::from_json(&ck.meta_json)?;
    let cfg: PredictorConfig = serde_json::from_value(meta.config.clone())?;
    let model = Predictor::attach(&cfg, &ck.params)?;
    Ok(LoadedPredictor {
        store: ck.params,
        opt: ck.optimizer,
        cfg,
        meta,
        model,
    })
}

/// Predictions for a set of tasks against their stored accuracies, as the
/// inputs to a Pearson evaluation.
pub fn predict_tasks(
    model: &Predictor,
    store: &ParamStore,
    tasks: &[&TaskRecord],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut preds = Vec::with_capacity(tasks.len());
    let mut truths = Vec::with_capacity(tasks.len());
    for t in tasks {
        let score = model.score_cells(store, &t.dataset, &[t.cell])?[0];
        preds.push(score);
        truths.push(t.accuracy);
    }
    Ok((preds, truths))
}

/// Sample Pearson correlation coefficient.
pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            op: "pearson",
            lhs: vec![pred.len()],
            rhs: vec![truth.len()],
        });
    }
    if pred.len() < 2 {
        return Err(Error::TooFewValues {
            need: 2,
            got: pred.len(),
        });
    }
    let n = pred.len() as f64;
    let mx = pred.iter().sum::<f64>() / n;
    let my = truth.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in pred.iter().zip(truth) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Order scored cells: descending score, ties by ascending canonical string.
fn rank_by_score(mut scored: Vec<(CellSpec, f64)>, top_k: usize) -> Vec<RankedCandidate> {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.render().cmp(&b.0.render()))
    });
    scored
        .into_iter()
        .take(top_k)
        .enumerate()
        .map(|(i, (cell, score))| RankedCandidate {
            rank: i + 1,
            cell,
            predicted_accuracy: score,
        })
        .collect()
}

/// Filter invalid decodes, score the valid cells, and return the top `top_k`
/// ranked candidates. Deterministic, including ties, regardless of input
/// order.
pub fn rank_candidates(
    model: &Predictor,
    store: &ParamStore,
    dataset: &Dataset,
    candidates: &[DecodeTrace],
    top_k: usize,
) -> Result<Vec<RankedCandidate>> {
    let cells: Vec<CellSpec> = candidates
        .iter()
        .filter(|t| is_valid(&t.dag))
        .map(|t| dag_to_cell(&t.dag).expect("valid dag"))
        .collect();
    if cells.is_empty() {
        return Err(Error::NoValidCandidates);
    }
    let scores = model.score_cells(store, dataset, &cells)?;
    Ok(rank_by_score(
        cells.into_iter().zip(scores).collect(),
        top_k,
    ))
}
