//! Meta-training of the set-to-DAG generator and meta-test candidate
//! generation.
//!
//! The objective per task: teacher-forced reconstruction (node cross-entropy
//! plus edge binary cross-entropy) of the task's architecture from a latent
//! sampled by reparameterization, plus a weighted KL of the dataset posterior
//! against the standard-normal prior. At search time the encoder maps the
//! target dataset to its posterior, latents are drawn, and each is decoded
//! deterministically.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decoder::{DecodeMode, DecodeTrace, DecoderConfig, GraphDecoder};
use crate::diffcore::tape::{Tape, Var};
use crate::diffcore::{optimizer_step, OptimizerState, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::rng::{derive, rng_from};
use crate::setenc::{Dataset, EncoderConfig, LatentPosterior, SetEncoder};
use crate::space::{cell_to_dag, is_valid, CellSpec};
use crate::taskdb::TaskRecord;
use crate::train::{accumulate_batch, with_jobs, EpochStats, TaskGrad, TrainLog};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// KL weight.
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Candidates drawn per search.
    pub n_candidates: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub jobs: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            lambda: 5e-3,
            lr: 1e-4,
            batch_size: 32,
            // Desk-scale default; 400 is the reference-scale setting.
            epochs: 100,
            n_candidates: 500,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            jobs: 1,
        }
    }
}

/// Where search latents are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    /// The dataset-conditioned posterior N(mu, sigma^2).
    Posterior,
    /// The standard-normal prior.
    Prior,
}

pub struct Generator {
    pub encoder: SetEncoder,
    pub decoder: GraphDecoder,
}

impl Generator {
    /// Fresh parameters for the architecture described by `cfg`.
    pub fn init(cfg: &GeneratorConfig, seed: u64) -> Result<(ParamStore, Generator)> {
        let mut store = ParamStore::new();
        let mut rng = rng_from(derive(seed, "generator-init", 0));
        let model = Generator {
            encoder: SetEncoder::new(&mut store, "enc", cfg.encoder, &mut rng)?,
            decoder: GraphDecoder::new(&mut store, "dec", cfg.decoder, &mut rng)?,
        };
        Ok((store, model))
    }

    /// Rebuild the module structure over an existing parameter store (e.g.
    /// one loaded from a checkpoint), verifying that names and shapes agree.
    pub fn attach(cfg: &GeneratorConfig, store: &ParamStore) -> Result<Generator> {
        let (fresh, model) = Generator::init(cfg, 0)?;
        if fresh.len() != store.len() {
            return Err(Error::ShapeMismatch {
                op: "generator_attach",
                lhs: vec![fresh.len()],
                rhs: vec![store.len()],
            });
        }
        for (name, t) in fresh.iter() {
            let loaded = store.get(name)?;
            if loaded.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "generator_attach",
                    lhs: t.shape().to_vec(),
                    rhs: loaded.shape().to_vec(),
                });
            }
        }
        Ok(model)
    }
}

/// Closed-form KL of a diagonal Gaussian against the standard normal:
/// `0.5 * sum(mu^2 + sigma^2 - 1 - ln sigma^2)`.
pub fn kl_to_standard_normal(post: &LatentPosterior) -> Result<f64> {
    if let Some(&bad) = post.sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::NonPositiveSigma { value: bad });
    }
    Ok(post
        .mu
        .iter()
        .zip(&post.sigma)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum())
}

/// KL term on the tape, from the mean and log-variance rows.
fn kl_on_tape(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let mu2 = tape.square(mu);
    let var = tape.exp(logvar);
    let sum = tape.add(mu2, var)?;
    let sum = tape.sub(sum, logvar)?;
    let d = tape.value(mu).numel() as f64;
    let total = tape.sum_all(sum);
    // 0.5 * (sum - d) because each dimension contributes "- 1".
    Ok(tape.affine(total, 0.5, -0.5 * d))
}

/// Per-task losses on the tape: `(total, node_ce, edge_bce, kl)`.
/// `eps` is the reparameterization noise for this task.
pub fn elbo_loss(
    tape: &mut Tape,
    store: &ParamStore,
    model: &Generator,
    dataset: &Dataset,
    cell: &CellSpec,
    eps: &[f64],
    lambda: f64,
) -> Result<(Var, Var, Var, Var)> {
    let (mu, logvar) = model.encoder.encode(tape, store, dataset)?;
    let half_logvar = tape.affine(logvar, 0.5, 0.0);
    let sigma = tape.exp(half_logvar);
    let eps_const = tape.constant(Tensor::row(eps.to_vec()));
    let noise = tape.mul(sigma, eps_const)?;
    let z = tape.add(mu, noise)?;
    let target = cell_to_dag(cell);
    let (node_ce, edge_bce) = model.decoder.teacher_forced_losses(tape, store, z, &target)?;
    let recon = tape.add(node_ce, edge_bce)?;
    let kl = kl_on_tape(tape, mu, logvar)?;
    let weighted = tape.affine(kl, lambda, 0.0);
    let total = tape.add(recon, weighted)?;
    Ok((total, node_ce, edge_bce, kl))
}

/// State carried across a resumed training run.
pub struct ResumeState {
    pub store: ParamStore,
    pub opt: OptimizerState,
    pub epochs_done: usize,
}

pub struct TrainedGenerator {
    pub store: ParamStore,
    pub opt: OptimizerState,
    pub log: TrainLog,
    pub epochs_done: usize,
    pub model: Generator,
}

/// Mini-batch training of the ELBO objective over shuffled tasks for
/// `cfg.epochs` further epochs. Epoch-level randomness is derived from
/// `(seed, epoch index)`, so resuming from a checkpoint continues the exact
/// trajectory of an uninterrupted run.
pub fn train_generator(
    tasks: &[&TaskRecord],
    cfg: &GeneratorConfig,
    seed: u64,
    resume: Option<ResumeState>,
) -> Result<TrainedGenerator> {
    if tasks.is_empty() {
        return Err(Error::EmptyTasks);
    }
    let (store, opt, start_epoch) = match resume {
        Some(r) => (r.store, r.opt, r.epochs_done),
        None => {
            let (store, _) = Generator::init(cfg, seed)?;
            let opt = OptimizerState::new(&store, cfg.lr);
            (store, opt, 0)
        }
    };
    let model = Generator::attach(cfg, &store)?;
    let mut store = store;
    let mut opt = opt;
    let mut log = TrainLog::default();
    let d_z = cfg.encoder.d_z;

    with_jobs(cfg.jobs, || -> Result<()> {
        for epoch in start_epoch..start_epoch + cfg.epochs {
            let t0 = Instant::now();
            let mut rng = rng_from(derive(seed, "generator-epoch", epoch as u64));
            let mut order: Vec<usize> = (0..tasks.len()).collect();
            order.shuffle(&mut rng);
            let eps_all: Vec<Vec<f64>> = (0..tasks.len())
                .map(|_| {
                    (0..d_z)
                        .map(|_| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal))
                        .collect()
                })
                .collect();

            let mut sums = [0.0f64; 3]; // recon, kl, total
            let mut count = 0usize;
            for batch_idx in order.chunks(cfg.batch_size.max(1)) {
                let batch: Vec<(usize, &TaskRecord)> =
                    batch_idx.iter().map(|&i| (i, tasks[i])).collect();
                let scale = 1.0 / batch.len() as f64;
                let stats = accumulate_batch(&mut store, &batch, scale, |store, (i, task)| {
                    let mut tape = Tape::new();
                    let (total, ce, bce, kl) = elbo_loss(
                        &mut tape,
                        store,
                        &model,
                        &task.dataset,
                        &task.cell,
                        &eps_all[*i],
                        cfg.lambda,
                    )?;
                    tape.backward(total)?;
                    let mut scratch_grads = Vec::new();
                    let recon = tape.scalar_value(ce) + tape.scalar_value(bce);
                    let klv = tape.scalar_value(kl);
                    let totalv = tape.scalar_value(total);
                    tape.collect_bound_grads(&mut scratch_grads);
                    Ok(TaskGrad {
                        grads: scratch_grads,
                        stats: vec![recon, klv, totalv],
                    })
                })?;
                for s in &stats {
                    sums[0] += s[0];
                    sums[1] += s[1];
                    sums[2] += s[2];
                    count += 1;
                }
                optimizer_step(&mut store, &mut opt)?;
            }
            let n = count.max(1) as f64;
            log.epochs.push(EpochStats {
                epoch,
                loss: sums[0] / n,
                kl: sums[1] / n,
                total: sums[2] / n,
                wall_ms: t0.elapsed().as_millis() as u64,
            });
        }
        Ok(())
    })?;

    Ok(TrainedGenerator {
        store,
        opt,
        log,
        epochs_done: start_epoch + cfg.epochs,
        model,
    })
}

/// Write a generator checkpoint: parameters, optimizer state, and metadata
/// carrying the model config so `load_generator` can rebuild the structure.
pub fn save_generator(
    path: &std::path::Path,
    store: &ParamStore,
    opt: &OptimizerState,
    cfg: &GeneratorConfig,
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
    crate::diffcore::checkpoint::save(path, store, Some(opt), "generator", &meta.to_json())
}

pub struct LoadedGenerator {
    pub store: ParamStore,
    pub opt: Option<OptimizerState>,
    pub cfg: GeneratorConfig,
    pub meta: crate::train::TrainMeta,
    pub model: Generator,
}

pub fn load_generator(path: &std::path::Path) -> Result<LoadedGenerator> {
    let ck = crate::diffcore::checkpoint::load(path)?;
    if ck.component != "generator" {
        return Err(Error::Parse {
            input: ck.component,
            what: "generator checkpoint (component tag)",
        });
    }
    let meta = crate::train::TrainMeta::from_json(&ck.meta_json)?;
    let cfg: GeneratorConfig = serde_json::from_value(meta.config.clone())?;
    let model = Generator::attach(&cfg, &ck.params)?;
    Ok(LoadedGenerator {
        store: ck.params,
        opt: ck.optimizer,
        cfg,
        meta,
        model,
    })
}

/// Encode the dataset, draw `n_s` latents from the chosen source, and decode
/// each deterministically.
pub fn generate_candidates(
    store: &ParamStore,
    model: &Generator,
    dataset: &Dataset,
    n_s: usize,
    source: SampleSource,
    seed: u64,
) -> Result<Vec<DecodeTrace>> {
    if n_s == 0 {
        return Ok(Vec::new());
    }
    let post = match source {
        SampleSource::Posterior => model.encoder.posterior(store, dataset)?,
        SampleSource::Prior => LatentPosterior::standard(model.encoder.cfg.d_z),
    };
    let mut rng = rng_from(derive(seed, "candidates", 0));
    let latents: Vec<Vec<f64>> = (0..n_s)
        .map(|_| crate::setenc::sample_z_with(&post, &mut rng))
        .collect();
    latents
        .iter()
        .map(|z| model.decoder.decode(store, z, DecodeMode::Deterministic))
        .collect()
}

/// Validity / uniqueness / novelty of a batch of decodes. Uniqueness and
/// novelty are undefined (None) when nothing is valid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub n_total: usize,
    pub n_valid: usize,
    pub validity: f64,
    pub uniqueness: Option<f64>,
    pub novelty: Option<f64>,
}

pub fn generation_metrics(
    traces: &[DecodeTrace],
    training_cells: &HashSet<CellSpec>,
) -> Result<GenerationMetrics> {
    if traces.is_empty() {
        return Err(Error::EmptySet {
            op: "generation_metrics",
        });
    }
    let valid_cells: Vec<CellSpec> = traces
        .iter()
        .filter(|t| is_valid(&t.dag))
        .map(|t| crate::space::dag_to_cell(&t.dag).expect("valid dag converts"))
        .collect();
    let n_total = traces.len();
    let n_valid = valid_cells.len();
    let validity = n_valid as f64 / n_total as f64;
    if n_valid == 0 {
        return Ok(GenerationMetrics {
            n_total,
            n_valid,
            validity,
            uniqueness: None,
            novelty: None,
        });
    }
    let distinct: HashSet<&CellSpec> = valid_cells.iter().collect();
    let novel = valid_cells
        .iter()
        .filter(|c| !training_cells.contains(c))
        .count();
    Ok(GenerationMetrics {
        n_total,
        n_valid,
        validity,
        uniqueness: Some(distinct.len() as f64 / n_valid as f64),
        novelty: Some(novel as f64 / n_valid as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{CellOp, ALL_OPS, NUM_OPS};
    use crate::taskdb::{build_db, DbConfig};

    fn tiny_cfg() -> GeneratorConfig {
        GeneratorConfig {
            lambda: 5e-3,
            lr: 1e-3,
            batch_size: 4,
            epochs: 2,
            n_candidates: 8,
            encoder: EncoderConfig {
                d_x: 4,
                d_model: 8,
                d_z: 6,
                heads: 2,
                mlp_hidden: 8,
            },
            decoder: DecoderConfig {
                d_z: 6,
                d_h: 8,
                mlp_hidden: 8,
            },
            jobs: 1,
        }
    }

    fn tiny_db(n_train: usize, n_val: usize, seed: u64) -> crate::taskdb::TaskDb {
        let dir = tempfile::tempdir().unwrap();
        build_db(
            dir.path(),
            &DbConfig {
                n_train,
                n_val,
                seed,
                good_cell_fraction: 1.0,
                classes: 2,
                instances_per_class: 4,
                d_x: 4,
            },
        )
        .unwrap()
    }

    #[test]
    fn kl_closed_form_reference_values() {
        let std_post = LatentPosterior::standard(5);
        assert_eq!(kl_to_standard_normal(&std_post).unwrap(), 0.0);

        let post = LatentPosterior::new(vec![1.0], vec![1.0]).unwrap();
        assert!((kl_to_standard_normal(&post).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo_within_two_percent() {
        use rand::Rng as _;
        for trial in 0..3 {
            let mut rng = rng_from(500 + trial);
            let d = 8;
            let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sigma: Vec<f64> = (0..d)
                .map(|_| rng.random_range(-0.5f64..0.5).exp())
                .collect();
            let post = LatentPosterior::new(mu.clone(), sigma.clone()).unwrap();
            let closed = kl_to_standard_normal(&post).unwrap();

            let n = 1_000_000usize;
            let mut acc = 0.0;
            for _ in 0..n {
                let mut term = 0.0;
                for j in 0..d {
                    let eps: f64 = rng.sample(StandardNormal);
                    let z = mu[j] + sigma[j] * eps;
                    // ln q(z) - ln p(z) per dimension.
                    term += -0.5 * eps * eps - sigma[j].ln() + 0.5 * z * z;
                }
                acc += term;
            }
            let mc = acc / n as f64;
            let rel = (closed - mc).abs() / closed.abs().max(1e-9);
            assert!(rel < 0.02, "closed {closed} vs mc {mc} (rel {rel})");
        }
    }

    #[test]
    fn kl_on_tape_agrees_with_closed_form_and_is_differentiable() {
        let mut tape = Tape::new();
        let mu_vals = vec![0.3, -0.7, 1.1];
        let logvar_vals = vec![0.2, -0.4, 0.0];
        let mu = tape.leaf(Tensor::row(mu_vals.clone()).with_requires_grad(true));
        let logvar = tape.constant(Tensor::row(logvar_vals.clone()));
        let kl = kl_on_tape(&mut tape, mu, logvar).unwrap();
        let sigma: Vec<f64> = logvar_vals.iter().map(|lv| (0.5 * lv).exp()).collect();
        let closed =
            kl_to_standard_normal(&LatentPosterior::new(mu_vals, sigma).unwrap()).unwrap();
        assert!((tape.scalar_value(kl) - closed).abs() < 1e-12);
        tape.backward(kl).unwrap();
        assert!(tape.grad(mu).is_some());
    }

    #[test]
    fn lambda_zero_reduces_to_reconstruction_and_loss_dominates_kl() {
        let cfg = tiny_cfg();
        let (store, model) = Generator::init(&cfg, 1).unwrap();
        let db = tiny_db(3, 0, 9);
        let task = &db.tasks[0];
        let eps = vec![0.1; cfg.encoder.d_z];

        let mut tape = Tape::new();
        let (total0, ce, bce, _) = elbo_loss(
            &mut tape, &store, &model, &task.dataset, &task.cell, &eps, 0.0,
        )
        .unwrap();
        let recon = tape.scalar_value(ce) + tape.scalar_value(bce);
        assert!((tape.scalar_value(total0) - recon).abs() < 1e-12);

        let mut tape = Tape::new();
        let (total, _, _, kl) = elbo_loss(
            &mut tape, &store, &model, &task.dataset, &task.cell, &eps, 0.7,
        )
        .unwrap();
        assert!(tape.scalar_value(total) >= 0.7 * tape.scalar_value(kl));
    }

    #[test]
    fn kl_ignores_the_graph_and_recon_ignores_lambda() {
        let cfg = tiny_cfg();
        let (store, model) = Generator::init(&cfg, 2).unwrap();
        let db = tiny_db(2, 0, 10);
        let dataset = &db.tasks[0].dataset;
        let eps = vec![-0.2; cfg.encoder.d_z];
        let cell_a = CellSpec::new([CellOp::Conv3x3; 6]);
        let cell_b = CellSpec::new([CellOp::Zeroize; 6]);

        let mut t1 = Tape::new();
        let (_, ce1, bce1, kl1) =
            elbo_loss(&mut t1, &store, &model, dataset, &cell_a, &eps, 0.3).unwrap();
        let mut t2 = Tape::new();
        let (_, ce2, bce2, kl2) =
            elbo_loss(&mut t2, &store, &model, dataset, &cell_b, &eps, 0.9).unwrap();
        assert_eq!(t1.scalar_value(kl1), t2.scalar_value(kl2));
        let _ = (ce1, bce1, ce2, bce2);

        let mut t3 = Tape::new();
        let (_, ce3, bce3, _) =
            elbo_loss(&mut t3, &store, &model, dataset, &cell_a, &eps, 0.9).unwrap();
        assert_eq!(t1.scalar_value(ce1), t3.scalar_value(ce3));
        assert_eq!(t1.scalar_value(bce1), t3.scalar_value(bce3));
    }

    #[test]
    fn elbo_gradients_match_finite_differences_on_a_tiny_model() {
        let cfg = tiny_cfg();
        let (mut store, model) = Generator::init(&cfg, 3).unwrap();
        let db = tiny_db(1, 0, 11);
        let task = &db.tasks[0];
        let eps = vec![0.05; cfg.encoder.d_z];
        let err = crate::diffcore::grad_check_params(
            |tape, store| {
                let (total, _, _, _) = elbo_loss(
                    tape,
                    store,
                    &model,
                    &task.dataset,
                    &task.cell,
                    &eps,
                    cfg.lambda,
                )?;
                Ok(total)
            },
            &mut store,
        )
        .unwrap();
        assert!(err < 1e-3, "rel err {err}");
    }

    #[test]
    fn training_is_deterministic_and_resume_matches_continuous_run() {
        let cfg = tiny_cfg();
        let db = tiny_db(8, 0, 12);
        let tasks: Vec<&TaskRecord> = db.train_tasks();

        let full = train_generator(&tasks, &cfg, 5, None).unwrap();
        let full2 = train_generator(&tasks, &cfg, 5, None).unwrap();
        for (name, t) in full.store.iter() {
            let other = full2.store.get(name).unwrap();
            assert_eq!(t.data(), other.data(), "{name} differs between identical runs");
        }

        // Split the same schedule into 1 + 1 epochs via resume.
        let mut cfg1 = cfg.clone();
        cfg1.epochs = 1;
        let first = train_generator(&tasks, &cfg1, 5, None).unwrap();
        let resumed = train_generator(
            &tasks,
            &cfg1,
            5,
            Some(ResumeState {
                store: first.store,
                opt: first.opt,
                epochs_done: first.epochs_done,
            }),
        )
        .unwrap();
        assert_eq!(resumed.epochs_done, 2);
        for (name, t) in full.store.iter() {
            let other = resumed.store.get(name).unwrap();
            for (a, b) in t.data().iter().zip(other.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{name} diverged after resume");
            }
        }
        assert_eq!(
            full.log.epochs[1].total, resumed.log.epochs[0].total,
            "loss discontinuity on resume"
        );
    }

    #[test]
    fn empty_task_set_is_rejected() {
        let cfg = tiny_cfg();
        assert!(matches!(
            train_generator(&[], &cfg, 0, None),
            Err(Error::EmptyTasks)
        ));
    }

    #[test]
    fn candidate_generation_shapes_and_reproducibility() {
        let cfg = tiny_cfg();
        let (store, model) = Generator::init(&cfg, 6).unwrap();
        let db = tiny_db(1, 0, 13);
        let ds = &db.tasks[0].dataset;

        let none = generate_candidates(&store, &model, ds, 0, SampleSource::Posterior, 1).unwrap();
        assert!(none.is_empty());

        let a = generate_candidates(&store, &model, ds, 6, SampleSource::Posterior, 1).unwrap();
        let b = generate_candidates(&store, &model, ds, 6, SampleSource::Posterior, 1).unwrap();
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.dag, y.dag);
        }
        for t in &a {
            for &(s, d) in &t.dag.edges {
                assert!(s < d);
            }
        }
        let prior =
            generate_candidates(&store, &model, ds, 4, SampleSource::Prior, 2).unwrap();
        assert_eq!(prior.len(), 4);
    }

    #[test]
    fn generation_metric_arithmetic() {
        let cfg = tiny_cfg();
        let (store, model) = Generator::init(&cfg, 7).unwrap();
        let db = tiny_db(1, 0, 14);
        let traces =
            generate_candidates(&store, &model, &db.tasks[0].dataset, 10, SampleSource::Prior, 3)
                .unwrap();

        // All-invalid: fabricate by truncating DAGs.
        let invalid: Vec<DecodeTrace> = traces
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.dag.nodes.truncate(2);
                t
            })
            .collect();
        let m = generation_metrics(&invalid, &HashSet::new()).unwrap();
        assert_eq!(m.validity, 0.0);
        assert!(m.uniqueness.is_none() && m.novelty.is_none());

        // Ten copies of one valid cell that is also in the training set.
        let cell = CellSpec::new([ALL_OPS[NUM_OPS - 1]; 6]);
        let valid_trace = DecodeTrace {
            node_probs: vec![],
            edge_steps: vec![],
            dag: cell_to_dag(&cell),
            truncated: false,
        };
        let ten: Vec<DecodeTrace> = (0..10).map(|_| valid_trace.clone()).collect();
        let mut training = HashSet::new();
        training.insert(cell);
        let m = generation_metrics(&ten, &training).unwrap();
        assert_eq!(m.validity, 1.0);
        assert_eq!(m.uniqueness, Some(0.1));
        assert_eq!(m.novelty, Some(0.0));
    }

    #[test]
    fn smoothed_training_loss_decreases_on_a_small_run() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 6;
        cfg.lr = 3e-3;
        let db = tiny_db(12, 0, 15);
        let tasks = db.train_tasks();
        let out = train_generator(&tasks, &cfg, 8, None).unwrap();
        assert!(out.log.is_finite());
        let first = out.log.epochs.first().unwrap().total;
        let last = out.log.epochs.last().unwrap().total;
        assert!(
            last < first,
            "loss did not decrease: first {first}, last {last}"
        );
    }
}
