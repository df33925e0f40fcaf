//! Synthetic task distribution with a known accuracy oracle.
//!
//! Each task pairs a sampled Gaussian-mixture dataset with a cell and an
//! accuracy. A hidden linear map ("the oracle") assigns every dataset a
//! target cell; a cell's accuracy falls off linearly with its Hamming
//! distance from that target, plus Gaussian noise. Accuracies are therefore
//! re-derivable from the stored oracle and per-task noise seeds.
//!
//! On disk a task DB is a directory of three files: `tasks.jsonl` (one task
//! per line, instance matrices as base64 little-endian f64, with a CRC-32
//! trailer line), `manifest.json` (splits and generation parameters), and
//! `oracle.json` (the oracle itself).

use std::fs;
use std::io::Write as _;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::{derive, rng_from, Rng};
use crate::setenc::{ClassBatch, Dataset};
use crate::space::{hamming, CellOp, CellSpec, ALL_OPS, NUM_OPS};

pub const DB_VERSION: u32 = 1;
const TASKS_FILE: &str = "tasks.jsonl";
const MANIFEST_FILE: &str = "manifest.json";
const ORACLE_FILE: &str = "oracle.json";
const CRC_PREFIX: &str = "#crc32:";

/// One meta-learning task: a dataset, a cell, and the cell's accuracy on it.
#[derive(Clone, Debug)]
pub struct TaskRecord {
    pub task_id: u64,
    pub dataset: Dataset,
    pub cell: CellSpec,
    pub accuracy: f64,
    pub noise_seed: u64,
}

/// The hidden map from dataset statistics to per-edge operation scores, plus
/// the accuracy formula constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleSpec {
    pub version: u32,
    pub d_x: usize,
    /// Per edge: `NUM_OPS` rows of `d_x` weights.
    pub weights: Vec<Vec<Vec<f64>>>,
    /// Per edge: `NUM_OPS` biases.
    pub biases: Vec<Vec<f64>>,
    /// Accuracy noise, in accuracy points.
    pub noise_sigma: f64,
    /// Accuracy points at Hamming distance zero.
    pub base_points: f64,
    /// Accuracy points lost per mismatched operation.
    pub points_per_mismatch: f64,
    /// Divisor mapping points to the [0, 1] accuracy scale.
    pub scale: f64,
}

impl OracleSpec {
    pub fn generate(seed: u64, d_x: usize) -> Self {
        let mut rng = rng_from(derive(seed, "oracle", 0));
        let weights = (0..6)
            .map(|_| {
                (0..NUM_OPS)
                    .map(|_| (0..d_x).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                    .collect()
            })
            .collect();
        let biases = (0..6)
            .map(|_| {
                (0..NUM_OPS)
                    .map(|_| 0.25 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        OracleSpec {
            version: DB_VERSION,
            d_x,
            weights,
            biases,
            noise_sigma: 0.5,
            base_points: 100.0,
            points_per_mismatch: 8.0,
            scale: 100.0,
        }
    }
}

/// Train/validation split plus the generation parameters, for provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitManifest {
    pub version: u32,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub classes: usize,
    pub instances_per_class: usize,
    pub d_x: usize,
    pub good_cell_fraction: f64,
    pub train_ids: Vec<u64>,
    pub val_ids: Vec<u64>,
}

#[derive(Clone, Copy, Debug)]
pub struct DbConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    /// Probability that a task's cell is within Hamming distance 1 of the
    /// dataset's target cell (otherwise uniformly random).
    pub good_cell_fraction: f64,
    pub classes: usize,
    pub instances_per_class: usize,
    pub d_x: usize,
}

impl Default for DbConfig {
    fn default() -> Self {
        DbConfig {
            n_train: 1000,
            n_val: 200,
            seed: 0,
            good_cell_fraction: 1.0,
            classes: 5,
            instances_per_class: 20,
            d_x: 32,
        }
    }
}

/// A loaded task DB.
#[derive(Clone, Debug)]
pub struct TaskDb {
    pub manifest: SplitManifest,
    pub oracle: OracleSpec,
    pub tasks: Vec<TaskRecord>,
}

impl TaskDb {
    pub fn train_tasks(&self) -> Vec<&TaskRecord> {
        self.select(&self.manifest.train_ids)
    }

    pub fn val_tasks(&self) -> Vec<&TaskRecord> {
        self.select(&self.manifest.val_ids)
    }

    fn select(&self, ids: &[u64]) -> Vec<&TaskRecord> {
        ids.iter()
            .filter_map(|id| self.tasks.iter().find(|t| t.task_id == *id))
            .collect()
    }

    pub fn task(&self, id: u64) -> Option<&TaskRecord> {
        self.tasks.iter().find(|t| t.task_id == id)
    }
}

/// Sample a dataset: class means from N(0, I), instances from
/// `mean + 0.1 * N(0, I)`.
pub fn gen_dataset(classes: usize, per_class: usize, d_x: usize, seed: u64) -> Dataset {
    let mut rng = rng_from(seed);
    (0..classes)
        .map(|c| {
            let mean: Vec<f64> = (0..d_x).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let rows: Vec<Vec<f64>> = (0..per_class)
                .map(|_| {
                    mean.iter()
                        .map(|m| m + 0.1 * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            ClassBatch {
                class_id: c,
                instances: Tensor::from_rows(&rows).expect("non-empty class"),
            }
        })
        .collect()
}

/// The dataset statistic the oracle keys on: the mean of the class means.
pub fn dataset_stat(dataset: &Dataset) -> Vec<f64> {
    let d_x = dataset[0].instances.cols();
    let mut stat = vec![0.0; d_x];
    for batch in dataset {
        let b = batch.instances.rows() as f64;
        for row in 0..batch.instances.rows() {
            for (s, x) in stat.iter_mut().zip(batch.instances.row_slice(row)) {
                *s += x / b;
            }
        }
    }
    for s in stat.iter_mut() {
        *s /= dataset.len() as f64;
    }
    stat
}

/// The oracle's preferred cell for a dataset: per edge, the op with the
/// highest affine score of the dataset statistic (ties to the lowest index).
pub fn target_cell(dataset: &Dataset, oracle: &OracleSpec) -> CellSpec {
    let stat = dataset_stat(dataset);
    let mut ops = [CellOp::Zeroize; 6];
    for (k, slot) in ops.iter_mut().enumerate() {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for o in 0..NUM_OPS {
            let w = &oracle.weights[k][o];
            let score: f64 = w.iter().zip(&stat).map(|(wi, si)| wi * si).sum::<f64>()
                + oracle.biases[k][o];
            if score > best_score {
                best_score = score;
                best = o;
            }
        }
        *slot = ALL_OPS[best];
    }
    CellSpec::new(ops)
}

/// Accuracy with the noise term fixed (in accuracy points).
pub fn oracle_accuracy_with_noise(
    dataset: &Dataset,
    cell: &CellSpec,
    oracle: &OracleSpec,
    noise_points: f64,
) -> f64 {
    let target = target_cell(dataset, oracle);
    let h = hamming(cell, &target) as f64;
    let points = oracle.base_points - oracle.points_per_mismatch * h + noise_points;
    (points / oracle.scale).clamp(0.0, 1.0)
}

/// Expected accuracy (noise at zero).
pub fn oracle_accuracy_noiseless(dataset: &Dataset, cell: &CellSpec, oracle: &OracleSpec) -> f64 {
    oracle_accuracy_with_noise(dataset, cell, oracle, 0.0)
}

/// Accuracy with a Gaussian noise draw from `rng`.
pub fn oracle_accuracy(
    dataset: &Dataset,
    cell: &CellSpec,
    oracle: &OracleSpec,
    rng: &mut Rng,
) -> f64 {
    let eps: f64 = oracle.noise_sigma * rng.sample::<f64, _>(StandardNormal);
    oracle_accuracy_with_noise(dataset, cell, oracle, eps)
}

fn pick_cell(target: &CellSpec, good: bool, rng: &mut Rng) -> CellSpec {
    if good {
        // Hamming distance at most one: either the target itself or one
        // edge flipped to a different op.
        if rng.random_bool(0.5) {
            *target
        } else {
            let mut ops = target.ops;
            let k = rng.random_range(0..6);
            let shift = rng.random_range(1..NUM_OPS);
            ops[k] = ALL_OPS[(ops[k].index() + shift) % NUM_OPS];
            CellSpec::new(ops)
        }
    } else {
        let mut ops = [CellOp::Zeroize; 6];
        for slot in ops.iter_mut() {
            *slot = ALL_OPS[rng.random_range(0..NUM_OPS)];
        }
        CellSpec::new(ops)
    }
}

fn make_task(cfg: &DbConfig, oracle: &OracleSpec, id: u64) -> TaskRecord {
    let dataset = gen_dataset(
        cfg.classes,
        cfg.instances_per_class,
        cfg.d_x,
        derive(cfg.seed, "dataset", id),
    );
    let mut pair_rng = rng_from(derive(cfg.seed, "pair", id));
    let good = pair_rng.random_bool(cfg.good_cell_fraction.clamp(0.0, 1.0));
    let target = target_cell(&dataset, oracle);
    let cell = pick_cell(&target, good, &mut pair_rng);
    let noise_seed = derive(cfg.seed, "noise", id);
    let accuracy = oracle_accuracy(&dataset, &cell, oracle, &mut rng_from(noise_seed));
    TaskRecord {
        task_id: id,
        dataset,
        cell,
        accuracy,
        noise_seed,
    }
}

// ---- serialization ----

#[derive(Serialize, Deserialize)]
struct TaskLine {
    task_id: u64,
    cell: CellSpec,
    accuracy: f64,
    noise_seed: u64,
    dataset: DatasetBlock,
}

#[derive(Serialize, Deserialize)]
struct DatasetBlock {
    d_x: usize,
    classes: Vec<ClassBlock>,
}

#[derive(Serialize, Deserialize)]
struct ClassBlock {
    class_id: usize,
    rows: usize,
    /// Base64 of little-endian f64 values, row-major.
    x: String,
}

fn encode_dataset(dataset: &Dataset) -> DatasetBlock {
    let d_x = dataset[0].instances.cols();
    DatasetBlock {
        d_x,
        classes: dataset
            .iter()
            .map(|batch| {
                let mut bytes = Vec::with_capacity(batch.instances.numel() * 8);
                for &x in batch.instances.data() {
                    bytes.extend_from_slice(&x.to_le_bytes());
                }
                ClassBlock {
                    class_id: batch.class_id,
                    rows: batch.instances.rows(),
                    x: B64.encode(&bytes),
                }
            })
            .collect(),
    }
}

fn decode_dataset(block: &DatasetBlock, path: &Path) -> Result<Dataset> {
    let corrupt = |reason: String| Error::Corrupt {
        path: path.display().to_string(),
        reason,
    };
    block
        .classes
        .iter()
        .map(|c| {
            let bytes = B64
                .decode(&c.x)
                .map_err(|e| corrupt(format!("bad base64 in task dataset: {e}")))?;
            if bytes.len() != c.rows * block.d_x * 8 {
                return Err(corrupt(format!(
                    "instance block for class {} has {} bytes, expected {}",
                    c.class_id,
                    bytes.len(),
                    c.rows * block.d_x * 8
                )));
            }
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|ch| f64::from_le_bytes(ch.try_into().expect("8 bytes")))
                .collect();
            Ok(ClassBatch {
                class_id: c.class_id,
                instances: Tensor::from_vec(vec![c.rows, block.d_x], data)?,
            })
        })
        .collect()
}

/// Write a bare dataset as one JSON line (the same block used inside task
/// records), so external feature files can be dropped into `search`.
pub fn write_dataset_json(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut body = serde_json::to_vec(&encode_dataset(dataset))?;
    body.push(b'\n');
    fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a dataset from a file whose first non-empty line is a dataset block.
pub fn read_dataset_json(path: &Path) -> Result<Dataset> {
    let raw =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let line = raw
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::Corrupt {
            path: path.display().to_string(),
            reason: "empty dataset file".to_string(),
        })?;
    let block: DatasetBlock = serde_json::from_str(line)?;
    decode_dataset(&block, path)
}

/// Generate all tasks and write the three DB files into `dir`. Byte-identical
/// for identical configs.
pub fn build_db(dir: &Path, cfg: &DbConfig) -> Result<TaskDb> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let oracle = OracleSpec::generate(cfg.seed, cfg.d_x);
    let total = cfg.n_train + cfg.n_val;
    let tasks: Vec<TaskRecord> = (0..total as u64).map(|id| make_task(cfg, &oracle, id)).collect();

    let manifest = SplitManifest {
        version: DB_VERSION,
        seed: cfg.seed,
        n_train: cfg.n_train,
        n_val: cfg.n_val,
        classes: cfg.classes,
        instances_per_class: cfg.instances_per_class,
        d_x: cfg.d_x,
        good_cell_fraction: cfg.good_cell_fraction,
        train_ids: (0..cfg.n_train as u64).collect(),
        val_ids: (cfg.n_train as u64..total as u64).collect(),
    };

    let tasks_path = dir.join(TASKS_FILE);
    let mut body = Vec::new();
    for t in &tasks {
        let line = TaskLine {
            task_id: t.task_id,
            cell: t.cell,
            accuracy: t.accuracy,
            noise_seed: t.noise_seed,
            dataset: encode_dataset(&t.dataset),
        };
        serde_json::to_writer(&mut body, &line)?;
        body.push(b'\n');
    }
    let crc = crc32fast::hash(&body);
    writeln!(&mut body, "{CRC_PREFIX}{crc:08x}")
        .map_err(|e| Error::io(tasks_path.display().to_string(), e))?;
    fs::write(&tasks_path, &body).map_err(|e| Error::io(tasks_path.display().to_string(), e))?;

    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    write_json(&dir.join(ORACLE_FILE), &oracle)?;

    Ok(TaskDb {
        manifest,
        oracle,
        tasks,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a task DB, verifying the checksum trailer, the format version, and
/// that every stored accuracy re-derives from the stored oracle and noise
/// seed.
pub fn load_db(dir: &Path) -> Result<TaskDb> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_raw = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: SplitManifest = serde_json::from_str(&manifest_raw)?;
    if manifest.version != DB_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.version,
            expected: DB_VERSION,
        });
    }

    let oracle_path = dir.join(ORACLE_FILE);
    let oracle_raw = fs::read_to_string(&oracle_path)
        .map_err(|e| Error::io(oracle_path.display().to_string(), e))?;
    let oracle: OracleSpec = serde_json::from_str(&oracle_raw)?;
    if oracle.version != DB_VERSION {
        return Err(Error::VersionMismatch {
            found: oracle.version,
            expected: DB_VERSION,
        });
    }

    let tasks_path = dir.join(TASKS_FILE);
    let raw = fs::read(&tasks_path).map_err(|e| Error::io(tasks_path.display().to_string(), e))?;
    let corrupt = |reason: String| Error::Corrupt {
        path: tasks_path.display().to_string(),
        reason,
    };

    // Split off the trailer line and verify the checksum over the body.
    let text_tail = raw
        .iter()
        .rposition(|&b| b == b'\n')
        .ok_or_else(|| corrupt("missing trailing newline".to_string()))?;
    let body_end = raw[..text_tail]
        .iter()
        .rposition(|&b| b == b'\n')
        .map(|p| p + 1)
        .unwrap_or(0);
    let trailer = std::str::from_utf8(&raw[body_end..text_tail])
        .map_err(|_| corrupt("trailer is not utf-8".to_string()))?;
    let hex = trailer
        .strip_prefix(CRC_PREFIX)
        .ok_or_else(|| corrupt("missing crc32 trailer".to_string()))?;
    let stored =
        u32::from_str_radix(hex, 16).map_err(|_| corrupt("malformed crc32 trailer".to_string()))?;
    let body = &raw[..body_end];
    if crc32fast::hash(body) != stored {
        return Err(corrupt("crc32 mismatch (file truncated or edited)".to_string()));
    }

    let mut tasks = Vec::new();
    for (lineno, line) in std::str::from_utf8(body)
        .map_err(|_| corrupt("task body is not utf-8".to_string()))?
        .lines()
        .enumerate()
    {
        if line.is_empty() {
            continue;
        }
        let parsed: TaskLine = serde_json::from_str(line)
            .map_err(|e| corrupt(format!("task line {}: {e}", lineno + 1)))?;
        let dataset = decode_dataset(&parsed.dataset, &tasks_path)?;
        let expect =
            oracle_accuracy(&dataset, &parsed.cell, &oracle, &mut rng_from(parsed.noise_seed));
        if expect.to_bits() != parsed.accuracy.to_bits() {
            return Err(corrupt(format!(
                "task {}: stored accuracy {} does not re-derive from the oracle ({expect})",
                parsed.task_id, parsed.accuracy
            )));
        }
        tasks.push(TaskRecord {
            task_id: parsed.task_id,
            dataset,
            cell: parsed.cell,
            accuracy: parsed.accuracy,
            noise_seed: parsed.noise_seed,
        });
    }

    let want = manifest.n_train + manifest.n_val;
    if tasks.len() != want {
        return Err(corrupt(format!(
            "manifest promises {want} tasks, file has {}",
            tasks.len()
        )));
    }

    Ok(TaskDb {
        manifest,
        oracle,
        tasks,
    })
}
