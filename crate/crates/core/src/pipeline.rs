//! Meta-test orchestration: candidate search for a target dataset and the
//! four-way ablation (random / generator-only / predictor-only / full).

use std::collections::HashSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffcore::ParamStore;
use crate::error::{Error, Result};
use crate::generator::{
    generate_candidates, generation_metrics, GenerationMetrics, Generator, SampleSource,
};
use crate::predictor::{rank_candidates, Predictor, RankedCandidate};
use crate::rng::{derive, rng_from};
use crate::setenc::Dataset;
use crate::space::{is_valid, CellSpec, SPACE_SIZE};
use crate::taskdb::{oracle_accuracy_noiseless, OracleSpec};

/// Result of one search over a target dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub n_candidates: usize,
    pub metrics: GenerationMetrics,
    pub ranked: Vec<RankedCandidate>,
    /// The rank-1 cell.
    pub selected: CellSpec,
}

/// Generate `n_s` candidates for the dataset, rank the valid ones, and keep
/// the top `top_k`.
#[allow(clippy::too_many_arguments)]
pub fn run_search(
    gen_store: &ParamStore,
    gen_model: &Generator,
    pred_store: &ParamStore,
    pred_model: &Predictor,
    dataset: &Dataset,
    n_s: usize,
    top_k: usize,
    source: SampleSource,
    seed: u64,
    training_cells: &HashSet<CellSpec>,
) -> Result<SearchOutcome> {
    let traces = generate_candidates(gen_store, gen_model, dataset, n_s, source, seed)?;
    if traces.is_empty() {
        return Err(Error::NoValidCandidates);
    }
    let metrics = generation_metrics(&traces, training_cells)?;
    let ranked = rank_candidates(pred_model, pred_store, dataset, &traces, top_k)?;
    let selected = ranked[0].cell;
    Ok(SearchOutcome {
        n_candidates: n_s,
        metrics,
        ranked,
        selected,
    })
}

/// Ablation selection strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// One uniformly random cell.
    Random,
    /// A uniformly random pick among the generator's valid candidates.
    GenOnly,
    /// Predictor ranks uniformly random cells.
    PredOnly,
    /// Generator candidates ranked by the predictor.
    Full,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [
        EvalMode::Random,
        EvalMode::GenOnly,
        EvalMode::PredOnly,
        EvalMode::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EvalMode::Random => "random",
            EvalMode::GenOnly => "gen_only",
            EvalMode::PredOnly => "pred_only",
            EvalMode::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Parse {
                input: s.to_string(),
                what: "eval mode (random|gen_only|pred_only|full)",
            })
    }

    pub fn needs_generator(self) -> bool {
        matches!(self, EvalMode::GenOnly | EvalMode::Full)
    }

    pub fn needs_predictor(self) -> bool {
        matches!(self, EvalMode::PredOnly | EvalMode::Full)
    }
}

fn random_cell(rng: &mut crate::rng::Rng) -> CellSpec {
    CellSpec::from_lex_index(rng.random_range(0..SPACE_SIZE)).expect("in range")
}

/// Select one cell for the dataset under the given mode. Generator /
/// predictor stores are only consulted by the modes that need them.
#[allow(clippy::too_many_arguments)]
pub fn select_cell(
    mode: EvalMode,
    generator: Option<(&ParamStore, &Generator)>,
    predictor: Option<(&ParamStore, &Predictor)>,
    dataset: &Dataset,
    n_s: usize,
    seed: u64,
) -> Result<CellSpec> {
    match mode {
        EvalMode::Random => Ok(random_cell(&mut rng_from(derive(seed, "random-cell", 0)))),
        EvalMode::GenOnly => {
            let (store, model) = generator.ok_or(Error::EmptyTasks)?;
            let traces =
                generate_candidates(store, model, dataset, n_s, SampleSource::Posterior, seed)?;
            let valid: Vec<CellSpec> = traces
                .iter()
                .filter(|t| is_valid(&t.dag))
                .map(|t| crate::space::dag_to_cell(&t.dag).expect("valid"))
                .collect();
            if valid.is_empty() {
                return Err(Error::NoValidCandidates);
            }
            let mut rng = rng_from(derive(seed, "gen-only-pick", 0));
            Ok(valid[rng.random_range(0..valid.len())])
        }
        EvalMode::PredOnly => {
            let (store, model) = predictor.ok_or(Error::EmptyTasks)?;
            let mut rng = rng_from(derive(seed, "pred-only-cells", 0));
            let cells: Vec<CellSpec> = (0..n_s.max(1)).map(|_| random_cell(&mut rng)).collect();
            let scores = model.score_cells(store, dataset, &cells)?;
            let mut best = 0;
            for (i, s) in scores.iter().enumerate() {
                let better = s > &scores[best]
                    || (*s == scores[best] && cells[i].render() < cells[best].render());
                if better {
                    best = i;
                }
            }
            Ok(cells[best])
        }
        EvalMode::Full => {
            let (gs, gm) = generator.ok_or(Error::EmptyTasks)?;
            let (ps, pm) = predictor.ok_or(Error::EmptyTasks)?;
            let traces =
                generate_candidates(gs, gm, dataset, n_s, SampleSource::Posterior, seed)?;
            let ranked = rank_candidates(pm, ps, dataset, &traces, 1)?;
            Ok(ranked[0].cell)
        }
    }
}

/// One ablation row: expected oracle accuracy of the selected cell, mean and
/// standard deviation over seeds (each seed averages over the evaluation
/// datasets). Accuracies are on the 0-100 point scale.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: EvalMode,
    pub mean_points: f64,
    pub std_points: f64,
    pub per_seed_points: Vec<f64>,
}

/// Run the requested modes over the evaluation datasets for `n_seeds` seeds.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    modes: &[EvalMode],
    generator: Option<(&ParamStore, &Generator)>,
    predictor: Option<(&ParamStore, &Predictor)>,
    eval_datasets: &[&Dataset],
    oracle: &OracleSpec,
    n_s: usize,
    n_seeds: u64,
    base_seed: u64,
) -> Result<Vec<AblationRow>> {
    if eval_datasets.is_empty() {
        return Err(Error::EmptyTasks);
    }
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        if mode.needs_generator() && generator.is_none() {
            return Err(Error::Parse {
                input: mode.label().to_string(),
                what: "mode requiring a generator checkpoint",
            });
        }
        if mode.needs_predictor() && predictor.is_none() {
            return Err(Error::Parse {
                input: mode.label().to_string(),
                what: "mode requiring a predictor checkpoint",
            });
        }
        // Seeds are independent; fan them out over the current rayon pool.
        use rayon::prelude::*;
        let per_seed: Vec<f64> = (0..n_seeds)
            .into_par_iter()
            .map(|s| -> Result<f64> {
                let mut acc = 0.0;
                for (t, ds) in eval_datasets.iter().enumerate() {
                    let seed = derive(base_seed, mode.label(), s * 1_000_003 + t as u64);
                    let cell = select_cell(mode, generator, predictor, ds, n_s, seed)?;
                    acc += 100.0 * oracle_accuracy_noiseless(ds, &cell, oracle);
                }
                Ok(acc / eval_datasets.len() as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let var = per_seed.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / per_seed.len() as f64;
        rows.push(AblationRow {
            mode,
            mean_points: mean,
            std_points: var.sqrt(),
            per_seed_points: per_seed,
        });
    }
    Ok(rows)
}
