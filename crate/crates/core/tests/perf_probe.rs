//! Ignored-by-default timing probes for tuning pipeline budgets.
//! Run with: cargo test -p setnas-core --test perf_probe -- --ignored --nocapture

use std::time::Instant;

use setnas_core::diffcore::Tape;
use setnas_core::generator::{elbo_loss, Generator, GeneratorConfig};
use setnas_core::predictor::{Predictor, PredictorConfig};
use setnas_core::space::cell_to_dag;
use setnas_core::taskdb::{build_db, DbConfig};

#[test]
#[ignore]
fn time_default_dim_training_steps() {
    let dir = tempfile::tempdir().unwrap();
    let db = build_db(
        dir.path(),
        &DbConfig {
            n_train: 64,
            n_val: 0,
            seed: 0,
            good_cell_fraction: 1.0,
            classes: 5,
            instances_per_class: 20,
            d_x: 32,
        },
    )
    .unwrap();

    // Generator at default dims.
    let gcfg = GeneratorConfig::default();
    let (store, model) = Generator::init(&gcfg, 0).unwrap();
    let eps = vec![0.1; gcfg.encoder.d_z];
    let t0 = Instant::now();
    let reps = 20;
    for i in 0..reps {
        let task = &db.tasks[i % db.tasks.len()];
        let mut tape = Tape::new();
        let (total, _, _, _) = elbo_loss(
            &mut tape,
            &store,
            &model,
            &task.dataset,
            &task.cell,
            &eps,
            gcfg.lambda,
        )
        .unwrap();
        tape.backward(total).unwrap();
        let mut grads = Vec::new();
        tape.collect_bound_grads(&mut grads);
    }
    let gen_ms = t0.elapsed().as_secs_f64() * 1000.0 / reps as f64;
    println!("generator fwd+bwd per task (d=56): {gen_ms:.2} ms");

    // Predictor at default dims (graph hidden 512).
    let pcfg = PredictorConfig::default();
    let (pstore, pmodel) = Predictor::init(&pcfg, 0).unwrap();
    let t0 = Instant::now();
    let reps = 10;
    for i in 0..reps {
        let task = &db.tasks[i % db.tasks.len()];
        let dag = cell_to_dag(&task.cell);
        let mut tape = Tape::new();
        let pred = pmodel.predict_on(&mut tape, &pstore, &task.dataset, &dag).unwrap();
        tape.backward(pred).unwrap();
        let mut grads = Vec::new();
        tape.collect_bound_grads(&mut grads);
    }
    let pred_ms = t0.elapsed().as_secs_f64() * 1000.0 / reps as f64;
    println!("predictor fwd+bwd per task (d_h=512): {pred_ms:.2} ms");

    // Predictor forward-only (scoring).
    let t0 = Instant::now();
    for i in 0..reps {
        let task = &db.tasks[i % db.tasks.len()];
        let dag = cell_to_dag(&task.cell);
        pmodel.predict(&pstore, &task.dataset, &dag).unwrap();
    }
    let score_ms = t0.elapsed().as_secs_f64() * 1000.0 / reps as f64;
    println!("predictor fwd per task (d_h=512): {score_ms:.2} ms");

    // Batched training epoch over 8 tasks.
    let tasks: Vec<&setnas_core::taskdb::TaskRecord> = db.tasks.iter().collect();
    let mut cfg = PredictorConfig::default();
    cfg.epochs = 2;
    cfg.batch_size = 32;
    cfg.jobs = 2;
    let t0 = Instant::now();
    let out = setnas_core::predictor::train_predictor(&tasks, &cfg, 0, None).unwrap();
    let per_task = t0.elapsed().as_secs_f64() * 1000.0 / (2.0 * tasks.len() as f64);
    println!("predictor batched train per task (batch 32, jobs=2): {per_task:.2} ms");
    let _ = out;

    // Scoring 64 distinct cells against one dataset.
    let cells: Vec<setnas_core::space::CellSpec> = (0..64)
        .map(|i| setnas_core::space::CellSpec::from_lex_index(i * 211).unwrap())
        .collect();
    let t0 = Instant::now();
    let scores = pmodel.score_cells(&pstore, &db.tasks[0].dataset, &cells).unwrap();
    println!("score 64 cells: {:.2} ms total", t0.elapsed().as_secs_f64() * 1000.0);
    let _ = scores;
}
