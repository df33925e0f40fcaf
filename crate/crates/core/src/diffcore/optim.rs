//! Adaptive-moment gradient descent (beta1 = 0.9, beta2 = 0.999, eps = 1e-8)
//! with bias correction.

use std::collections::BTreeMap;

use crate::diffcore::ParamStore;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub lr: f64,
    pub step: u64,
    pub(crate) m: BTreeMap<String, Vec<f64>>,
    pub(crate) v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    /// Fresh state with zero moments matching the store's parameter shapes.
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, t) in store.iter() {
            m.insert(name.to_string(), vec![0.0; t.numel()]);
            v.insert(name.to_string(), vec![0.0; t.numel()]);
        }
        OptimizerState { lr, step: 0, m, v }
    }
}

/// Apply one update from the accumulated gradients, then clear them.
/// Errors if any parameter is missing a gradient.
pub fn optimizer_step(store: &mut ParamStore, state: &mut OptimizerState) -> Result<()> {
    let names: Vec<String> = store.names().map(String::from).collect();
    for name in &names {
        if store.grad(name).is_none() {
            return Err(Error::MissingGradient { name: name.clone() });
        }
    }
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    for name in &names {
        let g = store.grad(name).expect("checked above").to_vec();
        let m = state.m.get_mut(name).expect("moment registered");
        let v = state.v.get_mut(name).expect("moment registered");
        let p = store.get_mut(name)?;
        let data = p.data_mut();
        for i in 0..g.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= state.lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
    store.clear_grads();
    Ok(())
}
