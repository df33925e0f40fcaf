//! Neural building blocks on top of the tape: linear maps, two-layer MLPs,
//! layer norm, multi-head attention, and a GRU cell. Each block registers its
//! parameters under a name prefix and applies itself to tape variables.

use rand::Rng as _;

use crate::diffcore::tape::{Tape, Var};
use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Glorot-uniform initialization: U(-l, l) with l = sqrt(6 / (fan_in + fan_out)).
pub fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::from_vec(vec![fan_in, fan_out], data).expect("init shape")
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: String,
    pub b: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = format!("{prefix}.w");
        let b = format!("{prefix}.b");
        store.register(&w, glorot(rng, d_in, d_out))?;
        store.register(&b, Tensor::zeros(vec![1, d_out]))?;
        Ok(Linear { w, b, d_in, d_out })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.bind_param(store, &self.w)?;
        let b = tape.bind_param(store, &self.b)?;
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

/// Two-layer perceptron: linear, relu, linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Mlp {
            l1: Linear::new(store, &format!("{prefix}.l1"), d_in, d_hidden, rng)?,
            l2: Linear::new(store, &format!("{prefix}.l2"), d_hidden, d_out, rng)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.l1.apply(tape, store, x)?;
        let h = tape.relu(h);
        self.l2.apply(tape, store, h)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Result<Self> {
        let gamma = format!("{prefix}.g");
        let beta = format!("{prefix}.b");
        store.register(&gamma, Tensor::from_vec(vec![1, d], vec![1.0; d])?)?;
        store.register(&beta, Tensor::zeros(vec![1, d]))?;
        Ok(LayerNorm { gamma, beta })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.bind_param(store, &self.gamma)?;
        let b = tape.bind_param(store, &self.beta)?;
        tape.layer_norm(x, g, b)
    }
}

/// Multi-head attention with square projections: per head, scaled dot-product
/// attention over the projected queries/keys/values, heads concatenated and
/// linearly projected back to `d`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: String,
    pub wk: String,
    pub wv: String,
    pub wo: String,
    pub d: usize,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::HeadsDivisibility { dim: d, heads });
        }
        let names = ["wq", "wk", "wv", "wo"].map(|s| format!("{prefix}.{s}"));
        for n in &names {
            store.register(n, glorot(rng, d, d))?;
        }
        let [wq, wk, wv, wo] = names;
        Ok(MultiHeadAttention {
            wq,
            wk,
            wv,
            wo,
            d,
            heads,
        })
    }

    /// `q: [n_q, d]`, `k`/`v: [n_k, d]` -> `[n_q, d]`.
    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, q: Var, k: Var, v: Var) -> Result<Var> {
        for (x, other) in [(q, "q"), (k, "k"), (v, "v")] {
            let _ = other;
            if tape.value(x).cols() != self.d {
                return Err(Error::ShapeMismatch {
                    op: "multi_head_attention",
                    lhs: tape.value(x).shape().to_vec(),
                    rhs: vec![self.d],
                });
            }
        }
        if tape.value(k).rows() != tape.value(v).rows() {
            return Err(Error::ShapeMismatch {
                op: "multi_head_attention",
                lhs: tape.value(k).shape().to_vec(),
                rhs: tape.value(v).shape().to_vec(),
            });
        }
        let wq = tape.bind_param(store, &self.wq)?;
        let wk = tape.bind_param(store, &self.wk)?;
        let wv = tape.bind_param(store, &self.wv)?;
        let wo = tape.bind_param(store, &self.wo)?;
        let qp = tape.matmul(q, wq)?;
        let kp = tape.matmul(k, wk)?;
        let vp = tape.matmul(v, wv)?;
        let dh = self.d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut head_outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(qp, c0, c1)?;
            let kh = tape.slice_cols(kp, c0, c1)?;
            let vh = tape.slice_cols(vp, c0, c1)?;
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.affine(scores, scale, 0.0);
            let attn = tape.softmax_rows(scores);
            head_outputs.push(tape.matmul(attn, vh)?);
        }
        let ctx = tape.concat_cols(&head_outputs)?;
        tape.matmul(ctx, wo)
    }
}

/// Standard GRU cell: reset and update gates plus a tanh candidate state.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub wr: String,
    pub ur: String,
    pub br: String,
    pub wz: String,
    pub uz: String,
    pub bz: String,
    pub wn: String,
    pub un: String,
    pub bn: String,
    pub d_in: usize,
    pub d_h: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mk_w = |store: &mut ParamStore, s: &str, rng: &mut Rng| -> Result<String> {
            let n = format!("{prefix}.{s}");
            store.register(&n, glorot(rng, d_in, d_h))?;
            Ok(n)
        };
        let wr = mk_w(store, "wr", rng)?;
        let wz = mk_w(store, "wz", rng)?;
        let wn = mk_w(store, "wn", rng)?;
        let mk_u = |store: &mut ParamStore, s: &str, rng: &mut Rng| -> Result<String> {
            let n = format!("{prefix}.{s}");
            store.register(&n, glorot(rng, d_h, d_h))?;
            Ok(n)
        };
        let ur = mk_u(store, "ur", rng)?;
        let uz = mk_u(store, "uz", rng)?;
        let un = mk_u(store, "un", rng)?;
        let mk_b = |store: &mut ParamStore, s: &str| -> Result<String> {
            let n = format!("{prefix}.{s}");
            store.register(&n, Tensor::zeros(vec![1, d_h]))?;
            Ok(n)
        };
        let br = mk_b(store, "br")?;
        let bz = mk_b(store, "bz")?;
        let bn = mk_b(store, "bn")?;
        Ok(GruCell {
            wr,
            ur,
            br,
            wz,
            uz,
            bz,
            wn,
            un,
            bn,
            d_in,
            d_h,
        })
    }

    /// `x: [n, d_in]`, `h: [n, d_h]` -> `[n, d_h]`.
    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let (tx, th) = (tape.value(x), tape.value(h));
        if tx.cols() != self.d_in || th.cols() != self.d_h || tx.rows() != th.rows() {
            return Err(Error::ShapeMismatch {
                op: "gru_cell",
                lhs: tx.shape().to_vec(),
                rhs: th.shape().to_vec(),
            });
        }
        let gate = |tape: &mut Tape, w: &str, u: &str, b: &str| -> Result<Var> {
            let w = tape.bind_param(store, w)?;
            let u = tape.bind_param(store, u)?;
            let b = tape.bind_param(store, b)?;
            let xw = tape.matmul(x, w)?;
            let hu = tape.matmul(h, u)?;
            let s = tape.add(xw, hu)?;
            tape.add_row(s, b)
        };
        let r = gate(tape, &self.wr, &self.ur, &self.br)?;
        let r = tape.sigmoid(r);
        let z = gate(tape, &self.wz, &self.uz, &self.bz)?;
        let z = tape.sigmoid(z);
        let wn = tape.bind_param(store, &self.wn)?;
        let un = tape.bind_param(store, &self.un)?;
        let bn = tape.bind_param(store, &self.bn)?;
        let xw = tape.matmul(x, wn)?;
        let rh = tape.mul(r, h)?;
        let rhu = tape.matmul(rh, un)?;
        let pre = tape.add(xw, rhu)?;
        let pre = tape.add_row(pre, bn)?;
        let n = tape.tanh(pre);
        // h' = (1 - z) * n + z * h
        let one_minus_z = tape.affine(z, -1.0, 1.0);
        let a = tape.mul(one_minus_z, n)?;
        let b = tape.mul(z, h)?;
        tape.add(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn leaf(tape: &mut Tape, rows: &[Vec<f64>]) -> Var {
        tape.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn attention_rejects_bad_head_count() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(0);
        let err = MultiHeadAttention::new(&mut store, "mh", 6, 4, &mut rng).unwrap_err();
        assert!(err.to_string().contains("not divisible"));
    }

    #[test]
    fn attention_with_single_key_ignores_query_values() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(1);
        let mh = MultiHeadAttention::new(&mut store, "mh", 4, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let k = leaf(&mut tape, &[vec![0.3, -0.1, 0.8, 0.5]]);
        let v = leaf(&mut tape, &[vec![1.0, 2.0, 3.0, 4.0]]);
        let q1 = leaf(&mut tape, &[vec![5.0, -2.0, 0.0, 1.0]]);
        let q2 = leaf(&mut tape, &[vec![-9.0, 4.0, 7.0, 2.0]]);
        let o1 = mh.apply(&mut tape, &store, q1, k, v).unwrap();
        let o2 = mh.apply(&mut tape, &store, q2, k, v).unwrap();
        let (a, b) = (tape.value(o1).data().to_vec(), tape.value(o2).data().to_vec());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "single-key attention must not depend on q");
        }
    }

    #[test]
    fn attention_is_invariant_to_joint_kv_permutation() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(2);
        let mh = MultiHeadAttention::new(&mut store, "mh", 8, 4, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..8).map(|j| ((i * 8 + j) as f64).sin()).collect())
            .collect();
        let vrows: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..8).map(|j| ((i * 8 + j) as f64).cos()).collect())
            .collect();
        let q_rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..8).map(|j| 0.1 * (i as f64) - 0.05 * (j as f64)).collect())
            .collect();
        let perm = [3usize, 0, 4, 1, 2];
        let mut tape = Tape::new();
        let q = leaf(&mut tape, &q_rows);
        let k = leaf(&mut tape, &rows);
        let v = leaf(&mut tape, &vrows);
        let kp_rows: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let vp_rows: Vec<Vec<f64>> = perm.iter().map(|&i| vrows[i].clone()).collect();
        let kp = leaf(&mut tape, &kp_rows);
        let vp = leaf(&mut tape, &vp_rows);
        let o1 = mh.apply(&mut tape, &store, q, k, v).unwrap();
        let o2 = mh.apply(&mut tape, &store, q, kp, vp).unwrap();
        for (x, y) in tape.value(o1).data().iter().zip(tape.value(o2).data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn gru_zero_params_zero_hidden_gives_zero_output() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(3);
        let gru = GruCell::new(&mut store, "gru", 3, 4, &mut rng).unwrap();
        // Zero out every weight.
        for name in store.names().map(String::from).collect::<Vec<_>>() {
            let shape = store.get(&name).unwrap().shape().to_vec();
            store.set_value(&name, Tensor::zeros(shape)).unwrap();
        }
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[vec![1.0, -2.0, 3.0]]);
        let h = leaf(&mut tape, &[vec![0.0; 4]]);
        let out = gru.apply(&mut tape, &store, x, h).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0; 4]);
    }

    #[test]
    fn gru_output_stays_in_open_unit_ball_when_hidden_does() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(4);
        let gru = GruCell::new(&mut store, "gru", 5, 6, &mut rng).unwrap();
        for trial in 0..100 {
            let mut r = rng_from(1000 + trial);
            let x: Vec<f64> = (0..5).map(|_| r.random_range(-3.0..3.0)).collect();
            let h: Vec<f64> = (0..6).map(|_| r.random_range(-0.999..0.999)).collect();
            let mut tape = Tape::new();
            let xv = leaf(&mut tape, &[x]);
            let hv = leaf(&mut tape, &[h]);
            let out = gru.apply(&mut tape, &store, xv, hv).unwrap();
            for &y in tape.value(out).data() {
                assert!(y.abs() < 1.0, "gru output {y} escaped (-1, 1)");
            }
        }
    }
}
