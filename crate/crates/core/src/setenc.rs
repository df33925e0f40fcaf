//! Hierarchical permutation-invariant dataset encoder.
//!
//! Instances of each class are pooled to a class prototype (two set-attention
//! blocks and a seed-query pooling block), the prototypes are pooled again to
//! a single dataset vector, and two linear heads map that vector to the mean
//! and log-variance of a diagonal Gaussian over the latent space.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::nn::{LayerNorm, Linear, Mlp, MultiHeadAttention};
use crate::diffcore::tape::{Tape, Var};
use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

/// Instances of one class: `b` feature vectors of dimension `d_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassBatch {
    pub class_id: usize,
    /// `[b, d_x]`
    pub instances: Tensor,
}

/// A dataset as consumed by the encoder: one batch per class.
pub type Dataset = Vec<ClassBatch>;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Input feature dimension.
    pub d_x: usize,
    /// Width of prototypes, the dataset vector, and attention blocks.
    pub d_model: usize,
    /// Latent dimension.
    pub d_z: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_x: 32,
            d_model: 56,
            d_z: 56,
            heads: 4,
            mlp_hidden: 56,
        }
    }
}

/// Diagonal Gaussian over the latent space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatentPosterior {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Present only after sampling.
    pub z: Option<Vec<f64>>,
}

impl LatentPosterior {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = sigma.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::NonPositiveSigma { value: bad });
        }
        Ok(LatentPosterior { mu, sigma, z: None })
    }

    /// The standard-normal prior of matching dimension.
    pub fn standard(d_z: usize) -> Self {
        LatentPosterior {
            mu: vec![0.0; d_z],
            sigma: vec![1.0; d_z],
            z: None,
        }
    }
}

/// Reparameterized sample `z = mu + sigma .* eps` with `eps ~ N(0, I)` drawn
/// from the seeded generator.
pub fn sample_z(post: &LatentPosterior, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    sample_z_with(post, &mut rng)
}

pub fn sample_z_with(post: &LatentPosterior, rng: &mut Rng) -> Vec<f64> {
    post.mu
        .iter()
        .zip(&post.sigma)
        .map(|(m, s)| {
            let eps: f64 = rng.sample(StandardNormal);
            m + s * eps
        })
        .collect()
}

/// Set attention block: `H = LN(X + MH(X, X, X))`, `out = LN(H + MLP(H))`.
/// Permutation-equivariant in the rows of `X`.
#[derive(Clone, Debug)]
pub struct SabBlock {
    mh: MultiHeadAttention,
    ln1: LayerNorm,
    mlp: Mlp,
    ln2: LayerNorm,
}

impl SabBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let d = cfg.d_model;
        Ok(SabBlock {
            mh: MultiHeadAttention::new(store, &format!("{prefix}.mh"), d, cfg.heads, rng)?,
            ln1: LayerNorm::new(store, &format!("{prefix}.ln1"), d)?,
            mlp: Mlp::new(store, &format!("{prefix}.mlp"), d, cfg.mlp_hidden, d, rng)?,
            ln2: LayerNorm::new(store, &format!("{prefix}.ln2"), d)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.value(x).rows() == 0 {
            return Err(Error::EmptySet { op: "sab" });
        }
        let attn = self.mh.apply(tape, store, x, x, x)?;
        let res = tape.add(x, attn)?;
        let h = self.ln1.apply(tape, store, res)?;
        let ff = self.mlp.apply(tape, store, h)?;
        let res2 = tape.add(h, ff)?;
        self.ln2.apply(tape, store, res2)
    }
}

/// Pooling by multi-head attention onto a single learnable seed vector:
/// `H = LN(S + MH(S, MLP(X), MLP(X)))`, `out = LN(H + MLP(H))`.
/// Permutation-invariant in the rows of `X`.
#[derive(Clone, Debug)]
pub struct PmaBlock {
    seeds: String,
    rff: Mlp,
    mh: MultiHeadAttention,
    ln1: LayerNorm,
    mlp: Mlp,
    ln2: LayerNorm,
}

impl PmaBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let d = cfg.d_model;
        let seeds = format!("{prefix}.seeds");
        let limit = (6.0 / (1 + d) as f64).sqrt();
        let seed_init: Vec<f64> = (0..d).map(|_| rng.random_range(-limit..limit)).collect();
        store.register(&seeds, Tensor::from_vec(vec![1, d], seed_init)?)?;
        Ok(PmaBlock {
            seeds,
            rff: Mlp::new(store, &format!("{prefix}.rff"), d, cfg.mlp_hidden, d, rng)?,
            mh: MultiHeadAttention::new(store, &format!("{prefix}.mh"), d, cfg.heads, rng)?,
            ln1: LayerNorm::new(store, &format!("{prefix}.ln1"), d)?,
            mlp: Mlp::new(store, &format!("{prefix}.mlp"), d, cfg.mlp_hidden, d, rng)?,
            ln2: LayerNorm::new(store, &format!("{prefix}.ln2"), d)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.value(x).rows() == 0 {
            return Err(Error::EmptySet { op: "pma" });
        }
        let s = tape.bind_param(store, &self.seeds)?;
        let kv = self.rff.apply(tape, store, x)?;
        let attn = self.mh.apply(tape, store, s, kv, kv)?;
        let res = tape.add(s, attn)?;
        let h = self.ln1.apply(tape, store, res)?;
        let ff = self.mlp.apply(tape, store, h)?;
        let res2 = tape.add(h, ff)?;
        self.ln2.apply(tape, store, res2)
    }
}

/// One pooling level: two stacked SAB blocks followed by PMA.
#[derive(Clone, Debug)]
pub struct SetPool {
    sab1: SabBlock,
    sab2: SabBlock,
    pma: PmaBlock,
}

impl SetPool {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(SetPool {
            sab1: SabBlock::new(store, &format!("{prefix}.sab1"), cfg, rng)?,
            sab2: SabBlock::new(store, &format!("{prefix}.sab2"), cfg, rng)?,
            pma: PmaBlock::new(store, &format!("{prefix}.pma"), cfg, rng)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.sab1.apply(tape, store, x)?;
        let h = self.sab2.apply(tape, store, h)?;
        self.pma.apply(tape, store, h)
    }
}

/// The full dataset encoder: intra-class pooling to prototypes, inter-class
/// pooling to the dataset vector, then linear mean / log-variance heads.
#[derive(Clone, Debug)]
pub struct SetEncoder {
    pub cfg: EncoderConfig,
    embed: Linear,
    intra: SetPool,
    inter: SetPool,
    mu_head: Linear,
    logvar_head: Linear,
}

impl SetEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: EncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(SetEncoder {
            embed: Linear::new(store, &format!("{prefix}.embed"), cfg.d_x, cfg.d_model, rng)?,
            intra: SetPool::new(store, &format!("{prefix}.intra"), &cfg, rng)?,
            inter: SetPool::new(store, &format!("{prefix}.inter"), &cfg, rng)?,
            mu_head: Linear::new(store, &format!("{prefix}.mu"), cfg.d_model, cfg.d_z, rng)?,
            logvar_head: Linear::new(store, &format!("{prefix}.logvar"), cfg.d_model, cfg.d_z, rng)?,
            cfg,
        })
    }

    /// Prototype of a single class batch (`[1, d_model]`).
    pub fn intra_set_pool(&self, tape: &mut Tape, store: &ParamStore, batch: &ClassBatch) -> Result<Var> {
        if batch.instances.rows() == 0 {
            return Err(Error::EmptySet { op: "intra_set_pool" });
        }
        if batch.instances.cols() != self.cfg.d_x {
            return Err(Error::ShapeMismatch {
                op: "intra_set_pool",
                lhs: batch.instances.shape().to_vec(),
                rhs: vec![self.cfg.d_x],
            });
        }
        let x = tape.constant(batch.instances.clone());
        let x = self.embed.apply(tape, store, x)?;
        self.intra.apply(tape, store, x)
    }

    /// Dataset vector from stacked class prototypes (`[1, d_model]`).
    pub fn inter_set_pool(&self, tape: &mut Tape, store: &ParamStore, prototypes: &[Var]) -> Result<Var> {
        if prototypes.is_empty() {
            return Err(Error::EmptySet { op: "inter_set_pool" });
        }
        let stacked = tape.concat_rows(prototypes)?;
        self.inter.apply(tape, store, stacked)
    }

    /// Mean and log-variance heads over a dataset vector.
    pub fn posterior_heads(&self, tape: &mut Tape, store: &ParamStore, h_e: Var) -> Result<(Var, Var)> {
        let mu = self.mu_head.apply(tape, store, h_e)?;
        let logvar = self.logvar_head.apply(tape, store, h_e)?;
        Ok((mu, logvar))
    }

    /// Encode a dataset end to end on the tape; returns `(mu, logvar)` vars.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, dataset: &Dataset) -> Result<(Var, Var)> {
        if dataset.is_empty() {
            return Err(Error::EmptySet { op: "encode" });
        }
        let mut prototypes = Vec::with_capacity(dataset.len());
        for batch in dataset {
            prototypes.push(self.intra_set_pool(tape, store, batch)?);
        }
        let h_e = self.inter_set_pool(tape, store, &prototypes)?;
        self.posterior_heads(tape, store, h_e)
    }

    /// Forward-only encoding to a [`LatentPosterior`].
    pub fn posterior(&self, store: &ParamStore, dataset: &Dataset) -> Result<LatentPosterior> {
        let mut tape = Tape::new();
        let (mu, logvar) = self.encode(&mut tape, store, dataset)?;
        let mu_t = tape.value(mu);
        let lv_t = tape.value(logvar);
        if !mu_t.is_finite() || !lv_t.is_finite() {
            return Err(Error::NonFinite {
                context: "set encoder posterior".to_string(),
            });
        }
        let sigma = lv_t.data().iter().map(|lv| (0.5 * lv).exp()).collect();
        LatentPosterior::new(mu_t.data().to_vec(), sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            d_x: 3,
            d_model: 8,
            d_z: 4,
            heads: 2,
            mlp_hidden: 8,
        }
    }

    fn random_rows(rng: &mut Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    fn permuted<T: Clone>(rows: &[T], perm: &[usize]) -> Vec<T> {
        perm.iter().map(|&i| rows[i].clone()).collect()
    }

    fn shuffled_indices(n: usize, rng: &mut Rng) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        idx
    }

    #[test]
    fn sab_is_permutation_equivariant() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(11);
        let cfg = tiny_cfg();
        let sab = SabBlock::new(&mut store, "sab", &cfg, &mut rng).unwrap();
        for trial in 0..20 {
            let mut r = rng_from(100 + trial);
            let rows = random_rows(&mut r, 6, cfg.d_model);
            let perm = shuffled_indices(6, &mut r);
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::from_rows(&rows).unwrap());
            let xp = tape.constant(Tensor::from_rows(&permuted(&rows, &perm)).unwrap());
            let y = sab.apply(&mut tape, &store, x).unwrap();
            let yp = sab.apply(&mut tape, &store, xp).unwrap();
            let (ty, typ) = (tape.value(y).clone(), tape.value(yp).clone());
            for (out_row, &src) in perm.iter().enumerate().map(|(i, s)| (i, s)) {
                for j in 0..cfg.d_model {
                    let a = typ.at(out_row, j);
                    let b = ty.at(src, j);
                    assert!((a - b).abs() < 1e-9, "equivariance violated: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn sab_single_row_is_deterministic_in_that_row() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(12);
        let cfg = tiny_cfg();
        let sab = SabBlock::new(&mut store, "sab", &cfg, &mut rng).unwrap();
        let row = vec![vec![0.5, -1.0, 0.25, 2.0, -0.5, 0.1, 0.0, 1.5]];
        let mut tape = Tape::new();
        let x1 = tape.constant(Tensor::from_rows(&row).unwrap());
        let x2 = tape.constant(Tensor::from_rows(&row).unwrap());
        let y1 = sab.apply(&mut tape, &store, x1).unwrap();
        let y2 = sab.apply(&mut tape, &store, x2).unwrap();
        assert_eq!(tape.value(y1).data(), tape.value(y2).data());
    }

    #[test]
    fn gradient_through_sab_matches_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(13);
        let cfg = tiny_cfg();
        let sab = SabBlock::new(&mut store, "sab", &cfg, &mut rng).unwrap();
        let mut r = rng_from(14);
        let data: Vec<f64> = (0..4 * cfg.d_model).map(|_| r.random_range(-1.0..1.0)).collect();
        let point = Tensor::from_vec(vec![4, cfg.d_model], data).unwrap();
        let err = grad_check(
            |tape, x| {
                let y = sab.apply(tape, &store, x)?;
                let sq = tape.square(y);
                Ok(tape.sum_all(sq))
            },
            &point,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn pma_is_permutation_invariant_over_100_permutations() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(15);
        let cfg = tiny_cfg();
        let pma = PmaBlock::new(&mut store, "pma", &cfg, &mut rng).unwrap();
        let rows = random_rows(&mut rng, 7, cfg.d_model);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&rows).unwrap());
        let base = pma.apply(&mut tape, &store, x).unwrap();
        let base_v = tape.value(base).clone();
        assert_eq!(base_v.shape(), &[1, cfg.d_model]);
        for trial in 0..100 {
            let mut r = rng_from(2000 + trial);
            let perm = shuffled_indices(7, &mut r);
            let xp = tape.constant(Tensor::from_rows(&permuted(&rows, &perm)).unwrap());
            let yp = pma.apply(&mut tape, &store, xp).unwrap();
            for (a, b) in tape.value(yp).data().iter().zip(base_v.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pma_is_unchanged_when_every_element_is_duplicated() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(16);
        let cfg = tiny_cfg();
        let pma = PmaBlock::new(&mut store, "pma", &cfg, &mut rng).unwrap();
        let rows = random_rows(&mut rng, 5, cfg.d_model);
        let mut doubled = rows.clone();
        doubled.extend(rows.iter().cloned());
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&rows).unwrap());
        let xd = tape.constant(Tensor::from_rows(&doubled).unwrap());
        let y = pma.apply(&mut tape, &store, x).unwrap();
        let yd = pma.apply(&mut tape, &store, xd).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(tape.value(yd).data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    fn make_dataset(seed: u64, classes: usize, b: usize, d_x: usize) -> Dataset {
        let mut rng = rng_from(seed);
        (0..classes)
            .map(|c| ClassBatch {
                class_id: c,
                instances: Tensor::from_rows(&random_rows(&mut rng, b, d_x)).unwrap(),
            })
            .collect()
    }

    #[test]
    fn prototypes_are_invariant_to_instance_order_and_distinct_across_batches() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(17);
        let cfg = tiny_cfg();
        let enc = SetEncoder::new(&mut store, "enc", cfg, &mut rng).unwrap();
        let ds = make_dataset(0, 2, 6, cfg.d_x);

        let mut tape = Tape::new();
        let v0 = enc.intra_set_pool(&mut tape, &store, &ds[0]).unwrap();
        assert_eq!(tape.value(v0).shape(), &[1, cfg.d_model]);

        let mut r = rng_from(18);
        let perm = shuffled_indices(6, &mut r);
        let rows: Vec<Vec<f64>> = (0..6).map(|i| ds[0].instances.row_slice(i).to_vec()).collect();
        let permuted_batch = ClassBatch {
            class_id: 0,
            instances: Tensor::from_rows(&permuted(&rows, &perm)).unwrap(),
        };
        let v0p = enc.intra_set_pool(&mut tape, &store, &permuted_batch).unwrap();
        for (a, b) in tape.value(v0).data().iter().zip(tape.value(v0p).data()) {
            assert!((a - b).abs() < 1e-9);
        }

        let v1 = enc.intra_set_pool(&mut tape, &store, &ds[1]).unwrap();
        let l2: f64 = tape
            .value(v0)
            .data()
            .iter()
            .zip(tape.value(v1).data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!(l2 > 0.0, "disjoint batches should give distinct prototypes");
    }

    #[test]
    fn encoder_posterior_is_invariant_to_class_and_instance_permutations() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(19);
        let cfg = tiny_cfg();
        let enc = SetEncoder::new(&mut store, "enc", cfg, &mut rng).unwrap();
        let ds = make_dataset(7, 4, 5, cfg.d_x);
        let base = enc.posterior(&store, &ds).unwrap();
        for trial in 0..100 {
            let mut r = rng_from(3000 + trial);
            // Permute classes and instances within each class.
            let cperm = shuffled_indices(ds.len(), &mut r);
            let permuted_ds: Dataset = cperm
                .iter()
                .map(|&c| {
                    let rows: Vec<Vec<f64>> = (0..ds[c].instances.rows())
                        .map(|i| ds[c].instances.row_slice(i).to_vec())
                        .collect();
                    let iperm = shuffled_indices(rows.len(), &mut r);
                    ClassBatch {
                        class_id: ds[c].class_id,
                        instances: Tensor::from_rows(&permuted(&rows, &iperm)).unwrap(),
                    }
                })
                .collect();
            let p = enc.posterior(&store, &permuted_ds).unwrap();
            for (a, b) in p.mu.iter().zip(&base.mu) {
                assert!((a - b).abs() < 1e-7);
            }
            for (a, b) in p.sigma.iter().zip(&base.sigma) {
                assert!((a - b).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn encoder_handles_boundary_set_sizes_and_bounded_inputs() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(20);
        let cfg = tiny_cfg();
        let enc = SetEncoder::new(&mut store, "enc", cfg, &mut rng).unwrap();
        // C = 1, b = 1.
        let one = vec![ClassBatch {
            class_id: 0,
            instances: Tensor::from_rows(&[vec![10.0, -10.0, 3.0]]).unwrap(),
        }];
        let p = enc.posterior(&store, &one).unwrap();
        assert_eq!(p.mu.len(), cfg.d_z);
        assert!(p.mu.iter().all(|x| x.is_finite()));
        assert!(p.sigma.iter().all(|x| x.is_finite() && *x > 0.0));

        // Extreme-but-bounded inputs stay finite.
        let mut r = rng_from(21);
        let hot: Dataset = (0..3)
            .map(|c| ClassBatch {
                class_id: c,
                instances: Tensor::from_rows(
                    &(0..4)
                        .map(|_| (0..3).map(|_| r.random_range(-10.0..10.0)).collect())
                        .collect::<Vec<_>>(),
                )
                .unwrap(),
            })
            .collect();
        let p = enc.posterior(&store, &hot).unwrap();
        assert!(p.mu.iter().chain(&p.sigma).all(|x| x.is_finite()));
    }

    #[test]
    fn zero_initialized_heads_give_standard_posterior() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(22);
        let cfg = tiny_cfg();
        let enc = SetEncoder::new(&mut store, "enc", cfg, &mut rng).unwrap();
        for name in ["enc.mu.w", "enc.mu.b", "enc.logvar.w", "enc.logvar.b"] {
            let shape = store.get(name).unwrap().shape().to_vec();
            store.set_value(name, Tensor::zeros(shape)).unwrap();
        }
        let ds = make_dataset(9, 2, 3, cfg.d_x);
        let p = enc.posterior(&store, &ds).unwrap();
        assert!(p.mu.iter().all(|&m| m == 0.0));
        assert!(p.sigma.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn sigma_is_positive_for_many_random_inputs() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(23);
        let cfg = tiny_cfg();
        let enc = SetEncoder::new(&mut store, "enc", cfg, &mut rng).unwrap();
        for trial in 0..1000 {
            let ds = make_dataset(50_000 + trial, 1, 2, cfg.d_x);
            let p = enc.posterior(&store, &ds).unwrap();
            assert!(p.sigma.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn reparameterized_sampling_behaviour() {
        let post = LatentPosterior::new(vec![1.0, -2.0], vec![1e-300, 1e-300]).unwrap();
        // Sigma in the zero limit returns mu.
        let z = sample_z(&post, 5);
        assert!((z[0] - 1.0).abs() < 1e-12 && (z[1] + 2.0).abs() < 1e-12);

        // Equal seeds give identical samples.
        let post2 = LatentPosterior::new(vec![0.5; 4], vec![2.0; 4]).unwrap();
        assert_eq!(sample_z(&post2, 7), sample_z(&post2, 7));

        // The empirical mean approaches mu.
        let mut rng = rng_from(8);
        let mut acc = vec![0.0; 4];
        let n = 10_000;
        for _ in 0..n {
            for (a, zi) in acc.iter_mut().zip(sample_z_with(&post2, &mut rng)) {
                *a += zi;
            }
        }
        for a in &acc {
            let mean = a / n as f64;
            assert!((mean - 0.5).abs() < 0.05, "mean {mean}");
        }
    }

    #[test]
    fn non_positive_sigma_is_rejected() {
        assert!(LatentPosterior::new(vec![0.0], vec![0.0]).is_err());
        assert!(LatentPosterior::new(vec![0.0], vec![-1.0]).is_err());
        assert!(LatentPosterior::new(vec![0.0], vec![f64::NAN]).is_err());
    }
}
