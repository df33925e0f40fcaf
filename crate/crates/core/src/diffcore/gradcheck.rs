//! Central finite-difference gradient checking.

use crate::diffcore::tape::{Tape, Var};
use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const FD_STEP: f64 = 1e-5;

/// Compare the reverse-mode gradient of a scalar-valued function at `point`
/// against central finite differences. Returns the maximum relative error
/// over all coordinates (normalized by `max(1, |analytic|, |numeric|)`).
pub fn grad_check<F>(f: F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone().with_requires_grad(true));
    let out = f(&mut tape, x)?;
    ensure_scalar_finite(&tape, out)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(x)
        .ok_or_else(|| Error::MissingGradient {
            name: "grad_check point".to_string(),
        })?
        .data()
        .to_vec();

    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone().with_requires_grad(false));
        let out = f(&mut tape, x)?;
        ensure_scalar_finite(&tape, out)?;
        Ok(tape.scalar_value(out))
    };

    let mut worst: f64 = 0.0;
    let base = point.data().to_vec();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += FD_STEP;
        let mut minus = base.clone();
        minus[i] -= FD_STEP;
        let fp = eval(&Tensor::from_vec(point.shape().to_vec(), plus)?)?;
        let fm = eval(&Tensor::from_vec(point.shape().to_vec(), minus)?)?;
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

/// Like [`grad_check`] but differentiates with respect to every parameter in
/// `store` (the loss builder may also consume fixed inputs it captures).
pub fn grad_check_params<F>(build: F, store: &mut ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = build(&mut tape, store)?;
    ensure_scalar_finite(&tape, out)?;
    tape.backward(out)?;
    let mut scratch = store.clone();
    scratch.clear_grads();
    tape.accumulate_param_grads(&mut scratch)?;

    let names: Vec<String> = store.names().map(String::from).collect();
    let mut worst: f64 = 0.0;
    for name in &names {
        let analytic: Vec<f64> = match scratch.grad(name) {
            Some(g) => g.to_vec(),
            None => vec![0.0; store.get(name)?.numel()],
        };
        let numel = store.get(name)?.numel();
        for i in 0..numel {
            let orig = store.get(name)?.data()[i];
            store.get_mut(name)?.data_mut()[i] = orig + FD_STEP;
            let fp = eval_loss(&build, store)?;
            store.get_mut(name)?.data_mut()[i] = orig - FD_STEP;
            let fm = eval_loss(&build, store)?;
            store.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    Ok(worst)
}

fn eval_loss<F>(build: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = build(&mut tape, store)?;
    ensure_scalar_finite(&tape, out)?;
    Ok(tape.scalar_value(out))
}

fn ensure_scalar_finite(tape: &Tape, v: Var) -> Result<()> {
    if tape.value(v).numel() != 1 {
        return Err(Error::ShapeMismatch {
            op: "grad_check",
            lhs: tape.value(v).shape().to_vec(),
            rhs: vec![1, 1],
        });
    }
    if !tape.scalar_value(v).is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check objective".to_string(),
        });
    }
    Ok(())
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Result of one gradient-suite item.
#[derive(Clone, Debug)]
pub struct SuiteItem {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl SuiteItem {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

/// Gradient checks for every tape primitive at `points` seeded random points
/// each. Composite losses are covered by [`crate::diag`].
pub fn primitive_suite(points: usize) -> Result<Vec<SuiteItem>> {
    use crate::rng::rng_from;
    use rand::Rng as _;

    let mut items = Vec::new();
    let mut check =
        |name: &'static str,
         threshold: f64,
         f: &dyn Fn(&mut Tape, Var) -> Result<Var>|
         -> Result<()> {
            let mut worst: f64 = 0.0;
            for p in 0..points {
                let mut rng = rng_from(crate::rng::derive(41, name, p as u64));
                let data: Vec<f64> = (0..12)
                    .map(|_| {
                        // Keep away from relu/clamp kinks at 0.
                        let x: f64 = rng.random_range(0.1..2.0);
                        if rng.random_bool(0.5) {
                            x
                        } else {
                            -x
                        }
                    })
                    .collect();
                let t = Tensor::from_vec(vec![3, 4], data)?;
                worst = worst.max(grad_check(f, &t)?);
            }
            items.push(SuiteItem {
                name,
                max_rel_err: worst,
                threshold,
            });
            Ok(())
        };

    let weight = |tape: &mut Tape| {
        let data: Vec<f64> = (0..12).map(|i| ((i * 7 + 3) as f64 * 0.13).sin()).collect();
        tape.constant(Tensor::from_vec(vec![4, 3], data).unwrap())
    };

    check("matmul", 1e-4, &|tape, x| {
        let w = weight(tape);
        let y = tape.matmul(x, w)?;
        Ok(tape.sum_all(y))
    })?;
    check("add_mul_sub", 1e-4, &|tape, x| {
        let y = tape.mul(x, x)?;
        let z = tape.add(y, x)?;
        let w = tape.sub(z, x)?;
        Ok(tape.sum_all(w))
    })?;
    check("relu", 1e-4, &|tape, x| {
        let y = tape.relu(x);
        let sq = tape.square(y);
        Ok(tape.sum_all(sq))
    })?;
    check("sigmoid", 1e-4, &|tape, x| {
        let y = tape.sigmoid(x);
        let sq = tape.square(y);
        Ok(tape.sum_all(sq))
    })?;
    check("tanh", 1e-4, &|tape, x| {
        let y = tape.tanh(x);
        let sq = tape.square(y);
        Ok(tape.sum_all(sq))
    })?;
    check("exp_ln", 1e-4, &|tape, x| {
        let sq = tape.square(x);
        let shifted = tape.affine(sq, 1.0, 0.5);
        let l = tape.ln(shifted);
        let e = tape.exp(l);
        Ok(tape.sum_all(e))
    })?;
    check("softmax", 1e-4, &|tape, x| {
        let y = tape.softmax_rows(x);
        let sq = tape.square(y);
        Ok(tape.sum_all(sq))
    })?;
    check("layer_norm", 1e-4, &|tape, x| {
        let d = tape.value(x).cols();
        let gamma_data: Vec<f64> = (0..d).map(|j| 0.5 + 0.2 * j as f64).collect();
        let gamma = tape.constant(Tensor::from_vec(vec![1, d], gamma_data).unwrap());
        let beta = tape.constant(Tensor::from_vec(vec![1, d], vec![0.1; d]).unwrap());
        let y = tape.layer_norm(x, gamma, beta)?;
        let sq = tape.square(y);
        Ok(tape.sum_all(sq))
    })?;
    check("add_row", 1e-4, &|tape, x| {
        let d = tape.value(x).cols();
        let row_data: Vec<f64> = (0..d).map(|j| 0.3 - 0.1 * j as f64).collect();
        let row = tape.constant(Tensor::from_vec(vec![1, d], row_data).unwrap());
        let y = tape.add_row(x, row)?;
        let sq = tape.square(y);
        Ok(tape.sum_all(sq))
    })?;
    check("transpose_slice_concat", 1e-4, &|tape, x| {
        let t = tape.transpose(x);
        let left = tape.slice_cols(t, 0, 2)?;
        let right = tape.slice_cols(t, 2, 3)?;
        let right2 = tape.concat_cols(&[right, right])?;
        let joined = tape.concat_cols(&[left, right2])?;
        let stacked = tape.concat_rows(&[joined, joined])?;
        let sq = tape.square(stacked);
        Ok(tape.sum_all(sq))
    })?;
    check("clamp", 1e-4, &|tape, x| {
        let y = tape.clamp(x, -1.75, 1.75);
        let sq = tape.square(y);
        Ok(tape.sum_all(sq))
    })?;
    Ok(items)
}
