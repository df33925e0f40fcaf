//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! Every operation appends a node holding its output value and the indices of
//! its inputs; `backward` walks the list in reverse and accumulates gradients
//! per node. All values are matrices (`[rows, cols]`); scalars are `[1, 1]`.

use std::collections::HashMap;

use crate::diffcore::tensor::{matmul_nn, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::diffcore::ParamStore;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SumAll(Var),
    SoftmaxRows(Var),
    LayerNorm(Var, Var, Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A single-use computation record. Build the graph forward, call
/// [`Tape::backward`] once, then read gradients.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bound: Vec<(String, Var)>,
    bound_index: HashMap<String, Var>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            bound: Vec::new(),
            bound_index: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `[1, 1]` node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.numel(), 1);
        self.nodes[v.0].value.data()[0]
    }

    /// Gradient of the last `backward` root with respect to `v`, if tracked.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(
            Tensor::from_vec(self.nodes[v.0].value.shape().to_vec(), g.clone())
                .expect("gradient shape matches value"),
        )
    }

    /// Insert a constant (no gradient tracking).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Insert a leaf; tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let tracked = t.requires_grad();
        self.push(t, Op::Leaf, tracked)
    }

    /// Bind a named parameter from `store` as a tracked leaf. Repeated binds
    /// of the same name return the same node.
    pub fn bind_param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound_index.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?.clone().with_requires_grad(true);
        let v = self.push(t, Op::Leaf, true);
        self.bound.push((name.to_string(), v));
        self.bound_index.insert(name.to_string(), v);
        Ok(v)
    }

    /// Add gradients of all bound parameters into the store's accumulators.
    /// Call after `backward`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (name, var) in &self.bound {
            if let Some(Some(g)) = self.grads.get(var.0) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    /// Move the bound parameters' gradients out as `(name, grad)` pairs.
    /// Call after `backward`.
    pub fn collect_bound_grads(&mut self, out: &mut Vec<(String, Vec<f64>)>) {
        for (name, var) in &self.bound {
            if let Some(slot) = self.grads.get_mut(var.0) {
                if let Some(g) = slot.take() {
                    out.push((name.clone(), g));
                }
            }
        }
    }

    // ---- shape helpers ----

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    // ---- operations ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let tracked = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let tracked = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), tracked))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let tracked = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), tracked))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let data = matmul_nn(ta.data(), tb.data(), m, k, n);
        let t = Tensor::from_vec(vec![m, n], data)?;
        let tracked = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::MatMul(a, b), tracked))
    }

    /// `[n, d] + [1, d]`, broadcasting the row over all rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: ta.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let d = ta.cols();
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(d) {
            for (x, r) in chunk.iter_mut().zip(tr.data()) {
                *x += r;
            }
        }
        let t = Tensor::from_vec(ta.shape().to_vec(), data)?;
        let tracked = self.needs(a) || self.needs(row);
        Ok(self.push(t, Op::AddRow(a, row), tracked))
    }

    /// `scale * x + shift`, elementwise with constants.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|x| scale * x + shift)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data).expect("same shape");
        let tracked = self.needs(a);
        self.push(t, Op::Affine(a, scale), tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid_scalar, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data).expect("same shape");
        let tracked = self.needs(a);
        self.push(t, op, tracked)
    }

    /// Sum of all entries, as a `[1, 1]` scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let tracked = self.needs(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), tracked)
    }

    /// Mean of all entries, as a `[1, 1]` scalar.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Row-wise softmax over the last dimension (max-shifted).
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let d = ta.cols();
        let mut data = Vec::with_capacity(ta.numel());
        for row in ta.data().chunks(d) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / z));
        }
        let t = Tensor::from_vec(ta.shape().to_vec(), data).expect("same shape");
        let tracked = self.needs(a);
        self.push(t, Op::SoftmaxRows(a), tracked)
    }

    /// Row-wise layer normalization with learned scale and shift (`[1, d]`).
    /// A zero-variance row normalizes to zeros before scale/shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        if d < 1 {
            return Err(Error::EmptySet { op: "layer_norm" });
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let tv = self.value(v);
            if tv.rows() != 1 || tv.cols() != d {
                let _ = name;
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: tx.shape().to_vec(),
                    rhs: tv.shape().to_vec(),
                });
            }
        }
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let tx = self.value(x);
        let mut data = Vec::with_capacity(tx.numel());
        for row in tx.data().chunks(d) {
            let (mean, var) = mean_var(row);
            let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..d {
                data.push((row[j] - mean) * istd * g[j] + b[j]);
            }
        }
        let t = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let tracked = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(t, Op::LayerNorm(x, gamma, beta), tracked))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = ta.data()[i * n + j];
            }
        }
        let t = Tensor::from_vec(vec![n, m], data).expect("transposed shape");
        let tracked = self.needs(a);
        self.push(t, Op::Transpose(a), tracked)
    }

    /// Concatenate along columns; all inputs must share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptySet { op: "concat_cols" });
        }
        let m = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let tp = self.value(p);
            if tp.rows() != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: tp.shape().to_vec(),
                });
            }
            widths.push(tp.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let t = Tensor::from_vec(vec![m, total], data)?;
        let tracked = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), tracked))
    }

    /// Columns `c0..c1` of `a`.
    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        if c0 >= c1 || c1 > n {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: ta.shape().to_vec(),
                rhs: vec![c0, c1],
            });
        }
        let w = c1 - c0;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&ta.row_slice(i)[c0..c1]);
        }
        let t = Tensor::from_vec(vec![m, w], data)?;
        let tracked = self.needs(a);
        Ok(self.push(t, Op::SliceCols(a, c0), tracked))
    }

    /// Stack inputs vertically; all inputs must share the column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptySet { op: "concat_rows" });
        }
        let d = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let tp = self.value(p);
            if tp.cols() != d {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: tp.shape().to_vec(),
                });
            }
            rows += tp.rows();
        }
        let mut data = Vec::with_capacity(rows * d);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::from_vec(vec![rows, d], data)?;
        let tracked = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), tracked))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar root with upstream gradient `seed`.
    pub fn backward_with_seed(&mut self, root: Var, seed: f64) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: self.value(root).shape().to_vec(),
                rhs: vec![1, 1],
            });
        }
        self.backward_seeded(root, &[seed])
    }

    /// Reverse sweep from an arbitrary root carrying an explicit upstream
    /// gradient of matching size (used to stitch staged graphs together).
    pub fn backward_seeded(&mut self, root: Var, seed: &[f64]) -> Result<()> {
        if self.value(root).numel() != seed.len() {
            return Err(Error::ShapeMismatch {
                op: "backward_seeded",
                lhs: self.value(root).shape().to_vec(),
                rhs: vec![seed.len()],
            });
        }
        if !self.value(root).is_finite() {
            return Err(Error::NonFinite {
                context: "backward root".to_string(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed.to_vec());
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            // Take the gradient out for the duration of the propagation;
            // contributions only ever flow to parents (smaller indices).
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    pub fn backward(&mut self, root: Var) -> Result<()> {
        self.backward_with_seed(root, 1.0)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_if(grads, *a, g.iter().cloned());
                self.acc_if(grads, *b, g.iter().cloned());
            }
            Op::Sub(a, b) => {
                self.acc_if(grads, *a, g.iter().cloned());
                self.acc_if(grads, *b, g.iter().map(|x| -x));
            }
            Op::Mul(a, b) => {
                self.acc_if(grads, *a, g.iter().zip(val(*b)).map(|(gi, y)| gi * y));
                self.acc_if(grads, *b, g.iter().zip(val(*a)).map(|(gi, x)| gi * x));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.nodes[a.0].needs_grad {
                    let buf = grad_buf(grads, *a, m * k);
                    matmul_nt_acc(buf, g, tb.data(), m, n, k);
                }
                if self.nodes[b.0].needs_grad {
                    let buf = grad_buf(grads, *b, k * n);
                    matmul_tn_acc(buf, ta.data(), g, m, k, n);
                }
            }
            Op::AddRow(a, row) => {
                self.acc_if(grads, *a, g.iter().cloned());
                if self.nodes[row.0].needs_grad {
                    let d = self.nodes[row.0].value.cols();
                    let mut gr = vec![0.0; d];
                    for chunk in g.chunks(d) {
                        for (acc, x) in gr.iter_mut().zip(chunk) {
                            *acc += x;
                        }
                    }
                    self.acc_if(grads, *row, gr.into_iter());
                }
            }
            Op::Affine(a, scale) => {
                let s = *scale;
                self.acc_if(grads, *a, g.iter().map(|x| s * x));
            }
            Op::Relu(a) => {
                self.acc_if(
                    grads,
                    *a,
                    g.iter()
                        .zip(val(*a))
                        .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 }),
                );
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                self.acc_if(grads, *a, g.iter().zip(y).map(|(gi, yi)| gi * yi * (1.0 - yi)));
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                self.acc_if(grads, *a, g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)));
            }
            Op::Exp(a) => {
                let y = node.value.data();
                self.acc_if(grads, *a, g.iter().zip(y).map(|(gi, yi)| gi * yi));
            }
            Op::Ln(a) => {
                self.acc_if(grads, *a, g.iter().zip(val(*a)).map(|(gi, x)| gi / x));
            }
            Op::Square(a) => {
                self.acc_if(grads, *a, g.iter().zip(val(*a)).map(|(gi, x)| 2.0 * x * gi));
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.acc_if(
                    grads,
                    *a,
                    g.iter()
                        .zip(val(*a))
                        .map(move |(gi, x)| if *x > lo && *x < hi { *gi } else { 0.0 }),
                );
            }
            Op::SumAll(a) => {
                let n = self.nodes[a.0].value.numel();
                let s = g[0];
                self.acc_if(grads, *a, std::iter::repeat(s).take(n));
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let d = node.value.cols();
                let mut ga = Vec::with_capacity(y.len());
                for (grow, yrow) in g.chunks(d).zip(y.chunks(d)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(gi, yi)| gi * yi).sum();
                    ga.extend(grow.iter().zip(yrow).map(|(gi, yi)| yi * (gi - dot)));
                }
                self.acc_if(grads, *a, ga.into_iter());
            }
            Op::LayerNorm(x, gamma, beta) => {
                self.layer_norm_backward(*x, *gamma, *beta, g, grads);
            }
            Op::Transpose(a) => {
                let (m, n) = (node.value.rows(), node.value.cols());
                // g has the transposed shape [m, n]; parent is [n, m].
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        ga[j * m + i] = g[i * n + j];
                    }
                }
                self.acc_if(grads, *a, ga.into_iter());
            }
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.cols();
                    if self.nodes[p.0].needs_grad {
                        let mut gp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            gp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        self.acc_if(grads, p, gp.into_iter());
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, c0) => {
                let ta = &self.nodes[a.0].value;
                let (m, n) = (ta.rows(), ta.cols());
                let w = node.value.cols();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    ga[i * n + c0..i * n + c0 + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                self.acc_if(grads, *a, ga.into_iter());
            }
            Op::ConcatRows(parts) => {
                let d = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.nodes[p.0].value.rows();
                    if self.nodes[p.0].needs_grad {
                        let gp = g[offset * d..(offset + r) * d].to_vec();
                        self.acc_if(grads, p, gp.into_iter());
                    }
                    offset += r;
                }
            }
        }
    }

    fn layer_norm_backward(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let tx = &self.nodes[x.0].value;
        let d = tx.cols();
        let gam = self.nodes[gamma.0].value.data();
        let mut gx = vec![0.0; tx.numel()];
        let mut ggamma = vec![0.0; d];
        let mut gbeta = vec![0.0; d];
        for (r, (xrow, grow)) in tx.data().chunks(d).zip(g.chunks(d)).enumerate() {
            let (mean, var) = mean_var(xrow);
            let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            let dn = d as f64;
            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            let xhat: Vec<f64> = xrow.iter().map(|&xj| (xj - mean) * istd).collect();
            let dxhat: Vec<f64> = grow.iter().zip(gam).map(|(gj, gaj)| gj * gaj).collect();
            for j in 0..d {
                mean_dxhat += dxhat[j];
                mean_dxhat_xhat += dxhat[j] * xhat[j];
            }
            mean_dxhat /= dn;
            mean_dxhat_xhat /= dn;
            for j in 0..d {
                gx[r * d + j] = istd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                ggamma[j] += grow[j] * xhat[j];
                gbeta[j] += grow[j];
            }
        }
        self.acc_if(grads, x, gx.into_iter());
        self.acc_if(grads, gamma, ggamma.into_iter());
        self.acc_if(grads, beta, gbeta.into_iter());
    }

    fn acc_if(
        &self,
        grads: &mut [Option<Vec<f64>>],
        target: Var,
        contribution: impl Iterator<Item = f64>,
    ) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        let slot = &mut grads[target.0];
        match slot {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            None => {
                let n = self.nodes[target.0].value.numel();
                let mut buf = Vec::with_capacity(n);
                buf.extend(contribution);
                debug_assert_eq!(buf.len(), n);
                *slot = Some(buf);
            }
        }
    }
}

/// The (lazily zero-initialized) gradient accumulator for a node.
fn grad_buf(grads: &mut [Option<Vec<f64>>], target: Var, numel: usize) -> &mut [f64] {
    grads[target.0].get_or_insert_with(|| vec![0.0; numel])
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(tape: &mut Tape, shape: Vec<usize>, data: Vec<f64>) -> Var {
        tape.constant(Tensor::from_vec(shape, data).unwrap())
    }

    #[test]
    fn matmul_identity_and_zero_cases() {
        let mut tape = Tape::new();
        let eye = constant(&mut tape, vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let prod = tape.matmul(eye, eye).unwrap();
        assert_eq!(tape.value(prod).data(), &[1.0, 0.0, 0.0, 1.0]);

        let a = constant(&mut tape, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let z = constant(&mut tape, vec![2, 1], vec![0.0, 0.0]);
        let az = tape.matmul(a, z).unwrap();
        assert_eq!(tape.value(az).data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let mut tape = Tape::new();
        let a = constant(&mut tape, vec![2, 3], vec![0.0; 6]);
        let b = constant(&mut tape, vec![2, 2], vec![0.0; 4]);
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn grad_of_sum_of_matmul_wrt_a_is_ones_times_b_transposed() {
        let mut tape = Tape::new();
        let a = tape.leaf(
            Tensor::from_vec(vec![2, 3], vec![0.3, -0.7, 1.1, 0.2, 0.9, -1.4])
                .unwrap()
                .with_requires_grad(true),
        );
        let b_data = vec![0.5, -0.25, 1.5, 2.0, -1.0, 0.75];
        let b = constant(&mut tape, vec![3, 2], b_data.clone());
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum_all(c);
        tape.backward(s).unwrap();
        let g = tape.grad(a).unwrap();
        // d sum(AB) / dA = ones(2x2) · Bᵀ; entry (i, l) = sum of row l of B.
        for i in 0..2 {
            for l in 0..3 {
                let expect = b_data[l * 2] + b_data[l * 2 + 1];
                assert!((g.at(i, l) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_are_uniform_on_equal_logits_and_sum_to_one() {
        let mut tape = Tape::new();
        let x = constant(&mut tape, vec![1, 5], vec![0.0; 5]);
        let y = tape.softmax_rows(x);
        for &p in tape.value(y).data() {
            assert!((p - 0.2).abs() < 1e-15);
        }
        let x2 = constant(&mut tape, vec![3, 4], (0..12).map(|i| (i as f64).sin()).collect());
        let y2 = tape.softmax_rows(x2);
        for row in tape.value(y2).data().chunks(4) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn activation_fixed_points_and_ranges() {
        let mut tape = Tape::new();
        let x = constant(&mut tape, vec![1, 3], vec![0.0, 0.0, -1.0]);
        let sig = tape.sigmoid(x);
        assert_eq!(tape.value(sig).data()[0], 0.5);
        let th = tape.tanh(x);
        assert_eq!(tape.value(th).data()[1], 0.0);
        let re = tape.relu(x);
        assert_eq!(tape.value(re).data()[2], 0.0);

        let wide = constant(&mut tape, vec![1, 7], vec![-80.0, -3.0, -0.1, 0.0, 0.1, 3.0, 80.0]);
        let s = tape.sigmoid(wide);
        for &v in tape.value(s).data() {
            assert!((0.0..=1.0).contains(&v));
        }
        let t = tape.tanh(wide);
        for &v in tape.value(t).data() {
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn layer_norm_of_constant_row_with_unit_scale_is_zero() {
        let mut tape = Tape::new();
        let x = constant(&mut tape, vec![2, 4], vec![3.7; 8]);
        let gamma = constant(&mut tape, vec![1, 4], vec![1.0; 4]);
        let beta = constant(&mut tape, vec![1, 4], vec![0.0; 4]);
        let y = tape.layer_norm(x, gamma, beta).unwrap();
        for &v in tape.value(y).data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn backward_accumulates_through_shared_subexpressions() {
        // y = x*x + x  => dy/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0).with_requires_grad(true));
        let xx = tape.mul(x, x).unwrap();
        let y = tape.add(xx, x).unwrap();
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data()[0], 7.0);
    }

    #[test]
    fn gradient_shape_matches_value_shape() {
        let mut tape = Tape::new();
        let x = tape.leaf(
            Tensor::from_vec(vec![2, 3], vec![1.0; 6])
                .unwrap()
                .with_requires_grad(true),
        );
        let sq = tape.square(x);
        let s = tape.sum_all(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().shape(), tape.value(x).shape());
    }
}
