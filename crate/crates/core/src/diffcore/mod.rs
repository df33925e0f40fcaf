//! Differentiable computation substrate: tensors, a reverse-mode tape, the
//! neural building blocks, an adaptive-moment optimizer, checkpoint I/O, and
//! a finite-difference gradient checker.

pub mod checkpoint;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_params};
pub use optim::{optimizer_step, OptimizerState};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Named parameter tensors with per-parameter gradient accumulators.
/// Iteration order is the sorted name order, so serialization and the
/// optimizer sweep are deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

#[derive(Clone, Debug)]
struct Param {
    value: Tensor,
    grad: Option<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateParam {
                name: name.to_string(),
            });
        }
        self.entries.insert(
            name.to_string(),
            Param {
                value: value.with_requires_grad(true),
                grad: None,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParam {
                name: name.to_string(),
            })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::UnknownParam {
                name: name.to_string(),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// Parameter names in deterministic (sorted) order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    /// Add `delta` into the gradient accumulator of `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        let p = self.entries.get_mut(name).ok_or_else(|| Error::UnknownParam {
            name: name.to_string(),
        })?;
        if delta.len() != p.value.numel() {
            return Err(Error::ShapeMismatch {
                op: "accumulate_grad",
                lhs: p.value.shape().to_vec(),
                rhs: vec![delta.len()],
            });
        }
        match &mut p.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => p.grad = Some(delta.to_vec()),
        }
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Option<&[f64]> {
        self.entries.get(name).and_then(|p| p.grad.as_deref())
    }

    /// Multiply every accumulated gradient by `factor` (batch averaging).
    pub fn scale_grads(&mut self, factor: f64) {
        for p in self.entries.values_mut() {
            if let Some(g) = &mut p.grad {
                for gi in g.iter_mut() {
                    *gi *= factor;
                }
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = None;
        }
    }

    /// Set every gradient accumulator to zeros (present but zero). Reuses
    /// existing buffers rather than reallocating.
    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            match &mut p.grad {
                Some(g) => g.fill(0.0),
                None => p.grad = Some(vec![0.0; p.value.numel()]),
            }
        }
    }

    /// Replace a parameter's value (shape must match).
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self.entries.get_mut(name).ok_or_else(|| Error::UnknownParam {
            name: name.to_string(),
        })?;
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value.with_requires_grad(true);
        Ok(())
    }
}
