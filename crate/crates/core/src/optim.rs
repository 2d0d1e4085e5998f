//! Adagrad and the cosine learning-rate schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamGrad;
use crate::error::{NasError, Result};
use crate::tensor::{ParamId, ParamStore, Scalar, Tensor};

pub const ADAGRAD_EPS: f64 = 1e-10;

/// Per-parameter sum of squared gradients.
#[derive(Clone, Debug)]
pub struct Adagrad<T> {
    pub base_lr: f64,
    pub eps: f64,
    accum: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Adagrad<T> {
    pub fn new(base_lr: f64) -> Self {
        Adagrad {
            base_lr,
            eps: ADAGRAD_EPS,
            accum: Vec::new(),
        }
    }

    pub fn accumulator(&self, id: ParamId) -> Option<&[T]> {
        self.accum.get(id.0).and_then(|a| a.as_deref())
    }

    /// Restores an accumulator slot (used by checkpoint loading).
    pub fn set_accumulator(&mut self, id: ParamId, acc: Vec<T>) {
        if self.accum.len() <= id.0 {
            self.accum.resize(id.0 + 1, None);
        }
        self.accum[id.0] = Some(acc);
    }

    fn slot(&mut self, id: ParamId, len: usize) -> &mut Vec<T> {
        if self.accum.len() <= id.0 {
            self.accum.resize(id.0 + 1, None);
        }
        self.accum[id.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    /// `acc += g²; p -= lr · g / (sqrt(acc) + eps)` for one dense tensor.
    pub fn step_dense(&mut self, id: ParamId, param: &mut Tensor<T>, grad: &[T], lr: f64) -> Result<()> {
        if param.len() != grad.len() {
            return Err(NasError::shape("adagrad_step", param.shape(), &[grad.len()]));
        }
        let eps = T::of(self.eps);
        let lr = T::of(lr);
        let acc = self.slot(id, param.len());
        for ((p, &g), a) in param.data_mut().iter_mut().zip(grad).zip(acc.iter_mut()) {
            *a += g * g;
            *p -= lr * g / (a.sqrt() + eps);
        }
        Ok(())
    }

    /// Same update restricted to the given rows of a 2-D table.
    pub fn step_rows<'a>(
        &mut self,
        id: ParamId,
        param: &mut Tensor<T>,
        rows: impl IntoIterator<Item = (usize, &'a [T])>,
        lr: f64,
    ) -> Result<()> {
        let shape = param.shape().to_vec();
        if shape.len() != 2 {
            return Err(NasError::shape("adagrad_step", &shape, &[]));
        }
        let e = shape[1];
        let eps = T::of(self.eps);
        let lr = T::of(lr);
        let acc = self.slot(id, param.len());
        let data = param.data_mut();
        for (r, g) in rows {
            if r >= shape[0] || g.len() != e {
                return Err(NasError::shape("adagrad_step", &shape, &[r, g.len()]));
            }
            for j in 0..e {
                let k = r * e + j;
                acc[k] += g[j] * g[j];
                data[k] -= lr * g[j] / (acc[k].sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Applies every gradient in `grads` to `store`.
    pub fn step<'g>(
        &mut self,
        store: &mut ParamStore<T>,
        grads: impl IntoIterator<Item = (ParamId, &'g ParamGrad<T>)>,
        lr: f64,
    ) -> Result<()> {
        for (id, g) in grads {
            match g {
                ParamGrad::Dense(d) => self.step_dense(id, store.get_mut(id), d, lr)?,
                ParamGrad::Rows(r) => {
                    self.step_rows(id, store.get_mut(id), r.iter().map(|(k, v)| (*k, v.as_slice())), lr)?
                }
            }
        }
        Ok(())
    }
}

/// Cosine decay from `base_lr` at step 0 to exactly 0 at `total_steps`, no restarts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(NasError::InvalidArgument("total_steps must be positive".into()));
        }
        Ok(LrSchedule { base_lr, total_steps })
    }

    pub fn cosine_lr(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(NasError::InvalidArgument(format!(
                "step {step} beyond schedule length {}",
                self.total_steps
            )));
        }
        if step == self.total_steps {
            return Ok(0.0);
        }
        let frac = step as f64 / self.total_steps as f64;
        Ok(self.base_lr * 0.5 * (1.0 + (PI * frac).cos()))
    }
}
