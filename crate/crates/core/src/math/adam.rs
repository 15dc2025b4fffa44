use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::error::{Error, Result};

/// A trainable matrix together with its gradient buffer and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
    pub adam_m: DenseMatrix,
    pub adam_v: DenseMatrix,
    pub step_count: u64,
}

impl Param {
    pub fn new(name: impl Into<String>, value: DenseMatrix) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: DenseMatrix::zeros(r, c),
            adam_m: DenseMatrix::zeros(r, c),
            adam_v: DenseMatrix::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::new(name, DenseMatrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamHyper {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// One Adam step with bias correction. Weight decay is decoupled: the value
/// is shrunk by `1 - lr * weight_decay` before the moment update is applied.
/// The gradient buffer is zeroed afterwards.
pub fn adam_step(param: &mut Param, hyper: &AdamHyper) -> Result<()> {
    hyper.validate()?;
    if !param.grad.all_finite() {
        return Err(Error::NonFiniteGradient(param.name.clone()));
    }
    param.step_count += 1;
    let t = param.step_count as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let decay = 1.0 - hyper.learning_rate * hyper.weight_decay;

    let grads = param.grad.as_slice();
    let m = param.adam_m.as_mut_slice();
    let v = param.adam_v.as_mut_slice();
    for (((w, &g), m), v) in param
        .value
        .as_mut_slice()
        .iter_mut()
        .zip(grads)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w *= decay;
        *w -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
    param.zero_grad();
    Ok(())
}

/// A model whose trainable state is an ordered list of [`Param`]s.
pub trait ParamSet {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn num_values(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    fn flat_values(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.value.as_slice().iter().copied())
            .collect()
    }

    fn flat_grads(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.grad.as_slice().iter().copied())
            .collect()
    }

    fn set_flat_values(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.value.len();
            p.value
                .as_mut_slice()
                .copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        debug_assert_eq!(offset, flat.len());
    }

    fn scale_grads(&mut self, alpha: f64) {
        for p in self.params_mut() {
            p.grad.scale(alpha);
        }
    }

    fn adam_step_all(&mut self, hyper: &AdamHyper) -> Result<()> {
        for p in self.params_mut() {
            adam_step(p, hyper)?;
        }
        Ok(())
    }
}
