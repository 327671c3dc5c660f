//! Named parameters with Adam state.

use super::{Elem, Tensor};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A trainable tensor with its gradient buffer and Adam moments.
#[derive(Debug, Clone)]
pub struct Parameter<T: Elem = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
}

/// Ordered collection of parameters; order is the checkpoint record order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T: Elem = f32> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Elem> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name '{name}'"
        );
        let shape = value.shape().to_vec();
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            step: 0,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub(crate) fn add_grad(&mut self, id: ParamId, delta: &Tensor<T>) {
        let g = &mut self.params[id.0].grad;
        debug_assert_eq!(g.shape(), delta.shape());
        for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
            *a += *b;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for v in p.grad.data_mut() {
                *v = T::ZERO;
            }
        }
    }

    pub fn total_elements(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|id| self.params[id.0].value.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient in parameter '{0}'; step aborted")]
    NonFiniteGradient(String),
}

/// Bias-corrected Adam update applied in place to the listed parameters.
///
/// All gradients are validated first; a non-finite gradient aborts the whole
/// step before any parameter moves.
pub fn adam_step<T: Elem>(
    set: &mut ParamSet<T>,
    ids: &[ParamId],
    cfg: &AdamConfig,
) -> Result<(), OptimError> {
    for id in ids {
        let p = &set.params[id.0];
        if !p.grad.all_finite() {
            return Err(OptimError::NonFiniteGradient(p.name.clone()));
        }
    }
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let eps = T::from_f64(cfg.eps);
    for id in ids {
        let p = &mut set.params[id.0];
        p.step += 1;
        let t = p.step as f64;
        let corr1 = T::from_f64(1.0 - cfg.beta1.powf(t));
        let corr2 = T::from_f64(1.0 - cfg.beta2.powf(t));
        let lr = T::from_f64(cfg.lr);
        for i in 0..p.value.len() {
            let g = p.grad.data()[i];
            let m = b1 * p.m.data()[i] + (T::ONE - b1) * g;
            let v = b2 * p.v.data()[i] + (T::ONE - b2) * g * g;
            p.m.data_mut()[i] = m;
            p.v.data_mut()[i] = v;
            let m_hat = m / corr1;
            let v_hat = v / corr2;
            p.value.data_mut()[i] = p.value.data()[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
