//! Parameter plumbing shared by the three models.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

/// A model as an ordered list of named parameter tensors. The order of
/// [`Module::named_params`] and [`Module::params_mut`] must agree.
pub trait Module {
    fn named_params(&self) -> Vec<(String, &Tensor)>;

    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }
}

/// Registers every parameter on `g`, trainable or constant.
pub fn bind_params<M: Module + ?Sized>(g: &mut Graph, model: &M, trainable: bool) -> Vec<Var> {
    model
        .params()
        .into_iter()
        .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect()
}

/// Gradients of bound parameters in binding order; unused parameters get zeros.
pub fn collect_grads<M: Module + ?Sized>(g: &Graph, vars: &[Var], model: &M) -> Vec<Tensor> {
    vars.iter()
        .zip(model.params())
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect()
}

/// Optimizer bound to a model's parameter list.
pub fn adam_for<M: Module + ?Sized>(model: &M, lr: f64) -> Adam {
    Adam::new(AdamConfig::with_lr(lr), &model.params())
}

pub fn apply_adam<M: Module + ?Sized>(opt: &mut Adam, model: &mut M, grads: &[Tensor]) -> Result<()> {
    let mut params = model.params_mut();
    opt.step(&mut params, grads)
}

/// Common knobs of the training loops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be finite and nonnegative", self.lr)));
        }
        Ok(())
    }
}

/// A seeded shuffle of `0..n` split into batches.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Uniform `±sqrt(6/fan_in)` bound.
pub fn he_uniform_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

pub fn check_loss(loss: f64, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what}: loss became {loss}")))
    }
}
