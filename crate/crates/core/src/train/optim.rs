use crate::error::{ModelError, Result};
use crate::tensor::{Scalar, Tensor};

/// Adam hyperparameters. No weight decay; the learning rate is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Moment buffers of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState, hyper: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(ModelError::Config(format!(
            "adam shape mismatch: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i].to_f64();
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        let p = params[i].to_f64() - hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
        params[i] = T::from_f64(p);
    }
    Ok(())
}

/// Adam over a fixed list of tensors. Parameters that do not require
/// gradients, or received none, are left untouched.
#[derive(Debug)]
pub struct Adam<T: Scalar> {
    pub cfg: AdamConfig,
    params: Vec<Tensor<T>>,
    states: Vec<AdamState>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: Vec<Tensor<T>>, cfg: AdamConfig) -> Self {
        let states = params.iter().map(|p| AdamState::new(p.len())).collect();
        Self { cfg, params, states }
    }

    /// Applies accumulated gradients, then clears them.
    pub fn step(&mut self) -> Result<()> {
        for (p, st) in self.params.iter().zip(&mut self.states) {
            if !p.requires_grad() {
                continue;
            }
            if let Some(g) = p.grad() {
                let cfg = self.cfg;
                let mut res = Ok(());
                p.update_data(|data| res = adam_step(data, &g, st, &cfg));
                res?;
            }
        }
        self.zero_grad();
        Ok(())
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}
