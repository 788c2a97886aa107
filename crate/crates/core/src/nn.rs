//! Parameter containers shared by the embedding, attention and head layers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ModelError, Result};
use crate::tensor::{Checkpoint, Scalar, Tensor};

pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;

/// Normal(0, std) samples redrawn until they fall within ±2·std.
pub fn trunc_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break T::from_f64(v);
            }
        })
        .collect()
}

pub fn param<T: Scalar>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::param(shape, data).expect("parameter shape and data agree")
}

/// Named parameter list, in a stable order.
pub type NamedParams<T> = Vec<(String, Tensor<T>)>;

#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, d_in: usize, d_out: usize) -> Self {
        Self {
            weight: param(&[d_in, d_out], trunc_normal(rng, d_in * d_out, INIT_STD)),
            bias: param(&[d_out], vec![T::zero(); d_out]),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: param(&[d_in, d_out], vec![T::zero(); d_in * d_out]),
            bias: param(&[d_out], vec![T::zero(); d_out]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.linear(&self.weight, Some(&self.bias))?)
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<T: Scalar> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: param(&[dim], vec![T::one(); dim]),
            bias: param(&[dim], vec![T::zero(); dim]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.layer_norm(&self.gain, &self.bias, T::from_f64(LN_EPS))?)
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((format!("{prefix}.weight"), self.gain.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Copies checkpoint entries into matching parameters. Every name in
/// `params` must be present with the same shape unless `partial` is set,
/// in which case missing names are skipped. Returns the names loaded.
pub fn load_params<T: Scalar>(params: &NamedParams<T>, ckpt: &Checkpoint<T>, partial: bool) -> Result<Vec<String>> {
    let mut loaded = Vec::new();
    for (name, t) in params {
        match ckpt.get(name) {
            Some((shape, data)) => {
                if shape != t.shape() {
                    return Err(ModelError::Checkpoint(format!(
                        "{name}: checkpoint shape {shape:?}, model shape {:?}",
                        t.shape()
                    )));
                }
                t.update_data(|d| d.copy_from_slice(data));
                loaded.push(name.clone());
            }
            None if partial => {}
            None => return Err(ModelError::Checkpoint(format!("missing tensor {name}"))),
        }
    }
    Ok(loaded)
}

pub fn to_checkpoint<T: Scalar>(params: &NamedParams<T>) -> Checkpoint<T> {
    Checkpoint::from_tensors(params.iter().map(|(n, t)| (n.as_str(), t)))
}
