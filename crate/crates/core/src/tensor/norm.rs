use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Inference-mode batch normalization constants, one entry per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub mean: Vec<T>,
    /// Standard deviation (not variance); strictly positive.
    pub std: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> BatchNormParams<T> {
    pub fn new(mean: Vec<T>, std: Vec<T>, gamma: Vec<T>, beta: Vec<T>) -> Result<Self> {
        let bn = Self {
            mean,
            std,
            gamma,
            beta,
        };
        bn.validate()?;
        Ok(bn)
    }

    /// `(μ, σ, γ, β) = (0, 1, 1, 0)` on every channel.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            std: vec![T::one(); channels],
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.mean.len();
        if self.std.len() != c || self.gamma.len() != c || self.beta.len() != c {
            return Err(Error::shape(
                "BatchNormParams",
                "mean, std, gamma and beta must have equal length",
            ));
        }
        if let Some(s) = self.std.iter().find(|s| !(**s > T::zero())) {
            return Err(Error::invalid(
                "BatchNormParams",
                format!("standard deviation must be positive, got {s:?}"),
            ));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> BatchNormParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect();
        BatchNormParams {
            mean: c(&self.mean),
            std: c(&self.std),
            gamma: c(&self.gamma),
            beta: c(&self.beta),
        }
    }
}

/// `γ·(x − μ)/σ + β` applied per leading-axis channel.
pub fn batch_norm<T: Real>(input: &Tensor<T>, bn: &BatchNormParams<T>) -> Result<Tensor<T>> {
    bn.validate()?;
    if input.rank() == 0 || input.shape()[0] != bn.channels() {
        return Err(Error::shape(
            "batch_norm",
            format!("input {:?} vs {} channels", input.shape(), bn.channels()),
        ));
    }
    let mut out = input.clone();
    for c in 0..bn.channels() {
        let (mu, sigma, gamma, beta) = (bn.mean[c], bn.std[c], bn.gamma[c], bn.beta[c]);
        for v in out.slab_mut(c) {
            *v = gamma * (*v - mu) / sigma + beta;
        }
    }
    Ok(out)
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Real>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= input.rank() {
        return Err(Error::invalid(
            "softmax",
            format!("axis {axis} out of range for shape {:?}", input.shape()),
        ));
    }
    let shape = input.shape();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = input.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut max = T::neg_infinity();
            for k in 0..n {
                max = max.max(data[base + k * inner]);
            }
            let mut total = T::zero();
            for k in 0..n {
                let e = (data[base + k * inner] - max).exp();
                data[base + k * inner] = e;
                total += e;
            }
            for k in 0..n {
                data[base + k * inner] = data[base + k * inner] / total;
            }
        }
    }
    Ok(out)
}
