use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::{LayerParams, Mode};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Per-channel standardization over the cells of a feature map, with a
/// learned scale (`weight`) and shift (`bias`). Train mode normalizes with the
/// statistics of the current map; eval mode uses the running estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelNorm<T = f32> {
    pub params: LayerParams<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct NormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
    mode: Mode,
}

impl<T: Scalar> ChannelNorm<T> {
    pub fn new(channels: usize) -> Self {
        ChannelNorm {
            params: LayerParams::new(Tensor::full(&[channels], T::one()), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
        }
    }

    pub fn channels(&self) -> usize {
        self.params.bias.len()
    }

    /// Folds the statistics seen in a training forward pass into the running
    /// estimates.
    pub fn update_running(&mut self, cache: &NormCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = T::of(MOMENTUM);
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = keep * *r + m * b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ChannelNorm<U> {
        ChannelNorm {
            params: self.params.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
        }
    }
}

pub fn channel_norm<T: Scalar>(x: &Tensor<T>, n: &ChannelNorm<T>, mode: Mode) -> Result<(Tensor<T>, NormCache<T>)> {
    let ch = n.channels();
    if x.last_dim() != ch {
        return Err(Error::dim("channel_norm", x.shape(), &[ch]));
    }
    let rows = x.rows();
    let inv_n = T::of(1.0 / rows as f64);
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![T::zero(); ch];
            for r in 0..rows {
                for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m *= inv_n);
            let mut var = vec![T::zero(); ch];
            for r in 0..rows {
                for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s *= inv_n);
            (mean, var)
        }
        Mode::Eval => (n.running_mean.data().to_vec(), n.running_var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(EPS)).sqrt()).collect();
    let mut xhat = x.clone();
    let mut y = x.clone();
    let (gamma, beta) = (n.params.weight.data(), n.params.bias.data());
    for r in 0..rows {
        let xr = xhat.row_mut(r);
        for c in 0..ch {
            xr[c] = (xr[c] - mean[c]) * inv_std[c];
        }
        let yr = y.row_mut(r);
        for c in 0..ch {
            yr[c] = gamma[c] * xr[c] + beta[c];
        }
    }
    let cache = NormCache {
        xhat,
        inv_std,
        batch_mean: mean,
        batch_var: var,
        mode,
    };
    Ok((y, cache))
}

/// Backward of a train-mode [`channel_norm`] (statistics depend on the input).
pub fn channel_norm_backward<T: Scalar>(cache: &NormCache<T>, n: &mut ChannelNorm<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let ch = n.channels();
    let rows = grad_out.rows();
    let gamma = n.params.weight.data().to_vec();
    let mut sum_dy = vec![T::zero(); ch];
    let mut sum_dy_xhat = vec![T::zero(); ch];
    for r in 0..rows {
        let (g, xh) = (grad_out.row(r), cache.xhat.row(r));
        for c in 0..ch {
            sum_dy[c] += g[c];
            sum_dy_xhat[c] += g[c] * xh[c];
        }
    }
    for c in 0..ch {
        n.params.grad_weight.data_mut()[c] += sum_dy_xhat[c];
        n.params.grad_bias.data_mut()[c] += sum_dy[c];
    }
    let mut dx = grad_out.clone();
    let count = T::of(rows as f64);
    for r in 0..rows {
        let xh = cache.xhat.row(r);
        let d = dx.row_mut(r);
        for c in 0..ch {
            d[c] = match cache.mode {
                Mode::Train => {
                    gamma[c] * cache.inv_std[c] * (d[c] - sum_dy[c] / count - xh[c] * sum_dy_xhat[c] / count)
                }
                Mode::Eval => gamma[c] * cache.inv_std[c] * d[c],
            };
        }
    }
    dx
}
