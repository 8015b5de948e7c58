//! Layers with hand-written backward passes.
//!
//! Every layer is a pair of free functions: a forward that returns what the
//! backward needs, and a backward that accumulates parameter gradients into
//! [`LayerParams`] and returns the gradient with respect to its input.

mod activation;
mod conv;
mod dense;
mod dropout;
mod lstm;
mod norm;

pub use activation::{pointwise, pointwise_backward, relu, relu_backward, sigmoid, Activation};
pub use conv::{conv_apply, conv_backward};
pub use dense::{dense_apply, dense_backward};
pub use dropout::{dropout, Dropout};
pub use lstm::{lstm_backward, lstm_step, LstmCache};
pub use norm::{channel_norm, channel_norm_backward, ChannelNorm, NormCache};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Weight and bias of one layer together with their gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        let grad_weight = Tensor::zeros(weight.shape());
        let grad_bias = Tensor::zeros(bias.shape());
        LayerParams {
            weight,
            bias,
            grad_weight,
            grad_bias,
        }
    }

    pub fn zeros(weight_shape: &[usize], out_dim: usize) -> Self {
        Self::new(Tensor::zeros(weight_shape), Tensor::zeros(&[out_dim]))
    }

    /// Glorot-uniform weights, zero bias. The last weight axis is the output
    /// axis; the receptive field is folded into both fans.
    pub fn glorot<R: Rng + ?Sized>(weight_shape: &[usize], rng: &mut R) -> Self {
        let out = *weight_shape.last().expect("weight rank >= 1");
        let fan_in = weight_shape[..weight_shape.len() - 1].iter().product::<usize>();
        let receptive: usize = weight_shape[..weight_shape.len().saturating_sub(2)]
            .iter()
            .product();
        let fan_out = out * receptive;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Tensor::from_fn(weight_shape, |_| T::of(rng.random_range(-limit..limit)));
        Self::new(weight, Tensor::zeros(&[out]))
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(T::zero());
        self.grad_bias.fill(T::zero());
    }

    pub fn num_values(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            grad_weight: self.grad_weight.cast(),
            grad_bias: self.grad_bias.cast(),
        }
    }
}

/// Receives every trainable layer and every non-trainable buffer of a model.
pub trait ParamVisitor<T> {
    fn param(&mut self, name: &str, p: &mut LayerParams<T>);
    fn buffer(&mut self, _name: &str, _t: &mut Tensor<T>) {}
}

/// A model component that exposes its parameters under stable names.
/// Visiting order is fixed; optimizers and checkpoints rely on it.
pub trait Parameterized<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn ParamVisitor<T>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

struct FnVisitor<F>(F);

impl<T, F: FnMut(&str, &mut LayerParams<T>)> ParamVisitor<T> for FnVisitor<F> {
    fn param(&mut self, name: &str, p: &mut LayerParams<T>) {
        (self.0)(name, p)
    }
}

pub fn for_each_param<T, M: Parameterized<T> + ?Sized>(
    model: &mut M,
    f: impl FnMut(&str, &mut LayerParams<T>),
) {
    model.visit("", &mut FnVisitor(f));
}

pub fn zero_grads<T: Scalar, M: Parameterized<T> + ?Sized>(model: &mut M) {
    for_each_param(model, |_, p| p.zero_grad());
}

pub fn scale_grads<T: Scalar, M: Parameterized<T> + ?Sized>(model: &mut M, k: T) {
    for_each_param(model, |_, p| {
        p.grad_weight.scale(k);
        p.grad_bias.scale(k);
    });
}

pub fn count_params<T: Scalar, M: Parameterized<T> + ?Sized>(model: &mut M) -> usize {
    let mut n = 0;
    for_each_param(model, |_, p| n += p.num_values());
    n
}

impl<T> Parameterized<T> for LayerParams<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn ParamVisitor<T>) {
        v.param(prefix, self);
    }
}

impl<T> Parameterized<T> for Vec<LayerParams<T>> {
    fn visit(&mut self, prefix: &str, v: &mut dyn ParamVisitor<T>) {
        for (i, p) in self.iter_mut().enumerate() {
            v.param(&join(prefix, &i.to_string()), p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_respects_limit_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LayerParams::<f64>::glorot(&[30, 10], &mut rng);
        let limit = (6.0f64 / 40.0).sqrt();
        assert!(p.weight.data().iter().all(|w| w.abs() < limit));
        assert!(p.bias.data().iter().all(|&b| b == 0.0));
        assert_eq!(p.grad_weight.shape(), p.weight.shape());
        assert_eq!(p.grad_bias.shape(), p.bias.shape());
    }

    #[test]
    fn glorot_is_seeded() {
        let a = LayerParams::<f32>::glorot(&[3, 3, 4, 5], &mut ChaCha8Rng::seed_from_u64(9));
        let b = LayerParams::<f32>::glorot(&[3, 3, 4, 5], &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
