use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

/// Logistic function, kept strictly inside `(0, 1)` even where the float
/// type would round to an endpoint.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let y = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    if y.is_nan() {
        return y;
    }
    let hi = T::one() - T::epsilon() / T::of(2.0);
    y.max(T::min_positive_value()).min(hi)
}

pub fn pointwise<T: Scalar>(x: &Tensor<T>, f: Activation) -> Tensor<T> {
    match f {
        Activation::Tanh => x.map(|v| v.tanh()),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// Gradient through `pointwise`, expressed in terms of its output `y`.
pub fn pointwise_backward<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>, f: Activation) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| match f {
            Activation::Tanh => g * (T::one() - y * y),
            Activation::Sigmoid => g * y * (T::one() - y),
        })
        .collect();
    Tensor::new(y.shape().to_vec(), data).expect("same shape")
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(y.shape().to_vec(), data).expect("same shape")
}
