use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, Scalar, Tensor};

use super::LayerParams;

/// `y = x W + b` over the last axis of `x`. `W` is `[in, out]`.
pub fn dense_apply<T: Scalar>(x: &Tensor<T>, p: &LayerParams<T>) -> Result<Tensor<T>> {
    let (in_dim, out_dim) = dims(p)?;
    if x.last_dim() != in_dim {
        return Err(Error::dim("dense_apply", x.shape(), p.weight.shape()));
    }
    let rows = x.rows();
    let w = p.weight.data();
    let mut out = Vec::with_capacity(rows * out_dim);
    for r in 0..rows {
        let mut y = p.bias.data().to_vec();
        for (k, &xk) in x.row(r).iter().enumerate() {
            if xk != T::zero() {
                axpy(xk, &w[k * out_dim..(k + 1) * out_dim], &mut y);
            }
        }
        out.extend_from_slice(&y);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_dim;
    Tensor::new(shape, out)
}

/// Accumulates weight and bias gradients for `dense_apply(x, p)` given the
/// output gradient. Returns the input gradient when `need_input_grad`.
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &mut LayerParams<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>> {
    let (in_dim, out_dim) = dims(p)?;
    if x.last_dim() != in_dim || grad_out.last_dim() != out_dim || x.rows() != grad_out.rows() {
        return Err(Error::dim("dense_backward", x.shape(), grad_out.shape()));
    }
    let rows = x.rows();
    {
        let gw = p.grad_weight.data_mut();
        for r in 0..rows {
            let g = grad_out.row(r);
            for (k, &xk) in x.row(r).iter().enumerate() {
                if xk != T::zero() {
                    axpy(xk, g, &mut gw[k * out_dim..(k + 1) * out_dim]);
                }
            }
        }
    }
    {
        let gb = p.grad_bias.data_mut();
        for r in 0..rows {
            axpy(T::one(), grad_out.row(r), gb);
        }
    }
    if !need_input_grad {
        return Ok(None);
    }
    let w = p.weight.data();
    let mut gx = Vec::with_capacity(rows * in_dim);
    for r in 0..rows {
        let g = grad_out.row(r);
        for k in 0..in_dim {
            gx.push(dot(g, &w[k * out_dim..(k + 1) * out_dim]));
        }
    }
    Ok(Some(Tensor::new(x.shape().to_vec(), gx)?))
}

fn dims<T: Scalar>(p: &LayerParams<T>) -> Result<(usize, usize)> {
    let s = p.weight.shape();
    if s.len() != 2 || p.bias.shape() != [s[1]] {
        return Err(Error::dim("dense weight/bias", s, p.bias.shape()));
    }
    Ok((s[0], s[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights() {
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let p = LayerParams::<f64>::new(w, Tensor::zeros(&[3]));
        let y = dense_apply(&Tensor::from_vec(vec![1.0, 2.0, 3.0]), &p).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn bias_only() {
        let p = LayerParams::<f64>::new(Tensor::zeros(&[4, 1]), Tensor::from_vec(vec![0.5]));
        let y = dense_apply(&Tensor::from_vec(vec![3.0, -1.0, 7.0, 2.0]), &p).unwrap();
        assert_eq!(y.data(), &[0.5]);
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = LayerParams::<f64>::new(
            Tensor::from_fn(&[4, 3], |_| rng.random_range(-1.0..1.0)),
            Tensor::from_fn(&[3], |_| rng.random_range(-1.0..1.0)),
        );
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = dense_apply(&Tensor::from_vec(x.clone()), &p).unwrap();
        for j in 0..3 {
            let mut acc = p.bias.data()[j];
            for i in 0..4 {
                acc += x[i] * p.weight.at(&[i, j]);
            }
            assert!((y.data()[j] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let p = LayerParams::<f32>::zeros(&[4, 2], 2);
        let err = dense_apply(&Tensor::zeros(&[5, 3]), &p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[5, 3]") && msg.contains("[4, 2]"), "{msg}");
    }
}
