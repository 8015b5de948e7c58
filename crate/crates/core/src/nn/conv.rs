use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, Scalar, Tensor};

use super::{dense_apply, dense_backward, LayerParams};

/// Same-padded cross-correlation over an `[H, W, C_in]` map.
///
/// `k = 1` expects a `[C_in, C_out]` weight and is `dense_apply` per cell.
/// `k = 3` expects `[3, 3, C_in, C_out]` with zero padding.
pub fn conv_apply<T: Scalar>(x: &Tensor<T>, p: &LayerParams<T>, k: usize) -> Result<Tensor<T>> {
    check_input(x)?;
    match k {
        1 => dense_apply(x, p),
        3 => conv3(x, p),
        _ => Err(Error::Config(format!("unsupported kernel size {k}"))),
    }
}

pub fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &mut LayerParams<T>,
    grad_out: &Tensor<T>,
    k: usize,
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>> {
    check_input(x)?;
    match k {
        1 => dense_backward(x, p, grad_out, need_input_grad),
        3 => conv3_backward(x, p, grad_out, need_input_grad),
        _ => Err(Error::Config(format!("unsupported kernel size {k}"))),
    }
}

fn check_input<T: Scalar>(x: &Tensor<T>) -> Result<()> {
    if x.rank() != 3 {
        return Err(Error::dim("conv input [H, W, C]", x.shape(), &[0, 0, 0]));
    }
    Ok(())
}

fn conv3_dims<T: Scalar>(x: &Tensor<T>, p: &LayerParams<T>) -> Result<(usize, usize, usize, usize)> {
    let ws = p.weight.shape();
    if ws.len() != 4 || ws[0] != 3 || ws[1] != 3 || ws[2] != x.shape()[2] || p.bias.shape() != [ws[3]] {
        return Err(Error::dim("conv3x3", x.shape(), ws));
    }
    Ok((x.shape()[0], x.shape()[1], ws[2], ws[3]))
}

/// Neighbours of `(r, c)` inside an `h x w` map, with their kernel tap index.
fn taps(r: usize, c: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..3).flat_map(move |dr| {
        (0..3).filter_map(move |dc| {
            let nr = (r + dr).checked_sub(1)?;
            let nc = (c + dc).checked_sub(1)?;
            (nr < h && nc < w).then_some((dr * 3 + dc, nr, nc))
        })
    })
}

fn conv3<T: Scalar>(x: &Tensor<T>, p: &LayerParams<T>) -> Result<Tensor<T>> {
    let (h, w, cin, cout) = conv3_dims(x, p)?;
    let wt = p.weight.data();
    let xd = x.data();
    let mut out = vec![T::zero(); h * w * cout];
    for r in 0..h {
        for c in 0..w {
            let y = &mut out[(r * w + c) * cout..(r * w + c + 1) * cout];
            y.copy_from_slice(p.bias.data());
            for (tap, nr, nc) in taps(r, c, h, w) {
                let xin = &xd[(nr * w + nc) * cin..(nr * w + nc + 1) * cin];
                for (ci, &xv) in xin.iter().enumerate() {
                    if xv != T::zero() {
                        let off = (tap * cin + ci) * cout;
                        axpy(xv, &wt[off..off + cout], y);
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, w, cout], out)
}

fn conv3_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &mut LayerParams<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>> {
    let (h, w, cin, cout) = conv3_dims(x, p)?;
    if grad_out.shape() != [h, w, cout] {
        return Err(Error::dim("conv3x3 backward", grad_out.shape(), &[h, w, cout]));
    }
    let xd = x.data();
    let gd = grad_out.data();
    {
        let gw = p.grad_weight.data_mut();
        for r in 0..h {
            for c in 0..w {
                let g = &gd[(r * w + c) * cout..(r * w + c + 1) * cout];
                for (tap, nr, nc) in taps(r, c, h, w) {
                    let xin = &xd[(nr * w + nc) * cin..(nr * w + nc + 1) * cin];
                    for (ci, &xv) in xin.iter().enumerate() {
                        if xv != T::zero() {
                            let off = (tap * cin + ci) * cout;
                            axpy(xv, g, &mut gw[off..off + cout]);
                        }
                    }
                }
            }
        }
    }
    {
        let gb = p.grad_bias.data_mut();
        for cell in 0..h * w {
            axpy(T::one(), &gd[cell * cout..(cell + 1) * cout], gb);
        }
    }
    if !need_input_grad {
        return Ok(None);
    }
    let wt = p.weight.data();
    let mut gx = vec![T::zero(); h * w * cin];
    for r in 0..h {
        for c in 0..w {
            let g = &gd[(r * w + c) * cout..(r * w + c + 1) * cout];
            for (tap, nr, nc) in taps(r, c, h, w) {
                let gin = &mut gx[(nr * w + nc) * cin..(nr * w + nc + 1) * cin];
                for (ci, gv) in gin.iter_mut().enumerate() {
                    let off = (tap * cin + ci) * cout;
                    *gv += dot(g, &wt[off..off + cout]);
                }
            }
        }
    }
    Ok(Some(Tensor::new(vec![h, w, cin], gx)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn one_by_one_is_dense_per_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = LayerParams::new(random(&[3, 4], &mut rng), random(&[4], &mut rng));
        let x = random(&[2, 2, 3], &mut rng);
        let y = conv_apply(&x, &p, 1).unwrap();
        assert_eq!(y.shape(), &[2, 2, 4]);
        for cell in 0..4 {
            let single = dense_apply(&Tensor::from_vec(x.row(cell).to_vec()), &p).unwrap();
            assert_eq!(y.row(cell), single.data());
        }
    }

    #[test]
    fn zero_weights_give_bias() {
        let p = LayerParams::<f64>::new(Tensor::zeros(&[3, 3, 2, 3]), Tensor::full(&[3], 0.25));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = conv_apply(&random(&[4, 5, 2], &mut rng), &p, 3).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn three_by_three_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (h, w, cin, cout) = (5usize, 5usize, 2usize, 3usize);
        let x = random(&[h, w, cin], &mut rng);
        let p = LayerParams::new(random(&[3, 3, cin, cout], &mut rng), random(&[cout], &mut rng));
        let y = conv_apply(&x, &p, 3).unwrap();
        for r in 0..h as i64 {
            for c in 0..w as i64 {
                for o in 0..cout {
                    let mut acc = p.bias.data()[o];
                    for dr in -1i64..=1 {
                        for dc in -1i64..=1 {
                            let (nr, nc) = (r + dr, c + dc);
                            if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                                continue;
                            }
                            for i in 0..cin {
                                acc += x.at(&[nr as usize, nc as usize, i])
                                    * p.weight.at(&[(dr + 1) as usize, (dc + 1) as usize, i, o]);
                            }
                        }
                    }
                    let got = y.at(&[r as usize, c as usize, o]);
                    assert!((got - acc).abs() < 1e-12, "({r},{c},{o}) {got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn unsupported_kernel() {
        let p = LayerParams::<f32>::zeros(&[2, 2], 2);
        assert!(matches!(
            conv_apply(&Tensor::zeros(&[2, 2, 2]), &p, 5),
            Err(Error::Config(_))
        ));
    }
}
