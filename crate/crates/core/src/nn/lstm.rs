use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, Scalar, Tensor};

use super::activation::sigmoid;
use super::LayerParams;

/// Values saved by [`lstm_step`] for its backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    xh: Vec<T>,
    i: Vec<T>,
    f: Vec<T>,
    g: Vec<T>,
    o: Vec<T>,
    c_prev: Vec<T>,
    tanh_c: Vec<T>,
}

/// One LSTM step with input, forget and output gates.
///
/// Weight is `[in + hid, 4 * hid]` acting on `[x; h_prev]`; gate blocks are
/// ordered input, forget, candidate, output.
pub fn lstm_step<T: Scalar>(
    x: &Tensor<T>,
    h_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
    p: &LayerParams<T>,
) -> Result<(Tensor<T>, Tensor<T>, LstmCache<T>)> {
    let hid = h_prev.len();
    let ws = p.weight.shape();
    if ws.len() != 2 || ws[0] != x.len() + hid || ws[1] != 4 * hid || c_prev.len() != hid {
        return Err(Error::dim("lstm_step", &[x.len(), hid, c_prev.len()], ws));
    }
    let mut xh = Vec::with_capacity(x.len() + hid);
    xh.extend_from_slice(x.data());
    xh.extend_from_slice(h_prev.data());

    let w = p.weight.data();
    let mut z = p.bias.data().to_vec();
    for (k, &v) in xh.iter().enumerate() {
        if v != T::zero() {
            axpy(v, &w[k * 4 * hid..(k + 1) * 4 * hid], &mut z);
        }
    }
    let i: Vec<T> = z[..hid].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<T> = z[hid..2 * hid].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<T> = z[2 * hid..3 * hid].iter().map(|&v| v.tanh()).collect();
    let o: Vec<T> = z[3 * hid..].iter().map(|&v| sigmoid(v)).collect();
    let cp = c_prev.data();
    let c: Vec<T> = (0..hid).map(|k| f[k] * cp[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<T> = (0..hid).map(|k| o[k] * tanh_c[k]).collect();
    let cache = LstmCache {
        xh,
        i,
        f,
        g,
        o,
        c_prev: cp.to_vec(),
        tanh_c,
    };
    Ok((Tensor::from_vec(h), Tensor::from_vec(c), cache))
}

/// Backward through one step. Takes gradients flowing into `h` and `c`,
/// accumulates parameter gradients and returns `(d_x, d_h_prev, d_c_prev)`.
pub fn lstm_backward<T: Scalar>(
    cache: &LstmCache<T>,
    p: &mut LayerParams<T>,
    grad_h: &[T],
    grad_c: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hid = cache.i.len();
    let in_dim = cache.xh.len() - hid;
    let one = T::one();
    let mut dz = vec![T::zero(); 4 * hid];
    let mut dc_prev = vec![T::zero(); hid];
    for k in 0..hid {
        let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
        let dc = grad_c[k] + grad_h[k] * o * (one - tc * tc);
        dz[k] = dc * g * i * (one - i);
        dz[hid + k] = dc * cache.c_prev[k] * f * (one - f);
        dz[2 * hid + k] = dc * i * (one - g * g);
        dz[3 * hid + k] = grad_h[k] * tc * o * (one - o);
        dc_prev[k] = dc * f;
    }
    {
        let gw = p.grad_weight.data_mut();
        for (k, &v) in cache.xh.iter().enumerate() {
            if v != T::zero() {
                axpy(v, &dz, &mut gw[k * 4 * hid..(k + 1) * 4 * hid]);
            }
        }
    }
    axpy(one, &dz, p.grad_bias.data_mut());
    let w = p.weight.data();
    let dxh: Vec<T> = (0..in_dim + hid)
        .map(|k| dot(&dz, &w[k * 4 * hid..(k + 1) * 4 * hid]))
        .collect();
    let dh_prev = dxh[in_dim..].to_vec();
    let mut dx = dxh;
    dx.truncate(in_dim);
    (dx, dh_prev, dc_prev)
}
