//! Attention-free baseline: three same-padded 3x3 convolutions over the
//! fused features concatenated with the tiled question vector.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    channel_norm, channel_norm_backward, conv_apply, conv_backward, join, relu, relu_backward, sigmoid, ChannelNorm,
    LayerParams, Mode, NormCache, ParamVisitor, Parameterized,
};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct FcnHead<T = f32> {
    pub convs: [LayerParams<T>; 3],
    pub norms: [ChannelNorm<T>; 2],
}

#[derive(Debug, Clone)]
pub struct FcnCache<T> {
    input: Tensor<T>,
    relu_out: [Tensor<T>; 2],
    norm_out: [Tensor<T>; 2],
    norm: [NormCache<T>; 2],
    q_dim: usize,
}

/// `[G, G, C_m + q]`: `f_q` repeated at every cell after the `f_m` channels.
pub fn tile_question<T: Scalar>(f_m: &Tensor<T>, f_q: &Tensor<T>) -> Result<Tensor<T>> {
    if f_m.rank() != 3 {
        return Err(Error::dim("tile_question", f_m.shape(), f_q.shape()));
    }
    let s = f_m.shape();
    let mut data = Vec::with_capacity(s[0] * s[1] * (s[2] + f_q.len()));
    for cell in 0..s[0] * s[1] {
        data.extend_from_slice(f_m.row(cell));
        data.extend_from_slice(f_q.data());
    }
    Tensor::new(vec![s[0], s[1], s[2] + f_q.len()], data)
}

impl<T: Scalar> FcnHead<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, widths: [usize; 2], rng: &mut R) -> Self {
        FcnHead {
            convs: [
                LayerParams::glorot(&[3, 3, input, widths[0]], rng),
                LayerParams::glorot(&[3, 3, widths[0], widths[1]], rng),
                LayerParams::glorot(&[3, 3, widths[1], 1], rng),
            ],
            norms: [ChannelNorm::new(widths[0]), ChannelNorm::new(widths[1])],
        }
    }

    pub fn input_channels(&self) -> usize {
        self.convs[0].weight.shape()[2]
    }

    pub fn forward(&self, f_m: &Tensor<T>, f_q: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, FcnCache<T>)> {
        let input = tile_question(f_m, f_q)?;
        if input.last_dim() != self.input_channels() {
            return Err(Error::dim("fcn input", input.shape(), self.convs[0].weight.shape()));
        }
        let r0 = relu(&conv_apply(&input, &self.convs[0], 3)?);
        let (n0, c0) = channel_norm(&r0, &self.norms[0], mode)?;
        let r1 = relu(&conv_apply(&n0, &self.convs[1], 3)?);
        let (n1, c1) = channel_norm(&r1, &self.norms[1], mode)?;
        let z = conv_apply(&n1, &self.convs[2], 3)?;
        let (gh, gw) = (z.shape()[0], z.shape()[1]);
        let p = Tensor::new(vec![gh, gw], z.data().iter().map(|&v| sigmoid(v)).collect())?;
        let cache = FcnCache {
            input,
            relu_out: [r0, r1],
            norm_out: [n0, n1],
            norm: [c0, c1],
            q_dim: f_q.len(),
        };
        Ok((p, cache))
    }

    pub fn backward(&mut self, cache: &FcnCache<T>, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let s = grad_logits.shape().to_vec();
        let gz = grad_logits.clone().reshape(&[s[0], s[1], 1])?;
        let dn1 = conv_backward(&cache.norm_out[1], &mut self.convs[2], &gz, 3, true)?.unwrap();
        let dr1 = channel_norm_backward(&cache.norm[1], &mut self.norms[1], &dn1);
        let dz1 = relu_backward(&cache.relu_out[1], &dr1);
        let dn0 = conv_backward(&cache.norm_out[0], &mut self.convs[1], &dz1, 3, true)?.unwrap();
        let dr0 = channel_norm_backward(&cache.norm[0], &mut self.norms[0], &dn0);
        let dz0 = relu_backward(&cache.relu_out[0], &dr0);
        let dx = conv_backward(&cache.input, &mut self.convs[0], &dz0, 3, true)?.unwrap();
        for (n, c) in self.norms.iter_mut().zip(&cache.norm) {
            n.update_running(c);
        }
        let total = dx.last_dim();
        let mut dq = vec![T::zero(); cache.q_dim];
        for cell in 0..dx.rows() {
            for (g, &v) in dq.iter_mut().zip(&dx.row(cell)[total - cache.q_dim..]) {
                *g += v;
            }
        }
        Ok(Tensor::from_vec(dq))
    }

    pub fn cast<U: Scalar>(&self) -> FcnHead<U> {
        FcnHead {
            convs: [self.convs[0].cast(), self.convs[1].cast(), self.convs[2].cast()],
            norms: [self.norms[0].cast(), self.norms[1].cast()],
        }
    }
}

impl<T> Parameterized<T> for FcnHead<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn ParamVisitor<T>) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            v.param(&join(prefix, &format!("conv{i}")), c);
        }
        for (i, n) in self.norms.iter_mut().enumerate() {
            let name = join(prefix, &format!("norm{i}"));
            v.param(&name, &mut n.params);
            v.buffer(&format!("{name}.running_mean"), &mut n.running_mean);
            v.buffer(&format!("{name}.running_var"), &mut n.running_var);
        }
    }
}
