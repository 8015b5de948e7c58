//! Multimodal attention layer and the two-layer stack built from it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{conv_apply, conv_backward, dense_apply, dense_backward, join, sigmoid, LayerParams, ParamVisitor, Parameterized};
use crate::tensor::{axpy, Scalar, Tensor};

/// One attention layer over a `[G, G, C_m]` map:
///
/// ```text
/// m_att = conv_b(tanh(conv_a(f_m)))          1x1 convs, C_m -> hidden -> dim
/// q_att = tanh(dense_q(f_q))                 tiled over every cell
/// p_att = sigmoid(conv_out(tanh(m_att + q_att)))
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer<T = f32> {
    pub conv_a: LayerParams<T>,
    pub conv_b: LayerParams<T>,
    pub dense_q: LayerParams<T>,
    pub conv_out: LayerParams<T>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    f_m: Tensor<T>,
    f_q: Tensor<T>,
    a: Tensor<T>,
    q_att: Tensor<T>,
    s: Tensor<T>,
    /// `[G, G]` probabilities.
    pub p: Tensor<T>,
}

impl<T: Scalar> AttentionLayer<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, q_dim: usize, hidden: usize, dim: usize, rng: &mut R) -> Self {
        AttentionLayer {
            conv_a: LayerParams::glorot(&[channels, hidden], rng),
            conv_b: LayerParams::glorot(&[hidden, dim], rng),
            dense_q: LayerParams::glorot(&[q_dim, dim], rng),
            conv_out: LayerParams::glorot(&[dim, 1], rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv_a.weight.shape()[0]
    }

    pub fn forward(&self, f_m: &Tensor<T>, f_q: &Tensor<T>) -> Result<(Tensor<T>, AttentionCache<T>)> {
        if f_m.rank() != 3 || f_m.shape()[2] != self.channels() {
            return Err(Error::dim("attention f_m", f_m.shape(), self.conv_a.weight.shape()));
        }
        let (gh, gw) = (f_m.shape()[0], f_m.shape()[1]);
        let a = conv_apply(f_m, &self.conv_a, 1)?.map(|v| v.tanh());
        let m_att = conv_apply(&a, &self.conv_b, 1)?;
        let q_att = dense_apply(f_q, &self.dense_q)?.map(|v| v.tanh());
        let mut s = m_att;
        for cell in 0..gh * gw {
            for (v, &q) in s.row_mut(cell).iter_mut().zip(q_att.data()) {
                *v = (*v + q).tanh();
            }
        }
        let logits = conv_apply(&s, &self.conv_out, 1)?;
        let p = Tensor::new(vec![gh, gw], logits.data().iter().map(|&z| sigmoid(z)).collect())?;
        let cache = AttentionCache {
            f_m: f_m.clone(),
            f_q: f_q.clone(),
            a,
            q_att,
            s,
            p: p.clone(),
        };
        Ok((p, cache))
    }

    /// Takes the gradient with respect to the pre-sigmoid logits and returns
    /// the gradient with respect to `f_q`. Feature maps are frozen inputs.
    pub fn backward(&mut self, cache: &AttentionCache<T>, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let s_shape = cache.s.shape().to_vec();
        let gz = grad_logits.clone().reshape(&[s_shape[0], s_shape[1], 1])?;
        let ds = conv_backward(&cache.s, &mut self.conv_out, &gz, 1, true)?.unwrap();
        let one = T::one();
        let mut d_sum = ds;
        for (g, &s) in d_sum.data_mut().iter_mut().zip(cache.s.data()) {
            *g *= one - s * s;
        }
        let dim = d_sum.last_dim();
        let mut dq_att = vec![T::zero(); dim];
        for cell in 0..d_sum.rows() {
            axpy(one, d_sum.row(cell), &mut dq_att);
        }
        let mut da = conv_backward(&cache.a, &mut self.conv_b, &d_sum, 1, true)?.unwrap();
        for (g, &a) in da.data_mut().iter_mut().zip(cache.a.data()) {
            *g *= one - a * a;
        }
        conv_backward(&cache.f_m, &mut self.conv_a, &da, 1, false)?;
        let dq_pre: Vec<T> = dq_att
            .iter()
            .zip(cache.q_att.data())
            .map(|(&g, &q)| g * (one - q * q))
            .collect();
        Ok(dense_backward(&cache.f_q, &mut self.dense_q, &Tensor::from_vec(dq_pre), true)?.unwrap())
    }

    pub fn cast<U: Scalar>(&self) -> AttentionLayer<U> {
        AttentionLayer {
            conv_a: self.conv_a.cast(),
            conv_b: self.conv_b.cast(),
            dense_q: self.dense_q.cast(),
            conv_out: self.conv_out.cast(),
        }
    }
}

impl<T> Parameterized<T> for AttentionLayer<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn ParamVisitor<T>) {
        v.param(&join(prefix, "conv_a"), &mut self.conv_a);
        v.param(&join(prefix, "conv_b"), &mut self.conv_b);
        v.param(&join(prefix, "dense_q"), &mut self.dense_q);
        v.param(&join(prefix, "conv_out"), &mut self.conv_out);
    }
}

/// One or two attention layers. With two, the second layer's question input
/// is `f_q + bridge(c)` where `c` is the average of `f_m` over cells weighted
/// by the first layer's map normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack<T = f32> {
    pub layers: Vec<AttentionLayer<T>>,
    /// `[C_m, q_dim]`, present iff there are two layers.
    pub bridge: Option<LayerParams<T>>,
}

#[derive(Debug, Clone)]
pub struct StackCache<T> {
    first: AttentionCache<T>,
    second: Option<SecondLayer<T>>,
}

#[derive(Debug, Clone)]
struct SecondLayer<T> {
    weights: Vec<T>,
    total: T,
    context: Tensor<T>,
    cache: AttentionCache<T>,
}

/// Intermediate values of the stacked pass, exposed for inspection.
#[derive(Debug, Clone)]
pub struct StackTrace<T> {
    pub first_map: Tensor<T>,
    pub weights: Vec<T>,
    pub context: Tensor<T>,
    pub bridged_question: Tensor<T>,
}

impl<T: Scalar> AttentionStack<T> {
    pub fn new<R: Rng + ?Sized>(
        depth: usize,
        channels: usize,
        q_dim: usize,
        hidden: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..depth).map(|_| AttentionLayer::new(channels, q_dim, hidden, dim, rng)).collect();
        let bridge = (depth > 1).then(|| LayerParams::glorot(&[channels, q_dim], rng));
        AttentionStack { layers, bridge }
    }

    pub fn forward(&self, f_m: &Tensor<T>, f_q: &Tensor<T>) -> Result<(Tensor<T>, StackCache<T>)> {
        let (p1, first) = self.layers[0].forward(f_m, f_q)?;
        if self.layers.len() == 1 {
            return Ok((p1, StackCache { first, second: None }));
        }
        let bridge = self.bridge.as_ref().ok_or_else(|| Error::Config("stacked attention without bridge".into()))?;
        let total = p1.sum();
        let weights: Vec<T> = p1.data().iter().map(|&p| p / total).collect();
        let channels = f_m.last_dim();
        let mut c = vec![T::zero(); channels];
        for (cell, &w) in weights.iter().enumerate() {
            axpy(w, f_m.row(cell), &mut c);
        }
        let context = Tensor::from_vec(c);
        let mut q2 = dense_apply(&context, bridge)?;
        q2.add_assign(f_q)?;
        let (p2, cache) = self.layers[1].forward(f_m, &q2)?;
        Ok((
            p2,
            StackCache {
                first,
                second: Some(SecondLayer {
                    weights,
                    total,
                    context,
                    cache,
                }),
            },
        ))
    }

    pub fn trace(&self, f_m: &Tensor<T>, f_q: &Tensor<T>) -> Result<Option<StackTrace<T>>> {
        let (_, cache) = self.forward(f_m, f_q)?;
        Ok(cache.second.map(|s| StackTrace {
            first_map: cache.first.p.clone(),
            weights: s.weights,
            bridged_question: s.cache.f_q.clone(),
            context: s.context,
        }))
    }

    pub fn backward(&mut self, cache: &StackCache<T>, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(second) = &cache.second else {
            return self.layers[0].backward(&cache.first, grad_logits);
        };
        let dq2 = self.layers[1].backward(&second.cache, grad_logits)?;
        let bridge = self.bridge.as_mut().expect("checked in forward");
        let dc = dense_backward(&second.context, bridge, &dq2, true)?.unwrap();
        let f_m = &cache.first.f_m;
        let dw: Vec<T> = (0..second.weights.len())
            .map(|cell| crate::tensor::dot(f_m.row(cell), dc.data()))
            .collect();
        let mean_term: T = second.weights.iter().zip(&dw).map(|(&w, &d)| w * d).sum();
        let one = T::one();
        let dz1: Vec<T> = cache
            .first
            .p
            .data()
            .iter()
            .zip(&dw)
            .map(|(&p, &d)| (d - mean_term) / second.total * p * (one - p))
            .collect();
        let dz1 = Tensor::new(cache.first.p.shape().to_vec(), dz1)?;
        let mut dq = self.layers[0].backward(&cache.first, &dz1)?;
        dq.add_assign(&dq2)?;
        Ok(dq)
    }

    pub fn cast<U: Scalar>(&self) -> AttentionStack<U> {
        AttentionStack {
            layers: self.layers.iter().map(AttentionLayer::cast).collect(),
            bridge: self.bridge.as_ref().map(LayerParams::cast),
        }
    }
}

impl<T> Parameterized<T> for AttentionStack<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn ParamVisitor<T>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit(&join(prefix, &format!("att{i}")), v);
        }
        if let Some(b) = &mut self.bridge {
            v.param(&join(prefix, "bridge"), b);
        }
    }
}
