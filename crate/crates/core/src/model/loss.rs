use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-7;

/// Binary cross-entropy summed over every cell of the map.
pub fn bce_loss<T: Scalar>(p: &Tensor<T>, g: &Tensor<T>) -> Result<T> {
    Ok(T::of(bce_terms(p, g)?.iter().sum()))
}

/// Per-cell cross-entropy terms in row-major order.
pub fn bce_terms<T: Scalar>(p: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<f64>> {
    if p.shape() != g.shape() {
        return Err(Error::dim("bce_loss", p.shape(), g.shape()));
    }
    Ok(p.data()
        .iter()
        .zip(g.data())
        .map(|(&p, &g)| {
            let p = p.as_f64().clamp(CLAMP, 1.0 - CLAMP);
            let g = g.as_f64();
            -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
        })
        .collect())
}

/// Gradient of [`bce_loss`] with respect to the logits of a sigmoid output:
/// `p - g` per cell.
pub fn bce_grad_logits<T: Scalar>(p: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    if p.shape() != g.shape() {
        return Err(Error::dim("bce_grad_logits", p.shape(), g.shape()));
    }
    let data = p.data().iter().zip(g.data()).map(|(&p, &g)| p - g).collect();
    Tensor::new(p.shape().to_vec(), data)
}
