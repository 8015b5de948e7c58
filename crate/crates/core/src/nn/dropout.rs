use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::Mode;

/// Inverted dropout. The returned mask holds the per-value multiplier
/// (`0` or `1 / (1 - rate)`) and is `None` whenever the layer is the identity.
#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub mask: Option<Tensor<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn backward(&self, grad_out: &Tensor<T>) -> Tensor<T> {
        match &self.mask {
            None => grad_out.clone(),
            Some(m) => {
                let data = grad_out.data().iter().zip(m.data()).map(|(&g, &k)| g * k).collect();
                Tensor::new(grad_out.shape().to_vec(), data).expect("same shape")
            }
        }
    }
}

pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Dropout<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), Dropout { mask: None }));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask = Tensor::from_fn(x.shape(), |_| {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    });
    let data = x.data().iter().zip(mask.data()).map(|(&v, &k)| v * k).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Dropout { mask: Some(mask) }))
}
