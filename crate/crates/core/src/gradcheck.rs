//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::nn::{for_each_param, zero_grads, Parameterized};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is below finite-difference resolution are judged by absolute
/// error (at most `1e-4 * RELATIVE_FLOOR` under the usual tolerance).
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter (`name.weight[i]` / `name.bias[i]`) with the worst error.
    pub worst: String,
    /// Analytic and finite-difference values at `worst`.
    pub worst_values: (f64, f64),
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares every parameter coordinate's analytic gradient against
/// `(L(w + h) - L(w - h)) / 2h`.
///
/// `loss(model, backward)` must return the scalar loss and, when `backward`
/// is set, accumulate gradients into the (pre-zeroed) parameters. It must be
/// deterministic: any randomness has to be re-seeded on every call.
pub fn grad_check<M, F>(model: &mut M, mut loss: F, step: f64) -> Result<GradCheckReport>
where
    M: Parameterized<f64>,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    grad_check_terms(model, |m: &mut M, backward| Ok(vec![loss(m, backward)?]), step)
}

/// Like [`grad_check`] for a loss that is a sum of terms. The closure returns
/// the terms; differences are taken term by term before summing, which keeps
/// rounding in a large total out of the finite difference.
pub fn grad_check_terms<M, F>(model: &mut M, mut loss: F, step: f64) -> Result<GradCheckReport>
where
    M: Parameterized<f64>,
    F: FnMut(&mut M, bool) -> Result<Vec<f64>>,
{
    zero_grads(model);
    let base = loss(model, true)?;
    if base.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("loss is not finite at the unperturbed point".into()));
    }
    let mut analytic: Vec<(String, Vec<f64>, usize)> = Vec::new();
    for_each_param(model, |name, p| {
        let mut g = p.grad_weight.data().to_vec();
        g.extend_from_slice(p.grad_bias.data());
        analytic.push((name.to_string(), g, p.weight.len()));
    });

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        worst_values: (0.0, 0.0),
        coordinates: 0,
    };
    for (target, (name, grads, n_weight)) in analytic.iter().enumerate() {
        for (coord, &a) in grads.iter().enumerate() {
            let original = set_coord(model, target, coord, None);
            set_coord(model, target, coord, Some(original + step));
            let plus = loss(model, false)?;
            set_coord(model, target, coord, Some(original - step));
            let minus = loss(model, false)?;
            set_coord(model, target, coord, Some(original));
            if plus.len() != minus.len() || plus.iter().chain(&minus).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite loss perturbing {name}[{coord}]")));
            }
            let numeric = plus.iter().zip(&minus).map(|(p, m)| p - m).sum::<f64>() / (2.0 * step);
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_relative_error || report.worst.is_empty() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst_values = (a, numeric);
                report.worst = if coord < *n_weight {
                    format!("{name}.weight[{coord}]")
                } else {
                    format!("{name}.bias[{}]", coord - n_weight)
                };
            }
        }
    }
    zero_grads(model);
    Ok(report)
}

/// Reads coordinate `coord` of the `target`-th parameter, optionally writing
/// a new value. Returns the value before the write.
fn set_coord<M: Parameterized<f64>>(model: &mut M, target: usize, coord: usize, value: Option<f64>) -> f64 {
    let mut idx = 0;
    let mut old = f64::NAN;
    for_each_param(model, |_, p| {
        if idx == target {
            let nw = p.weight.len();
            let slot = if coord < nw {
                &mut p.weight.data_mut()[coord]
            } else {
                &mut p.bias.data_mut()[coord - nw]
            };
            old = *slot;
            if let Some(v) = value {
                *slot = v;
            }
        }
        idx += 1;
    });
    old
}
