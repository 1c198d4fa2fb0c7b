//! Central finite-difference check of the batch loss gradient.

use crate::encoder::EncoderParams;
use crate::error::Result;

use super::{batch_loss, batch_loss_and_grad, Batch, LossKind};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor so that near-zero gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: &'static str,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compare every analytic partial with `(L(p + h) - L(p - h)) / 2h`.
pub fn gradient_check(
    params: &EncoderParams,
    batch: &Batch,
    temperature: f64,
    kind: LossKind,
    step: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = batch_loss_and_grad(params, batch, temperature, kind)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: "",
        worst_index: 0,
        checked: 0,
    };
    let mut probe = params.clone();
    for (t, (name, _, analytic)) in grads.tensors().into_iter().enumerate() {
        for (i, &a) in analytic.iter().enumerate() {
            let original = probe.weights.tensors()[t].2[i];
            probe.weights.tensors_mut()[t].2[i] = original + step;
            let plus = batch_loss(&probe, batch, temperature, kind)?;
            probe.weights.tensors_mut()[t].2[i] = original - step;
            let minus = batch_loss(&probe, batch, temperature, kind)?;
            probe.weights.tensors_mut()[t].2[i] = original;
            let err = relative_error(a, (plus - minus) / (2.0 * step));
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_tensor = name;
                report.worst_index = i;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
