//! Central finite-difference check of the analytic prompt gradients.

use crate::encoder::EncoderHandle;
use crate::error::Result;
use crate::lexicon::CounterfactualExample;
use crate::train::{loss_and_gradients, Model, TrainConfig};

/// Floor of the relative-error denominator, so entries whose true gradient
/// is numerically zero are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Number of prompt entries compared.
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(tensor, flat index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a − n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares the gradient of the total loss with respect to every prompt
/// parameter against the five-point central difference
/// `(−L(θ+2ε) + 8L(θ+ε) − 8L(θ−ε) + L(θ−2ε)) / 12ε`, in evaluation mode.
/// Its O(ε⁴) truncation error allows a step around 1e-3, which keeps the
/// round-off of tiny gradients well below the tolerance.
pub fn check_prompt_gradients(
    handle: &EncoderHandle,
    model: &Model,
    cfg: &TrainConfig,
    batch: &[CounterfactualExample],
    auxiliary: &[CounterfactualExample],
    eps: f64,
) -> Result<GradCheck> {
    let analytic = loss_and_gradients(handle, model, cfg, batch, auxiliary)?.gradients;
    let mut probe = model.clone();
    let mut out = GradCheck {
        checked: 0,
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let tensors = model.prompt.tensors().len();
    for t in 0..tensors {
        let len = model.prompt.tensors()[t].len();
        for k in 0..len {
            let orig = model.prompt.tensors()[t].data()[k];
            let mut at = |delta: f64| -> Result<f64> {
                probe.prompt.tensors_mut()[t].data_mut()[k] = orig + delta;
                Ok(loss_and_gradients(handle, &probe, cfg, batch, auxiliary)?.loss.total)
            };
            let numeric = (-at(2.0 * eps)? + 8.0 * at(eps)? - 8.0 * at(-eps)? + at(-2.0 * eps)?) / (12.0 * eps);
            probe.prompt.tensors_mut()[t].data_mut()[k] = orig;
            let a = analytic[t].data()[k];
            let err = relative_error(a, numeric);
            out.checked += 1;
            if err > out.max_rel_error {
                out = GradCheck {
                    max_rel_error: err,
                    worst: (t, k),
                    analytic: a,
                    numeric,
                    ..out
                };
            }
        }
    }
    Ok(out)
}
