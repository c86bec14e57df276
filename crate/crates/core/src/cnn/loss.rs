//! Binary cross-entropy over batch probabilities.

use super::layers::PROB_CLAMP;
use super::tensor::{Tensor, TensorError};

/// Mean binary cross-entropy and its gradient w.r.t. the probabilities.
///
/// Probabilities are clamped to `[1e-7, 1 - 1e-7]` before the logarithms;
/// labels must be 0 or 1. The gradient carries the `1/B` mean scaling.
pub fn bce_loss(probs: &Tensor, labels: &Tensor) -> Result<(f32, Tensor), TensorError> {
    if probs.shape() != labels.shape() || probs.rank() != 2 || probs.shape()[1] != 1 {
        return Err(TensorError::ShapeMismatch {
            got: probs.shape().to_vec(),
            want: format!("labels shape {:?}, both B×1", labels.shape()),
        });
    }
    let b = probs.shape()[0] as f64;
    let mut loss = 0.0f64;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.data().iter().zip(labels.data()) {
        debug_assert!(y == 0.0 || y == 1.0, "labels must be binary");
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= (y as f64) * (pc as f64).ln() + (1.0 - y as f64) * (1.0 - pc as f64).ln();
        grad.push((-y / pc + (1.0 - y) / (1.0 - pc)) / b as f32);
    }
    let grad = Tensor::from_vec(probs.shape(), grad)?;
    Ok(((loss / b) as f32, grad))
}
