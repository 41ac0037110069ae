//! Categorical cross-entropy with the fused softmax adjoint.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probability floor that keeps the loss finite for confident mistakes.
pub const PROB_FLOOR: f64 = 1e-12;

/// Loss `-log(probs[target])` (floored at 1e-12) and the gradient with
/// respect to the pre-softmax logits, `probs - onehot(target)`.
pub fn cross_entropy(probs: &Tensor, target: usize) -> Result<(f64, Tensor)> {
    if probs.rank() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "probs must be rank-1, got {:?}",
            probs.shape()
        )));
    }
    if target >= probs.len() {
        return Err(Error::Domain(format!(
            "target {target} out of range for {} classes",
            probs.len()
        )));
    }
    let loss = -probs.data()[target].max(PROB_FLOOR).ln();
    let grad = Tensor::from_vec(
        probs.shape(),
        probs
            .data()
            .iter()
            .enumerate()
            .map(|(i, &p)| if i == target { p - 1.0 } else { p })
            .collect(),
    )?;
    Ok((loss, grad))
}
