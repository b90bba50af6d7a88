use crate::error::{Error, Result};
use crate::label::NUM_CLASSES;
use crate::tensor::Tensor;

/// Softmax cross-entropy of `logits` against class `label`.
///
/// Returns the loss `-ln softmax(logits)[label]` (log-sum-exp stabilized)
/// and its gradient `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    logits.expect_shape("softmax_cross_entropy", &[NUM_CLASSES])?;
    if label >= NUM_CLASSES {
        return Err(Error::Label(label));
    }
    let z = logits.data();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = z.iter().map(|&v| (v - max).exp()).sum();
    let log_sum_exp = max + sum_exp.ln();
    let loss = log_sum_exp - z[label];

    let mut grad = logits.map(|v| (v - log_sum_exp).exp());
    grad.data_mut()[label] -= 1.0;
    Ok((loss, grad))
}
