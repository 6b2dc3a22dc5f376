//! Softmax cross-entropy.

use crate::error::{Error, Result};

/// Numerically stable softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy loss for one sample: `-log softmax(logits)[label]`,
/// with gradient `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f32], label: usize) -> Result<(f32, Vec<f32>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange { label, num_classes: logits.len() });
    }
    let probs = softmax(logits);
    let loss = -(probs[label].max(f32::MIN_POSITIVE)).ln();
    let mut grad = probs;
    grad[label] -= 1.0;
    Ok((loss, grad))
}
