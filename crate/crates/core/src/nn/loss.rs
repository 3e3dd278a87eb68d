//! Loss functions returning the loss and its gradient w.r.t. the prediction.

use super::tensor::Tensor;
use crate::error::{AsdError, Result};

/// Row-wise softmax of `[N, K]` logits, clamped to the open interval (0, 1).
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.row_len();
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / sum).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)));
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// Summed cross entropy of row-wise softmax against class indices.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let k = logits.row_len();
    if logits.rows() != labels.len() || labels.iter().any(|&y| y >= k) {
        return Err(AsdError::Contract(format!(
            "{} labels for logits of shape {:?}",
            labels.len(),
            logits.shape()
        )));
    }
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, (&y, row)) in labels.iter().zip(logits.data().chunks_exact(k)).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        grad.data_mut()[i * k + y] -= 1.0;
    }
    Ok((loss, grad))
}

/// Mean over all elements of the squared error.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    target.expect_shape(pred.shape(), "mse target")?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}
