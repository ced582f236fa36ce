use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// Probabilities are clamped to this before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor2D) -> Tensor2D {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    p
}

/// Mean pointwise categorical cross-entropy and its gradient with respect to
/// the logits, `(softmax - one_hot) / n`.
pub fn softmax_cross_entropy(logits: &Tensor2D, labels: &[usize]) -> Result<(f64, Tensor2D)> {
    let (n, classes) = logits.shape();
    if n == 0 {
        return Err(Error::InvalidInput("cross-entropy over zero points".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::InvalidInput(format!(
            "point {i} has label {l}, outside [0, {classes})"
        )));
    }
    let mut grad = softmax(logits);
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        loss -= row[label].max(PROB_FLOOR).ln();
        row[label] -= 1.0;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((loss * inv, grad))
}
