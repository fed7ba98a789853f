use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch. `logits` is `(N, K, 1, 1)`
/// (any per-sample layout with `K` values works). Returns the loss and the
/// softmax probabilities.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let s = logits.shape();
    let k = s.floats_out();
    if labels.len() != s.batch {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {}",
            labels.len(),
            s.batch
        )));
    }
    let mut probs = logits.clone();
    let mut loss = 0.0;
    for (row, &label) in probs.data_mut().chunks_mut(k).zip(labels) {
        if label >= k {
            return Err(Error::Param(format!("label {label} out of range for {k} classes")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted_label = row[label] - max;
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
        // -log softmax = log z - (x_label - max)
        loss += z.ln() - shifted_label;
    }
    Ok((loss / s.batch as f64, probs))
}

/// Gradient of the mean loss w.r.t. the logits: `(probs - onehot) / N`.
pub fn softmax_cross_entropy_grad(probs: &Tensor, labels: &[usize]) -> Tensor {
    let s = probs.shape();
    let k = s.floats_out();
    let scale = 1.0 / s.batch as f64;
    let mut g = probs.clone();
    for (row, &label) in g.data_mut().chunks_mut(k).zip(labels) {
        row[label] -= 1.0;
        row.iter_mut().for_each(|v| *v *= scale);
    }
    g
}
