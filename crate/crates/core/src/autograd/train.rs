use crate::error::{Error, Result};
use crate::ops::{softmax_cross_entropy, softmax_cross_entropy_grad, Mode};
use crate::tensor::{Rng, Tensor};

use super::{AdamState, ComputeGraph};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub samples: usize,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predictions(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape().floats_out();
    logits.data().chunks(k).map(argmax).collect()
}

/// Forward in train mode, softmax cross-entropy, backward, one Adam update.
pub fn train_step(
    graph: &mut ComputeGraph,
    adam: &mut AdamState,
    images: &Tensor,
    labels: &[usize],
    rng: &mut Rng,
) -> Result<StepMetrics> {
    let logits = graph.forward(images, Mode::Train, rng)?;
    let (loss, probs) = softmax_cross_entropy(logits, labels)?;
    let correct = predictions(logits).iter().zip(labels).filter(|(p, l)| p == l).count();
    let grads = graph.backward(&softmax_cross_entropy_grad(&probs, labels))?;
    graph.clear_tape();
    let mut params = graph.params_mut();
    adam.step(&mut params, &grads.params)?;
    Ok(StepMetrics {
        loss,
        accuracy: correct as f64 / labels.len() as f64,
        samples: labels.len(),
    })
}

/// Inference-mode pass over a dataset in chunks of `batch_size`. Returns the
/// mean loss, accuracy, and per-sample predictions.
pub fn evaluate(
    graph: &mut ComputeGraph,
    images: &Tensor,
    labels: &[usize],
    batch_size: usize,
) -> Result<(StepMetrics, Vec<usize>)> {
    let n = images.shape().batch;
    if labels.len() != n || batch_size == 0 {
        return Err(Error::Shape(format!(
            "evaluate: {n} images, {} labels, batch {batch_size}",
            labels.len()
        )));
    }
    let mut rng = Rng::new(0);
    let mut total_loss = 0.0;
    let mut preds = Vec::with_capacity(n);
    for start in (0..n).step_by(batch_size) {
        let idx: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let x = images.gather_samples(&idx)?;
        let logits = graph.forward(&x, Mode::Infer, &mut rng)?;
        let (loss, _) = softmax_cross_entropy(logits, &labels[idx[0]..idx[0] + idx.len()])?;
        total_loss += loss * idx.len() as f64;
        preds.extend(predictions(logits));
    }
    graph.clear_tape();
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok((
        StepMetrics {
            loss: total_loss / n as f64,
            accuracy: correct as f64 / n as f64,
            samples: n,
        },
        preds,
    ))
}
