use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::{evaluate, train_step, AdamState, ComputeGraph};
use crate::blocks::{build_model, ModelSpec};
use crate::data::{BatchIterator, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Rng;

use super::specfile::{spec_hash, TrainConfig};

const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Sample-weighted means over the epoch's training batches.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub spec_hash: String,
    pub steps: usize,
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    /// Inference-mode accuracy on the full training split after training.
    pub final_train_accuracy: f64,
    pub final_test_accuracy: Option<f64>,
    pub wall_time_s: f64,
}

impl RunRecord {
    /// Test accuracy when a test split was supplied, train accuracy otherwise.
    pub fn final_accuracy(&self) -> f64 {
        self.final_test_accuracy.unwrap_or(self.final_train_accuracy)
    }
}

struct EpochAcc {
    epoch: usize,
    steps: usize,
    loss: f64,
    correct: f64,
    samples: usize,
}

impl EpochAcc {
    fn new(epoch: usize) -> Self {
        EpochAcc {
            epoch,
            steps: 0,
            loss: 0.0,
            correct: 0.0,
            samples: 0,
        }
    }

    fn finish(&self) -> EpochRecord {
        EpochRecord {
            epoch: self.epoch,
            steps: self.steps,
            loss: self.loss / self.samples as f64,
            accuracy: self.correct / self.samples as f64,
        }
    }
}

/// Trains one seed. The seed fixes parameter initialization, batch order and
/// dropout masks, so equal inputs give bit-identical records (wall time aside).
pub fn train_seed(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    seed: u64,
) -> Result<(RunRecord, ComputeGraph)> {
    let start = Instant::now();
    let mut root = Rng::new(seed);
    let mut graph = build_model(spec, &mut root.fork())?;
    let mut dropout_rng = root.fork();
    let mut batches = BatchIterator::new(train, cfg.batch_size, root.next_u64())?;
    let mut adam = AdamState::new(cfg.adam, graph.params());

    let total = cfg.epochs * batches.batches_per_epoch();
    let total = cfg.max_steps.map_or(total, |m| m.min(total));
    let mut epochs = Vec::new();
    let mut step_losses = Vec::with_capacity(total);
    let mut acc = EpochAcc::new(0);
    for step in 0..total {
        let batch = batches.next_batch();
        if batches.epoch() != acc.epoch {
            epochs.push(acc.finish());
            acc = EpochAcc::new(batches.epoch());
        }
        let m = train_step(&mut graph, &mut adam, &batch.images, &batch.labels, &mut dropout_rng)?;
        if !m.loss.is_finite() {
            return Err(Error::NonFinite { step, loss: m.loss });
        }
        step_losses.push(m.loss);
        acc.steps += 1;
        acc.loss += m.loss * m.samples as f64;
        acc.correct += m.accuracy * m.samples as f64;
        acc.samples += m.samples;
    }
    if acc.samples > 0 {
        epochs.push(acc.finish());
    }

    let (train_m, _) = evaluate(&mut graph, &train.images, &train.labels, EVAL_BATCH)?;
    let test_acc = match test {
        Some(t) => Some(evaluate(&mut graph, &t.images, &t.labels, EVAL_BATCH)?.0.accuracy),
        None => None,
    };
    Ok((
        RunRecord {
            seed,
            spec_hash: spec_hash(spec),
            steps: total,
            epochs,
            step_losses,
            final_train_accuracy: train_m.accuracy,
            final_test_accuracy: test_acc,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        graph,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub std: f64,
    pub values: Vec<f64>,
}

impl AccuracyStats {
    pub fn from_values(values: Vec<f64>) -> AccuracyStats {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        AccuracyStats { mean, std, values }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: String,
    pub spec_hash: String,
    pub seeds: Vec<u64>,
    pub final_accuracy: AccuracyStats,
    pub final_train_accuracy: AccuracyStats,
    /// Seeds that aborted, with the reason.
    pub failed: Vec<(u64, String)>,
}
