use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

use super::Dataset;

pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Endless stream of shuffled mini-batches. Each epoch is a fresh
/// permutation drawn from the iterator's own seeded stream; the final batch of
/// an epoch may be short.
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    rng: Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || dataset.is_empty() {
            return Err(Error::Param(format!(
                "batch size {batch_size} over {} samples",
                dataset.len()
            )));
        }
        let mut rng = Rng::new(seed);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        rng.shuffle(&mut order);
        Ok(BatchIterator {
            dataset,
            batch_size,
            rng,
            order,
            cursor: 0,
            epoch: 0,
        })
    }

    /// Completed epochs so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.dataset.len().div_ceil(self.batch_size)
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.cursor == self.order.len() {
            self.order = (0..self.dataset.len()).collect();
            self.rng.shuffle(&mut self.order);
            self.cursor = 0;
            self.epoch += 1;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        idx
    }

    pub fn next_batch(&mut self) -> Batch {
        let indices = self.next_indices();
        let images = self
            .dataset
            .images
            .gather_samples(&indices)
            .expect("indices come from the dataset's own range");
        let labels = indices.iter().map(|&i| self.dataset.labels[i]).collect();
        Batch {
            indices,
            images,
            labels,
        }
    }
}
