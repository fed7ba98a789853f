//! Datasets: loading from IDX, CSV and raw NCHW containers, normalization,
//! seeded batching and synthetic Gaussian-blob data.

mod batch;
mod formats;
mod normalize;
mod synth;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

pub use batch::{Batch, BatchIterator};
pub use formats::{
    read_idx_images, read_idx_labels, read_raw_labels, read_raw_nchw, write_raw_labels, write_raw_nchw, RawArray,
    RawDtype,
};
pub use normalize::{denormalize, normalize, NormSource, NormStats, STD_FLOOR};
pub use synth::{synthesize_dataset, synthesize_split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize, split: Split) -> Result<Dataset> {
        let n = images.shape().batch;
        if labels.len() != n {
            return Err(Error::Shape(format!("{n} images but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Param(format!("label {bad} not below class count {class_count}")));
        }
        if !images.is_finite() {
            return Err(Error::Param("dataset contains non-finite values".into()));
        }
        Ok(Dataset {
            images,
            labels,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one sample (batch 1).
    pub fn sample_shape(&self) -> Shape4 {
        self.images.shape().with_batch(1)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// Where a dataset lives on disk.
#[derive(Clone, Debug)]
pub enum Source {
    /// Big-endian IDX image file (`0x803` for `N,H,W` or `0x804` for
    /// `N,C,H,W`, unsigned bytes) plus an IDX label file (`0x801`).
    IdxPair { images: PathBuf, labels: PathBuf },
    /// Header-free rows `label,p0,p1,...` of 0..=255 pixels in CHW order.
    Csv { path: PathBuf, sample: [usize; 3] },
    /// Raw NCHW container plus a little-endian `u32` label file. Values are
    /// taken as already scaled.
    RawNchw { images: PathBuf, labels: PathBuf },
}

/// Loads a split. Byte-valued formats are scaled to `[0, 1]`.
pub fn load_dataset(source: &Source, class_count: usize, split: Split) -> Result<Dataset> {
    let (images, labels) = match source {
        Source::IdxPair { images, labels } => {
            let x = read_idx_images(images)?;
            let y = read_idx_labels(labels, class_count)?;
            (x, y)
        }
        Source::Csv { path, sample } => formats::read_csv(path, *sample, class_count)?,
        Source::RawNchw { images, labels } => {
            let raw = read_raw_nchw(images)?;
            let [n, c, h, w] = raw.dims;
            let x = Tensor::from_vec(Shape4::new(n, c, h, w)?, raw.values)?;
            if !x.is_finite() {
                return Err(Error::format(images, "payload contains non-finite values"));
            }
            (x, read_raw_labels(labels, class_count)?)
        }
    };
    if images.shape().batch != labels.len() {
        return Err(Error::Shape(format!(
            "{} images but {} labels",
            images.shape().batch,
            labels.len()
        )));
    }
    Dataset::new(images, labels, class_count, split)
}

/// Writes `ds` as a raw NCHW `f64` container plus label file; reloading
/// yields a bit-identical dataset.
pub fn save_raw(ds: &Dataset, images: &std::path::Path, labels: &std::path::Path) -> Result<()> {
    write_raw_nchw(images, ds.images.shape().as_array(), ds.images.data(), RawDtype::F64)?;
    write_raw_labels(labels, &ds.labels)
}
