use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, Split};

/// Lower bound applied to every per-channel standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub enum NormSource<'a> {
    /// Per-channel mean and population std of this (training) split.
    Compute,
    Given(&'a NormStats),
}

fn channel_stats(ds: &Dataset) -> NormStats {
    let s = ds.images.shape();
    let count = (s.batch * s.plane()) as f64;
    let mut mean = vec![0.0; s.channels];
    let mut std = vec![0.0; s.channels];
    for c in 0..s.channels {
        let m = (0..s.batch)
            .map(|n| ds.images.plane(n, c).iter().sum::<f64>())
            .sum::<f64>()
            / count;
        let var = (0..s.batch)
            .map(|n| ds.images.plane(n, c).iter().map(|v| (v - m) * (v - m)).sum::<f64>())
            .sum::<f64>()
            / count;
        mean[c] = m;
        std[c] = var.sqrt().max(STD_FLOOR);
    }
    NormStats { mean, std }
}

fn affine(ds: &Dataset, f: impl Fn(usize, f64) -> f64) -> Dataset {
    let s = ds.images.shape();
    let mut out = ds.clone();
    let plane = s.plane();
    for (i, chunk) in out.images.data_mut().chunks_mut(plane).enumerate() {
        let c = i % s.channels;
        for v in chunk {
            *v = f(c, *v);
        }
    }
    out
}

/// `(x - mean) / std` per channel. Computing statistics is only allowed on
/// the training split; the returned stats are meant for reuse on test data.
pub fn normalize(ds: &Dataset, source: NormSource<'_>) -> Result<(Dataset, NormStats)> {
    let channels = ds.images.shape().channels;
    let stats = match source {
        NormSource::Compute => {
            if ds.split != Split::Train {
                return Err(Error::State(
                    "normalization statistics must come from the training split".into(),
                ));
            }
            channel_stats(ds)
        }
        NormSource::Given(s) => {
            if s.mean.len() != channels || s.std.len() != channels {
                return Err(Error::Shape(format!(
                    "stats for {} channels, dataset has {channels}",
                    s.mean.len()
                )));
            }
            NormStats {
                mean: s.mean.clone(),
                std: s.std.iter().map(|v| v.max(STD_FLOOR)).collect(),
            }
        }
    };
    let out = affine(ds, |c, v| (v - stats.mean[c]) / stats.std[c]);
    Ok((out, stats))
}

pub fn denormalize(ds: &Dataset, stats: &NormStats) -> Result<Dataset> {
    if stats.mean.len() != ds.images.shape().channels {
        return Err(Error::Shape("stats channel count mismatch".into()));
    }
    Ok(affine(ds, |c, v| v * stats.std[c] + stats.mean[c]))
}
