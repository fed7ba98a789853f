use crate::error::{Error, Result};
use crate::tensor::{Rng, Shape4, Tensor};

use super::{Dataset, Split};

const BLOBS_PER_CHANNEL: usize = 2;
const BACKGROUND: f64 = 0.3;

/// One template per class: a `BACKGROUND` level plus a few Gaussian bumps per
/// channel, clamped to `[0, 1]`.
fn templates(rng: &mut Rng, classes: usize, sample: Shape4) -> Vec<Vec<f64>> {
    let (h, w) = (sample.height as f64, sample.width as f64);
    (0..classes)
        .map(|_| {
            let mut t = vec![BACKGROUND; sample.floats_out()];
            for c in 0..sample.channels {
                for _ in 0..BLOBS_PER_CHANNEL {
                    let cy = rng.uniform(0.0, h);
                    let cx = rng.uniform(0.0, w);
                    let sigma = rng.uniform(0.1, 0.2) * h.max(w);
                    let amp = rng.uniform(0.3, 0.6);
                    for y in 0..sample.height {
                        for x in 0..sample.width {
                            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                            t[(c * sample.height + y) * sample.width + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                        }
                    }
                }
            }
            t.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            t
        })
        .collect()
}

/// Class-conditional blob images for one split. Both splits share the
/// templates drawn from `seed`; their noise streams differ. Sample `i` has
/// label `i % classes`, so classes are balanced to within one sample. Noise
/// is Gaussian with standard deviation `difficulty`, and pixels are clamped
/// to `[0, 1]`.
pub fn synthesize_split(
    seed: u64,
    n: usize,
    classes: usize,
    sample: [usize; 3],
    difficulty: f64,
    split: Split,
) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::Param(format!(
            "need n >= classes > 0, got n={n}, classes={classes}"
        )));
    }
    if !(difficulty >= 0.0 && difficulty.is_finite()) {
        return Err(Error::Param(format!("difficulty {difficulty} must be finite and >= 0")));
    }
    let shape = Shape4::new(n, sample[0], sample[1], sample[2])?;
    let mut rng = Rng::new(seed);
    let tpl = templates(&mut rng, classes, shape.with_batch(1));
    let train_noise = rng.fork();
    let mut noise = match split {
        Split::Train => train_noise,
        Split::Test => rng.fork(),
    };
    let mut data = Vec::with_capacity(shape.len());
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for &l in &labels {
        for &t in &tpl[l] {
            let v = if difficulty > 0.0 {
                t + difficulty * noise.normal()
            } else {
                t
            };
            data.push(v.clamp(0.0, 1.0));
        }
    }
    Dataset::new(Tensor::from_vec(shape, data)?, labels, classes, split)
}

/// Training split of [`synthesize_split`].
pub fn synthesize_dataset(seed: u64, n: usize, classes: usize, sample: [usize; 3], difficulty: f64) -> Result<Dataset> {
    synthesize_split(seed, n, classes, sample, difficulty, Split::Train)
}
